#include <doctest.h>

#include <chrono>

#include "dfm/error.hpp"
#include "dfm/verify.hpp"
#include "helpers.hpp"

using namespace dfm;

namespace {

const std::vector<double> kDts{0.1, 0.05, 0.025, 0.0125};
const StateSpace kSweep{3, 3, false};

std::vector<double> random_reward(const StateSpace& s, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> r(s.size());
  for (double& v : r) v = uniform01(rng);
  return r;
}

}  // namespace

TEST_CASE("log-log fit") {
  const std::vector<double> x{1, 2, 4, 8}, y{3, 6, 12, 24};
  const LineFit f = fit_loglog(x, y);
  CHECK(f.slope == doctest::Approx(1.0));
  CHECK(f.intercept == doctest::Approx(std::log(3.0)));
  CHECK(f.slope_stderr == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_THROWS_AS(fit_loglog(std::vector<double>{1}, std::vector<double>{1}), Error);
}

TEST_CASE("value sweep examples") {
  const StateSpace two{1, 2, false};
  const auto p0 = DistributionTable::point_mass(two, SequenceState({1}));
  const std::vector<double> r{0.0, 1.0};
  const SweepReport zero = discretization_value_sweep(testutil::zero_rates(two), p0, r, 1.0, kDts);
  for (const auto& row : zero.rows) CHECK(row.error == 0.0);
  CHECK(zero.pass);

  const SweepReport chain = discretization_value_sweep(testutil::two_state(1.0, 0.0), p0, r, 1.0, kDts);
  CHECK(chain.rows[0].error == doctest::Approx(0.0192).epsilon(1e-4 / 0.0192));
  CHECK(chain.rows[1].error == doctest::Approx(0.0094).epsilon(1e-4 / 0.0094));
  CHECK(chain.pass);
  CHECK(chain.slope == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("value sweep on random bounded-rate models") {
  // err/dt must settle to a constant. The 4-point slope alone can sit outside
  // [0.9, 1.1] when the reward nearly cancels the first-order error term.
  const std::vector<double> dts{0.1, 0.05, 0.025, 0.0125, 0.00625, 0.003125};
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const BoundedRateModel bm = BoundedRateModel::random(kSweep, 1.0, seed);
    const SweepReport rep = discretization_value_sweep(bm.rates(), DistributionTable::uniform(kSweep),
                                                       random_reward(kSweep, seed), 1.0, dts);
    const auto& rows = rep.rows;
    const double c_fine = rows[5].error / rows[5].x;
    const double c_prev = rows[4].error / rows[4].x;
    CHECK(c_fine > 0.0);
    CHECK(std::abs(c_fine - c_prev) <= 0.05 * c_fine);
    for (const auto& row : rows) CHECK(row.error <= 1.1 * c_fine * row.x);
  }
}

TEST_CASE("forward-mode gradients match finite differences of the push-forward") {
  const StateSpace s{2, 3, false};
  BoundedRateModel bm = BoundedRateModel::random(s, 1.0, 5);
  const auto p0 = DistributionTable::point_mass(s, SequenceState({1, 2}));
  const auto r = random_reward(s, 5);
  const TimeGrid grid(1.0, 0.1);
  for (KernelForm form : {KernelForm::factorized, KernelForm::joint}) {
    const ValueGradient g = euler_value_gradient(bm, p0, r, grid, form);
    CHECK(g.value == doctest::Approx(push_forward_euler(bm.rates(), p0, grid, KernelMode::strict, form).expect(r)).epsilon(1e-12));
    for (std::size_t k = 0; k < g.grad.size(); k += 3) {
      const double fd = testutil::central_diff(bm.model, k, 1e-5, [&](const PosteriorModel&) {
        return push_forward_euler(bm.rates(), p0, grid, KernelMode::strict, form).expect(r);
      });
      CHECK(std::abs(g.grad[k] - fd) <= 1e-8 + 1e-5 * std::abs(fd));
    }
  }
  const ValueGradient c = continuous_value_gradient(bm, p0, r, 1.0, 2000);
  CHECK(c.value == doctest::Approx(kolmogorov_exact(bm.rates(), p0, 1.0, 20000).expect(r)).epsilon(1e-9));
  for (std::size_t k = 0; k < c.grad.size(); k += 5) {
    const double fd = testutil::central_diff(bm.model, k, 1e-4, [&](const PosteriorModel&) {
      return continuous_value_gradient(bm, p0, r, 1.0, 500).value;
    });
    CHECK(std::abs(c.grad[k] - fd) <= 1e-7 + 1e-5 * std::abs(fd));
  }
}

TEST_CASE("gradient sweep") {
  const auto p0 = DistributionTable::uniform(kSweep);
  SUBCASE("constant reward has zero gradient") {
    const BoundedRateModel bm = BoundedRateModel::random(kSweep, 1.0, 3);
    const std::vector<double> ones(kSweep.size(), 1.0);
    const SweepReport rep = discretization_grad_sweep(bm, p0, ones, 1.0, kDts, KernelForm::factorized, 500);
    for (const auto& row : rep.rows) CHECK(row.error < 1e-13);
    CHECK(rep.pass);
  }
  SUBCASE("first-order convergence, both recursions") {
    const BoundedRateModel bm = BoundedRateModel::random(kSweep, 1.0, 4);
    for (KernelForm form : {KernelForm::factorized, KernelForm::joint}) {
      const SweepReport rep = discretization_grad_sweep(bm, p0, random_reward(kSweep, 4), 1.0, kDts, form);
      MESSAGE(format_report(rep));
      CHECK(rep.pass);
      CHECK(std::stod(rep.extra[0].second) < 1e-8);  // reference drift
    }
  }
}

TEST_CASE("TV bound sweep") {
  const StateSpace s{2, 3, true};
  PosteriorModel ref = PosteriorModel::tabular(s, 1.0, {4, 0});
  testutil::randomize(ref, 1);
  const InferenceSpec spec(Scheduler(), TimeGrid(1.0, 0.02), KernelMode::strict);
  TvSweepOptions o;
  o.directions = 5;
  for (RegKind kind : {RegKind::ce, RegKind::gkl}) {
    const SweepReport rep = tv_bound_sweep(ref, spec, kind, o);
    MESSAGE(rep.name, " slope=", rep.slope, " C=", rep.extra[0].second);
    CHECK(rep.pass);
    CHECK(rep.slope <= 0.6);
  }
  // zero perturbation
  const auto states = exact_reference_states(ref, spec);
  CHECK(gkl_regularizer(ref, ref, spec.sched, states) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(tv_distance(terminal_distribution(ref, spec), terminal_distribution(ref, spec)) == 0.0);
}

TEST_CASE("trajectory enumeration and the estimator oracle") {
  const StateSpace s{2, 2, true};
  PosteriorModel m = PosteriorModel::tabular(s, 1.0, {2, 0});
  testutil::randomize(m, 3);
  const InferenceSpec spec(Scheduler(), TimeGrid(1.0, 0.25));
  const RewardFn reward = table_reward(StateSpace{2, 2, false}, {0.1, 1.0, 0.4, 0.7});
  double total = 0.0;
  std::size_t count = 0;
  enumerate_trajectories(m, spec, {}, [&](const std::vector<SequenceState>& path, const SequenceState&, double p) {
    CHECK(path.size() == 5u);
    total += p;
    ++count;
  });
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(count > 10u);
  CHECK_THROWS_AS(enumerate_trajectories(m, InferenceSpec(Scheduler(), TimeGrid(1.0, 0.1)), {},
                                         [](const std::vector<SequenceState>&, const SequenceState&, double) {}),
                  NotEnumerableError);

  const EstimatorReport rep = estimator_oracle_check(m, spec, reward, 20000, 5);
  CHECK(std::abs(rep.j_rl - rep.j) < 1e-10);
  CHECK(rep.cosine > 0.98);
  CHECK(rep.ppo_value == doctest::Approx(rep.ppo_expected).epsilon(1e-12));

  // exact policy gradient agrees with finite differences of J
  std::vector<double> r(s.size(), 0.0);
  const auto states = enumerate_states(s);
  for (std::size_t j = 0; j < states.size(); ++j) {
    if (states[j][0] <= 2 && states[j][1] <= 2) r[j] = reward(states[j]);
  }
  for (std::size_t k = 0; k < rep.exact_grad.size(); ++k) {
    const double fd = testutil::central_diff(m, k, 1e-5, [&](const PosteriorModel& mm) {
      return terminal_distribution(mm, spec).expect(r);
    });
    CHECK(std::abs(rep.exact_grad[k] - fd) <= 1e-8 + 1e-5 * std::abs(fd));
  }
}

TEST_CASE("sampler oracle check") {
  PosteriorModel m = PosteriorModel::tabular({2, 3, true}, 1.0, {2, 0});
  testutil::randomize(m, 2);
  const InferenceSpec spec(Scheduler(), TimeGrid(1.0, 0.1));
  const SweepReport rep = sampler_oracle_check(m, spec, 20000, 3);
  CHECK(rep.rows.size() == 16u);
  CHECK(rep.pass);
  double emp = 0.0;
  for (const auto& row : rep.rows) emp += row.measured;
  CHECK(emp == doctest::Approx(1.0));
}

TEST_CASE("reports round-trip as text") {
  SweepReport rep;
  rep.name = "demo";
  rep.rows.push_back({0.1, 1.0, 2.0, 3.0});
  rep.set("config_hash", std::string("abc"));
  rep.pass = true;
  const std::string text = format_report(rep);
  CHECK(text.find("name=demo\n") == 0);
  CHECK(text.find("config_hash=abc\n") != std::string::npos);
  CHECK(text.find("pass=1\n") != std::string::npos);
  CHECK(text.find("# x measured oracle error\n0.10000000000000001 1 2 3\n") != std::string::npos);
}
