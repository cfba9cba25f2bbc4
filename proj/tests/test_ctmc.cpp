#include <doctest.h>

#include "dfm/ctmc.hpp"
#include "dfm/error.hpp"
#include "helpers.hpp"

using namespace dfm;
using testutil::two_state;

namespace {
const StateSpace kTwo{1, 2, false};
const SequenceState kOne({1});
}  // namespace

TEST_CASE("rate conditions") {
  RateEvaluation r(2, 3);
  const SequenceState x({1, 3});
  r.at(0, 2) = 0.5;
  r.at(0, 3) = 0.25;
  r.at(1, 1) = 2.0;
  r.fill_diagonal(x);
  CHECK(r.at(0, 1) == -0.75);
  CHECK(r.at(1, 3) == -2.0);
  CHECK_NOTHROW(r.check_conditions(x));
  r.at(1, 2) = -0.1;
  CHECK_THROWS_AS(r.check_conditions(x), Error);
}

TEST_CASE("time grid") {
  const TimeGrid g(1.0, 0.1);
  CHECK(g.steps() == 10);
  CHECK(g.time(10) == doctest::Approx(1.0));
  CHECK_THROWS_AS(TimeGrid(1.0, 0.3), Error);
  CHECK_THROWS_AS(TimeGrid(1.0, 0.0), Error);
  CHECK_THROWS_AS(TimeGrid(-1.0, 0.1), Error);
}

TEST_CASE("step kernel examples") {
  RateEvaluation zero(1, 2);
  zero.fill_diagonal(kOne);
  CHECK(step_kernel(zero, kOne, 0.1).p(0, 1) == 1.0);

  const RateEvaluation r = two_state(1.0, 0.0)(kOne, 0.0);
  const StepKernel k = step_kernel(r, kOne, 0.1);
  CHECK(k.p(0, 2) == doctest::Approx(0.1));
  CHECK(k.p(0, 1) == doctest::Approx(0.9));

  const RateEvaluation fast = two_state(12.0, 0.0)(kOne, 0.0);
  try {
    step_kernel(fast, kOne, 0.1, KernelMode::strict);
    FAIL("expected strict-mode error");
  } catch (const StrictModeError& e) {
    CHECK(e.position() == 0);
  }
  const StepKernel clamped = step_kernel(fast, kOne, 0.1, KernelMode::clamp);
  CHECK(clamped.clamped);
  CHECK(clamped.p(0, 1) == 0.0);
  CHECK(clamped.p(0, 2) == doctest::Approx(1.0));
}

TEST_CASE("step kernel rows are PMFs") {
  const StateSpace s{3, 4, false};
  const RateFn rates = testutil::random_rates(s, 11, 2.0);
  for (const auto& x : enumerate_states(s)) {
    const StepKernel k = step_kernel(rates(x, 0.3), x, 0.05);
    for (int i = 0; i < s.d; ++i) {
      double sum = 0.0;
      for (int y = 1; y <= s.M; ++y) {
        REQUIRE(k.p(i, y) >= 0.0);
        sum += k.p(i, y);
      }
      REQUIRE(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("euler sampling") {
  const auto source = [](Rng&) { return kOne; };
  const Trajectory still = euler_sample(testutil::zero_rates(kTwo), source, TimeGrid(1.0, 0.1), 5);
  CHECK(still.states.size() == 11);
  CHECK(still.total_log_prob() == 0.0);
  for (const auto& s : still.states) CHECK(s == kOne);

  const RateFn rates = two_state(1.0, 0.0);
  const Trajectory a = euler_sample(rates, source, TimeGrid(1.0, 0.1), 99);
  const Trajectory b = euler_sample(rates, source, TimeGrid(1.0, 0.1), 99);
  CHECK(a.states == b.states);
  CHECK(a.step_log_probs == b.step_log_probs);

  int hits = 0;
  const int n = 100000;
  for (int m = 0; m < n; ++m) {
    hits += euler_sample(rates, source, TimeGrid(1.0, 0.1), seed_from({1, static_cast<std::uint64_t>(m)}))
                .terminal()[0] == 2;
  }
  CHECK(static_cast<double>(hits) / n == doctest::Approx(0.6513).epsilon(0.005 / 0.6513));
}

TEST_CASE("euler log-probabilities follow the kernel") {
  const RateFn rates = two_state(1.0, 0.0);
  const Trajectory t = euler_sample(rates, [](Rng&) { return kOne; }, TimeGrid(1.0, 0.1), 3);
  for (std::size_t k = 0; k + 1 < t.states.size(); ++k) {
    const double expect = t.states[k] == t.states[k + 1] ? std::log(t.states[k][0] == 1 ? 0.9 : 1.0)
                                                         : std::log(0.1);
    CHECK(t.step_log_probs[k] == doctest::Approx(expect));
  }
}

TEST_CASE("kolmogorov reference") {
  const auto p0 = DistributionTable::point_mass(kTwo, kOne);
  const auto still = kolmogorov_exact(testutil::zero_rates(kTwo), p0, 1.0);
  CHECK(still[0] == 1.0);
  const auto absorbed = kolmogorov_exact(two_state(1.0, 0.0), p0, 1.0);
  CHECK(absorbed[1] == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-6));
  const auto mixed = kolmogorov_exact(two_state(1.0, 1.0), p0, 10.0, 2000);
  CHECK(mixed[0] == doctest::Approx(0.5).epsilon(2e-4));
  // a table built under a larger cap is refused once the cap is lowered
  StateSpace capped{2, 2, false};
  const auto table = DistributionTable::uniform(capped);
  capped.enumeration_cap = 3;
  CHECK_THROWS_AS(kolmogorov_exact(testutil::zero_rates(capped), DistributionTable(capped, {table.mass().begin(), table.mass().end()}), 1.0),
                  NotEnumerableError);
}

TEST_CASE("euler push-forward") {
  const auto p0 = DistributionTable::point_mass(kTwo, kOne);
  CHECK(push_forward_euler(testutil::zero_rates(kTwo), p0, TimeGrid(1.0, 0.1))[0] == 1.0);
  const auto a = push_forward_euler(two_state(1.0, 0.0), p0, TimeGrid(1.0, 0.1));
  CHECK(a[1] == doctest::Approx(1.0 - std::pow(0.9, 10)).epsilon(1e-12));
  CHECK(a[1] == doctest::Approx(0.651322).epsilon(1e-6));
  const auto b = push_forward_euler(two_state(1.0, 0.0), p0, TimeGrid(1.0, 0.05));
  CHECK(b[1] == doctest::Approx(0.641514).epsilon(1e-6));
  const double exact = 1.0 - std::exp(-1.0);
  CHECK(std::abs(a[1] - exact) == doctest::Approx(0.0192).epsilon(0.0001 / 0.0192));
  CHECK(std::abs(b[1] - exact) == doctest::Approx(0.0094).epsilon(0.0001 / 0.0094));
  CHECK(std::abs(a[1] - exact) / std::abs(b[1] - exact) == doctest::Approx(2.04).epsilon(0.01));

  const RateFn fast = two_state(12.0, 0.0);
  CHECK_THROWS_AS(push_forward_euler(fast, p0, TimeGrid(1.0, 0.1)), StrictModeError);
}

TEST_CASE("euler converges to the kolmogorov solution at first order") {
  const StateSpace s{2, 3, false};
  for (std::uint64_t seed : {1, 2, 3}) {
    const RateFn rates = testutil::random_rates(s, seed, 1.5);
    const auto p0 = DistributionTable::point_mass(s, SequenceState({1, 2}));
    const auto exact = kolmogorov_exact(rates, p0, 1.0, 20000);
    double prev = 0.0;
    for (double dt : {0.1, 0.05, 0.025, 0.0125}) {
      const double tv = tv_distance(push_forward_euler(rates, p0, TimeGrid(1.0, dt)), exact);
      if (prev > 0.0) {
        CHECK(prev / tv >= 1.5);
        CHECK(prev / tv <= 2.5);
      }
      prev = tv;
    }
  }
}

TEST_CASE("factorized and joint kernels agree to second order per step") {
  const StateSpace s{2, 2, false};
  const RateFn rates = testutil::random_rates(s, 5, 1.0);
  const auto p0 = DistributionTable::uniform(s);
  double prev = 0.0;
  for (double dt : {0.1, 0.05, 0.025}) {
    const TimeGrid one(dt, dt);
    const double tv = tv_distance(push_forward_euler(rates, p0, one, KernelMode::strict, KernelForm::factorized),
                                  push_forward_euler(rates, p0, one, KernelMode::strict, KernelForm::joint));
    CHECK(tv > 0.0);
    if (prev > 0.0) CHECK(prev / tv == doctest::Approx(4.0).epsilon(0.1));
    prev = tv;
  }
}

TEST_CASE("sampler matches the exact discretized marginal") {
  const StateSpace s{2, 3, false};
  const RateFn rates = testutil::random_rates(s, 21, 1.0);
  const TimeGrid grid(1.0, 0.1);
  const auto p0 = DistributionTable::uniform(s);
  const auto exact = push_forward_euler(rates, p0, grid);
  std::vector<double> counts(exact.size(), 0.0);
  const int n = 100000;
  const auto source = [&](Rng& rng) {
    return state_at(s, static_cast<std::size_t>(std::uniform_int_distribution<int>(0, 8)(rng)));
  };
  for (int m = 0; m < n; ++m) {
    counts[index_of(s, euler_sample(rates, source, grid, seed_from({8, static_cast<std::uint64_t>(m)})).terminal())] += 1;
  }
  for (std::size_t j = 0; j < exact.size(); ++j) {
    const double sd = std::sqrt(exact[j] * (1 - exact[j]) / n);
    CHECK(std::abs(counts[j] / n - exact[j]) <= 3 * sd);
  }
}
