#include <doctest.h>

#include <cmath>

#include "dfm/ctmc.hpp"
#include "dfm/error.hpp"
#include "dfm/path.hpp"

using namespace dfm;

TEST_CASE("scheduler values") {
  const Scheduler lin(SchedulerKind::linear, 1.0);
  CHECK(lin.kappa(0.0).kappa == 0.0);
  CHECK(lin.kappa(0.0).kappa_dot == 1.0);
  CHECK(lin.kappa(0.5).kappa == 0.5);
  CHECK(lin.kappa(0.5).kappa_dot == 1.0);
  CHECK(lin.speed(0.5) == doctest::Approx(2.0));
  CHECK(lin.eps() == doctest::Approx(1e-3));
  CHECK_THROWS_AS(lin.kappa(-0.1), Error);
  CHECK_THROWS_AS(lin.kappa(1.0), Error);
  // speed is clipped at T - eps
  CHECK(lin.speed(1.0) == doctest::Approx(1000.0));

  const Scheduler cos(SchedulerKind::cosine, 2.0);
  CHECK(cos.kappa(0.0).kappa == 0.0);
  CHECK(cos.kappa(0.0).kappa_dot > 0.0);
  double prev = -1.0;
  for (double t = 0.0; t <= cos.t_max(); t += 0.01) {
    const auto v = cos.kappa(t);
    CHECK(v.kappa > prev);
    CHECK(v.kappa < 1.0);
    CHECK(v.kappa_dot > 0.0);
    CHECK(std::isfinite(cos.speed(t)));
    prev = v.kappa;
  }
  CHECK(cos.kappa(cos.t_max()).kappa == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(scheduler_kind_from_string("cosine") == SchedulerKind::cosine);
  CHECK_THROWS_AS(scheduler_kind_from_string("quadratic"), Error);
  CHECK_THROWS_AS(Scheduler(SchedulerKind::linear, 0.0), Error);
}

TEST_CASE("conditional sampling") {
  const StateSpace s{1000, 4, true};
  const Scheduler sched;
  Rng rng(1);
  SequenceState x1(std::vector<int>(1000, 3));
  const auto at0 = sample_xt(s, sched, x1, 0.0, rng);
  for (int i = 0; i < s.d; ++i) CHECK(at0.xt[i] == 5);
  const auto late = sample_xt(s, sched, x1, sched.t_max(), rng);
  int copied = 0;
  for (int i = 0; i < s.d; ++i) copied += late.xt[i] == 3;
  CHECK(copied >= 995);
  const auto mid = sample_xt(s, sched, x1, 0.5, rng);
  copied = 0;
  for (int i = 0; i < s.d; ++i) {
    CHECK(mid.xt[i] == (mid.copied[static_cast<std::size_t>(i)] ? 3 : 5));
    copied += mid.copied[static_cast<std::size_t>(i)];
  }
  CHECK(std::abs(copied / 1000.0 - 0.5) <= 0.05);
  CHECK_THROWS_AS(sample_xt(StateSpace{2, 4, false}, sched, SequenceState({1, 1}), 0.5, rng), Error);
}

TEST_CASE("conditional velocity") {
  const StateSpace s{2, 3, true};
  const Scheduler sched;
  const SequenceState x1({1, 2});
  const RateEvaluation same = conditional_velocity(s, sched, x1, x1, 0.5);
  for (double v : same.values()) CHECK(v == 0.0);
  const SequenceState x({4, 2});
  const RateEvaluation r = conditional_velocity(s, sched, x1, x, 0.5);
  CHECK(r.at(0, 1) == doctest::Approx(2.0));
  CHECK(r.at(0, 4) == doctest::Approx(-2.0));
  CHECK(r.at(0, 2) == 0.0);
  CHECK_NOTHROW(r.check_conditions(x));
}

TEST_CASE("posterior to velocity") {
  const StateSpace s{1, 4, false};
  const Scheduler sched;
  const std::vector<double> uniform(4, 0.25);
  const RateEvaluation r = posterior_to_velocity(s, uniform, SequenceState({1}), 2.0);
  CHECK(r.at(0, 2) == doctest::Approx(0.5));
  CHECK(r.at(0, 3) == doctest::Approx(0.5));
  CHECK(r.at(0, 4) == doctest::Approx(0.5));
  CHECK(r.at(0, 1) == doctest::Approx(-1.5));

  const std::vector<double> delta{0.0, 0.0, 1.0, 0.0};
  const RateEvaluation z = posterior_to_velocity(s, delta, SequenceState({3}), 2.0);
  for (double v : z.values()) CHECK(v == 0.0);

  CHECK_THROWS_AS(posterior_to_velocity(s, std::vector<double>{0.5, 0.6, 0.0, 0.0}, SequenceState({1}), 1.0), Error);
  CHECK_THROWS_AS(posterior_to_velocity(s, std::vector<double>{1.0, -0.5, 0.5, 0.0}, SequenceState({1}), 1.0), Error);
  CHECK_THROWS_AS(posterior_to_velocity(s, std::vector<double>{1.0}, SequenceState({1}), 1.0), Error);

  // with a mask, decided positions stay put and the point-mass posterior
  // reproduces the conditional velocity exactly
  const StateSpace m{2, 3, true};
  const SequenceState x({4, 2});
  const SequenceState x1({3, 1});
  const std::vector<double> post{0, 0, 1, 1, 0, 0};
  const RateEvaluation a = posterior_to_velocity(m, sched, post, x, 0.3);
  const RateEvaluation b = conditional_velocity(m, sched, SequenceState({3, 2}), x, 0.3);
  for (std::size_t k = 0; k < a.values().size(); ++k) CHECK(a.values()[k] == b.values()[k]);
  CHECK(a.at(1, 1) == 0.0);
  (void)x1;
}

TEST_CASE("random posteriors satisfy the rate conditions") {
  const StateSpace s{3, 4, true};
  const Scheduler sched(SchedulerKind::cosine);
  Rng rng(4);
  std::exponential_distribution<double> e;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> post(12);
    for (int i = 0; i < 3; ++i) {
      double z = 0.0;
      for (int y = 0; y < 4; ++y) z += post[static_cast<std::size_t>(i * 4 + y)] = e(rng);
      for (int y = 0; y < 4; ++y) post[static_cast<std::size_t>(i * 4 + y)] /= z;
    }
    SequenceState x({5, 2, 5});
    const RateEvaluation r = posterior_to_velocity(s, sched, post, x, 0.7 * uniform01(rng));
    CHECK_NOTHROW(r.check_conditions(x));
  }
}

TEST_CASE("Bayes posterior reproduces the mixture marginal") {
  const StateSpace s{2, 2, true};
  const Scheduler sched;
  const StateSpace data{2, 2, false};
  const std::vector<double> pdata{0.1, 0.4, 0.3, 0.2};  // over (11, 12, 21, 22)
  const auto data_states = enumerate_states(data);
  // True posterior p(x1^i = y | x_t): only the unmasked positions matter.
  const RateFn rates = [&](const SequenceState& x, double t) {
    std::vector<double> post(4, 0.0);
    double z = 0.0;
    for (std::size_t j = 0; j < data_states.size(); ++j) {
      bool ok = true;
      for (int i = 0; i < 2; ++i) ok = ok && (x[i] == 3 || x[i] == data_states[j][i]);
      if (!ok) continue;
      z += pdata[j];
      for (int i = 0; i < 2; ++i) post[static_cast<std::size_t>(i * 2 + data_states[j][i] - 1)] += pdata[j];
    }
    for (double& v : post) v /= z;
    return posterior_to_velocity(s, sched, post, x, t);
  };
  const auto p0 = DistributionTable::point_mass(s, all_mask(s));
  const double t = 0.5;
  const double kappa = sched.kappa(t).kappa;
  std::vector<double> expect(s.size(), 0.0);
  for (std::size_t j = 0; j < data_states.size(); ++j) {
    for (int bits = 0; bits < 4; ++bits) {
      SequenceState x = data_states[j];
      double w = pdata[j];
      for (int i = 0; i < 2; ++i) {
        if (bits & (1 << i)) {
          w *= kappa;
        } else {
          w *= 1 - kappa;
          x[i] = 3;
        }
      }
      expect[index_of(s, x)] += w;
    }
  }
  const DistributionTable target(s, expect);
  CHECK(tv_distance(kolmogorov_exact(rates, p0, t, 20000), target) < 1e-6);
  CHECK(tv_distance(push_forward_euler(rates, p0, TimeGrid(t, 1e-3)), target) <= 1e-2);
}

TEST_CASE("mask resolution picks the argmax") {
  const StateSpace s{3, 3, true};
  const std::vector<double> post{0.2, 0.5, 0.3, 0.9, 0.05, 0.05, 0.1, 0.1, 0.8};
  const SequenceState out = resolve_masks(s, post, SequenceState({4, 3, 4}));
  CHECK(out.tokens == std::vector<int>{2, 3, 3});
}
