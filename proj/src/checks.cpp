#include "dfm/checks.hpp"

#include <fmt/format.h>

#include <cmath>

#include "dfm/error.hpp"
#include "dfm/regularize.hpp"

namespace dfm {

namespace {

const StateSpace kSweepSpace{3, 3, false};
const std::vector<double> kDts{0.1, 0.05, 0.025, 0.0125};

SweepReport absorbing_chain() {
  const StateSpace two{1, 2, false};
  const RateFn rates = [](const SequenceState& x, double) {
    RateEvaluation r(1, 2);
    if (x[0] == 1) r.at(0, 2) = 1.0;
    r.fill_diagonal(x);
    return r;
  };
  const std::vector<double> reward{0.0, 1.0};
  SweepReport rep = discretization_value_sweep(rates, DistributionTable::point_mass(two, SequenceState({1})),
                                               reward, 1.0, kDts);
  rep.name = "value_absorbing_chain";
  const double e1 = rep.rows[0].error, e2 = rep.rows[1].error;
  rep.set("expected_dt0.1", 0.0192);
  rep.set("expected_dt0.05", 0.0094);
  rep.pass = rep.pass && std::abs(e1 - 0.0192) < 1e-4 && std::abs(e2 - 0.0094) < 1e-4;
  return rep;
}

SweepReport from_estimator(const EstimatorReport& e) {
  SweepReport rep;
  rep.name = "estimator";
  for (std::size_t k = 0; k < e.exact_grad.size(); ++k) {
    const double z = e.mc_stderr[k] > 0.0 ? std::abs(e.mc_mean[k] - e.exact_grad[k]) / e.mc_stderr[k] : 0.0;
    rep.rows.push_back({static_cast<double>(k), e.mc_mean[k], e.exact_grad[k], z});
  }
  rep.set("j_rl", e.j_rl);
  rep.set("j", e.j);
  rep.set("abs_j_gap", std::abs(e.j_rl - e.j));
  rep.set("trajectories", static_cast<double>(e.trajectories));
  rep.set("max_z", e.max_z);
  rep.set("cosine", e.cosine);
  rep.set("ppo_value", e.ppo_value);
  rep.set("ppo_expected", e.ppo_expected);
  rep.pass = e.pass;
  return rep;
}

}  // namespace

const std::vector<std::string>& check_names() {
  static const std::vector<std::string> names{"value", "grad", "estimator", "sampler", "tv-ce", "tv-gkl"};
  return names;
}

BoundedRateModel sweep_model(std::uint64_t seed, int index) {
  return BoundedRateModel::random(kSweepSpace, 1.0, seed_from({seed, 0x7377ULL, static_cast<std::uint64_t>(index)}));
}

std::vector<double> sweep_reward(std::uint64_t seed, int index) {
  Rng rng(seed_from({seed, 0x7277ULL, static_cast<std::uint64_t>(index)}));
  std::vector<double> r(kSweepSpace.size());
  for (double& v : r) v = uniform01(rng);
  return r;
}

PosteriorModel tiny_policy(std::uint64_t seed) {
  PosteriorModel m = PosteriorModel::tabular({2, 2, true}, 1.0, {2, 0});
  Rng rng(seed_from({seed, 0x7479ULL}));
  std::normal_distribution<double> n;
  for (double& v : m.mutable_params()) v = n(rng);
  m.touch();
  return m;
}

InferenceSpec tiny_inference() { return InferenceSpec(Scheduler(), TimeGrid(1.0, 0.25)); }

RewardFn tiny_reward() { return table_reward(StateSpace{2, 2, false}, {0.1, 1.0, 0.4, 0.7}); }

CheckOutcome run_check(const std::string& name, std::uint64_t seed, int samples) {
  CheckOutcome out;
  out.name = name;
  if (name == "value") {
    out.reports.push_back(absorbing_chain());
    for (int m = 1; m <= 5; ++m) {
      const BoundedRateModel bm = sweep_model(seed, m);
      SweepReport rep = discretization_value_sweep(bm.rates(), DistributionTable::uniform(kSweepSpace),
                                                   sweep_reward(seed, m), 1.0, kDts);
      rep.name = fmt::format("value_model{}", m);
      out.reports.push_back(std::move(rep));
    }
  } else if (name == "grad") {
    for (int m = 1; m <= 5; ++m) {
      const BoundedRateModel bm = sweep_model(seed, m);
      SweepReport rep = discretization_grad_sweep(bm, DistributionTable::uniform(kSweepSpace),
                                                  sweep_reward(seed, m), 1.0, kDts);
      rep.name = fmt::format("grad_model{}", m);
      out.reports.push_back(std::move(rep));
    }
  } else if (name == "estimator") {
    const PosteriorModel m = tiny_policy(seed);
    out.reports.push_back(from_estimator(
        estimator_oracle_check(m, tiny_inference(), tiny_reward(), samples, seed_from({seed, 0x6573ULL}))));
  } else if (name == "sampler") {
    PosteriorModel m = PosteriorModel::tabular({2, 3, true}, 1.0, {2, 0});
    Rng rng(seed_from({seed, 0x736dULL}));
    std::normal_distribution<double> n;
    for (double& v : m.mutable_params()) v = n(rng);
    m.touch();
    SweepReport rep = sampler_oracle_check(m, InferenceSpec(Scheduler(), TimeGrid(1.0, 0.1)), samples,
                                           seed_from({seed, 0x7370ULL}));
    rep.name = "sampler";
    out.reports.push_back(std::move(rep));
  } else if (name == "tv-ce" || name == "tv-gkl") {
    PosteriorModel ref = PosteriorModel::tabular({2, 3, true}, 1.0, {4, 0});
    Rng rng(seed_from({seed, 0x7476ULL}));
    std::normal_distribution<double> n;
    for (double& v : ref.mutable_params()) v = n(rng);
    ref.touch();
    TvSweepOptions o;
    o.seed = seed;
    out.reports.push_back(tv_bound_sweep(ref, InferenceSpec(Scheduler(), TimeGrid(1.0, 0.02), KernelMode::strict),
                                         name == "tv-ce" ? RegKind::ce : RegKind::gkl, o));
  } else {
    throw Error(fmt::format("unknown check '{}' (known: value, grad, estimator, sampler, tv-ce, tv-gkl, all)", name));
  }
  out.pass = true;
  for (const auto& r : out.reports) out.pass = out.pass && r.pass;
  return out;
}

}  // namespace dfm
