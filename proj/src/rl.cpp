#include "dfm/rl.hpp"

#include <fmt/format.h>

#include <cmath>
#include <map>
#include <thread>

#include "dfm/error.hpp"

namespace dfm {

double RolloutBatch::mean_reward() const {
  if (trajectories.empty()) return 0.0;
  double s = 0.0;
  for (const auto& t : trajectories) s += t.reward;
  return s / static_cast<double>(trajectories.size());
}

double RolloutBatch::reward_std() const {
  if (trajectories.size() < 2) return 0.0;
  const double mu = mean_reward();
  double s = 0.0;
  for (const auto& t : trajectories) s += (t.reward - mu) * (t.reward - mu);
  return std::sqrt(s / static_cast<double>(trajectories.size()));
}

RolloutBatch rollout(const PosteriorModel& model, const InferenceSpec& spec, const RewardFn& reward,
                     const RolloutOptions& opts) {
  if (opts.count < 1) throw Error("rollout needs at least one trajectory");
  RolloutBatch batch{std::vector<Trajectory>(static_cast<std::size_t>(opts.count)), model.version(),
                     spec.grid};
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t m = begin; m < end; ++m) {
      const std::uint64_t seed = seed_from({opts.seed, opts.iteration, m});
      Condition c;
      if (opts.conditions > 0) {
        Rng crng(seed_from({seed, 0xc0d1ULL}));
        c = std::uniform_int_distribution<int>(0, opts.conditions - 1)(crng);
      }
      Trajectory traj = sample_trajectory(model, spec, seed, c);
      traj.reward = reward(traj.terminal(), c);
      batch.trajectories[m] = std::move(traj);
    }
  };
  const auto n = static_cast<std::size_t>(opts.count);
  const auto threads = static_cast<std::size_t>(std::clamp(opts.threads, 1, opts.count));
  if (threads == 1) {
    run(0, n);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back(run, n * w / threads, n * (w + 1) / threads);
    }
  }
  return batch;
}

void compute_advantages(RolloutBatch& batch, const AdvantageSpec& spec) {
  auto& trajs = batch.trajectories;
  switch (spec.kind) {
    case AdvantageKind::raw:
      for (auto& t : trajs) t.advantage = t.reward;
      return;
    case AdvantageKind::mean_baseline: {
      const double mu = batch.mean_reward();
      for (auto& t : trajs) t.advantage = t.reward - mu;
      return;
    }
    case AdvantageKind::group_normalized: {
      std::map<int, std::vector<std::size_t>> groups;
      for (std::size_t i = 0; i < trajs.size(); ++i) groups[trajs[i].condition.value_or(-1)].push_back(i);
      for (const auto& [label, members] : groups) {
        if (static_cast<int>(members.size()) < std::max(2, spec.min_group_size)) {
          throw Error(fmt::format("advantage group for condition {} has {} members, need >= {}",
                                  label, members.size(), std::max(2, spec.min_group_size)));
        }
        double mu = 0.0;
        for (auto i : members) mu += trajs[i].reward;
        mu /= static_cast<double>(members.size());
        double var = 0.0;
        for (auto i : members) var += (trajs[i].reward - mu) * (trajs[i].reward - mu);
        const double sd = std::sqrt(var / static_cast<double>(members.size()));
        for (auto i : members) trajs[i].advantage = (trajs[i].reward - mu) / (sd + 1e-8);
      }
      return;
    }
  }
}

double reinforce_gradient(const PosteriorModel& model, const InferenceSpec& spec,
                          const RolloutBatch& batch, GradientBuffer* buf) {
  const double inv_m = 1.0 / static_cast<double>(batch.trajectories.size());
  double surrogate = 0.0;
  for (const auto& traj : batch.trajectories) {
    const double w = traj.advantage * inv_m;
    for (int k = 0; k < spec.steps(); ++k) {
      const auto& x = traj.states[static_cast<std::size_t>(k)];
      const auto& next = traj.states[static_cast<std::size_t>(k + 1)];
      if (buf != nullptr && w != 0.0) {
        surrogate += w * step_log_prob_grad(model, spec, x, next, k, traj.condition, w, *buf).value;
      } else {
        surrogate += w * step_log_prob(model, spec, x, next, k, traj.condition).value;
      }
    }
  }
  return surrogate;
}

void reinforce_update(PosteriorModel& model, const InferenceSpec& spec, const RolloutBatch& batch,
                      OptimizerState& opt, const GradientHook& extra) {
  if (batch.snapshot != model.version()) {
    throw Error(fmt::format("REINFORCE needs an on-policy batch: batch snapshot {} vs model {}",
                            batch.snapshot, model.version()));
  }
  GradientBuffer buf = model.make_buffer();
  reinforce_gradient(model, spec, batch, &buf);
  if (extra) extra(buf);
  optimizer_step(model, buf, opt, Direction::ascent);
}

PpoSurrogate ppo_surrogate(const PosteriorModel& model, const InferenceSpec& spec,
                           const RolloutBatch& batch, double clip, GradientBuffer* buf) {
  const double inv_m = 1.0 / static_cast<double>(batch.trajectories.size());
  PpoSurrogate out;
  out.boundary_distance = std::numeric_limits<double>::infinity();
  std::size_t terms = 0, clipped = 0;
  for (std::size_t m = 0; m < batch.trajectories.size(); ++m) {
    const auto& traj = batch.trajectories[m];
    const double adv = traj.advantage;
    for (int k = 0; k < spec.steps(); ++k) {
      const auto& x = traj.states[static_cast<std::size_t>(k)];
      const auto& next = traj.states[static_cast<std::size_t>(k + 1)];
      const Posterior fwd = model.forward(x, std::min(spec.time(k), spec.sched.t_max()), traj.condition);
      const StepLogProb lp = step_log_prob(fwd, model.space(), spec, k, next);
      const double log_ratio = lp.value - traj.step_log_probs[static_cast<std::size_t>(k)];
      const double ratio = std::exp(log_ratio);
      if (!std::isfinite(ratio)) {
        throw Error(fmt::format("non-finite PPO ratio at trajectory {} step {}", m, k));
      }
      const double clipped_ratio = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
      const double unclipped_term = ratio * adv;
      const double clipped_term = clipped_ratio * adv;
      const bool use_unclipped = unclipped_term <= clipped_term;
      out.value += inv_m * (use_unclipped ? unclipped_term : clipped_term);
      out.boundary_distance = std::min(
          {out.boundary_distance, std::abs(ratio - (1.0 - clip)), std::abs(ratio - (1.0 + clip))});
      out.max_abs_log_ratio = std::max(out.max_abs_log_ratio, std::abs(log_ratio));
      ++terms;
      if (!use_unclipped) ++clipped;
      if (buf != nullptr && use_unclipped && adv != 0.0) {
        // d(r A)/d theta = A r grad log p
        std::vector<double> g(fwd.probs.size(), 0.0);
        step_log_prob(fwd, model.space(), spec, k, next, inv_m * adv * ratio, g);
        model.backward(fwd, g, *buf);
      }
    }
  }
  out.clip_fraction = terms ? static_cast<double>(clipped) / static_cast<double>(terms) : 0.0;
  return out;
}

std::vector<PpoSurrogate> ppo_update(PosteriorModel& model, const InferenceSpec& spec,
                                     const RolloutBatch& batch, const PpoOptions& opts,
                                     OptimizerState& opt, const GradientHook& extra) {
  if (batch.snapshot != model.version()) {
    throw Error(fmt::format("PPO batch must come from the current policy snapshot ({} vs {})",
                            batch.snapshot, model.version()));
  }
  std::vector<PpoSurrogate> passes;
  for (int e = 0; e < opts.epochs; ++e) {
    GradientBuffer buf = model.make_buffer();
    passes.push_back(ppo_surrogate(model, spec, batch, opts.clip, &buf));
    if (extra) extra(buf);
    optimizer_step(model, buf, opt, Direction::ascent);
  }
  return passes;
}

const char* to_string(AdvantageKind k) {
  switch (k) {
    case AdvantageKind::raw: return "raw";
    case AdvantageKind::mean_baseline: return "mean_baseline";
    case AdvantageKind::group_normalized: return "group_normalized";
  }
  return "?";
}

AdvantageKind advantage_kind_from_string(const std::string& s) {
  if (s == "raw") return AdvantageKind::raw;
  if (s == "mean_baseline" || s == "batch-mean-baseline") return AdvantageKind::mean_baseline;
  if (s == "group_normalized" || s == "group-normalized") return AdvantageKind::group_normalized;
  throw Error(fmt::format("unknown advantage kind '{}'", s));
}

}  // namespace dfm
