#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dfm/optimizer.hpp"
#include "dfm/policy.hpp"
#include "dfm/reward.hpp"

namespace dfm {

enum class AdvantageKind { raw, mean_baseline, group_normalized };

struct AdvantageSpec {
  AdvantageKind kind = AdvantageKind::mean_baseline;
  // Trajectories sharing a condition form a group; unconditional batches are one group.
  int min_group_size = 2;
};

struct RolloutBatch {
  std::vector<Trajectory> trajectories;
  std::uint64_t snapshot = 0;  // model version that generated the batch
  TimeGrid grid;

  double mean_reward() const;
  double reward_std() const;
};

struct RolloutOptions {
  int count = 64;
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
  int conditions = 0;  // > 0: draw a label uniformly per trajectory
  int threads = 1;
};

// Per-trajectory seed = seed_from({seed, iteration, index}), so results do not
// depend on the thread count.
RolloutBatch rollout(const PosteriorModel& model, const InferenceSpec& spec, const RewardFn& reward,
                     const RolloutOptions& opts);

void compute_advantages(RolloutBatch& batch, const AdvantageSpec& spec);

// Extra gradient contribution (e.g. a regularizer) added before each optimizer step.
using GradientHook = std::function<void(GradientBuffer&)>;

// Accumulates (1/M) sum_m sum_t grad log p(x_{t+dt} | x_t) * A_m and returns
// the matching surrogate value.
double reinforce_gradient(const PosteriorModel& model, const InferenceSpec& spec,
                          const RolloutBatch& batch, GradientBuffer* buf);

void reinforce_update(PosteriorModel& model, const InferenceSpec& spec, const RolloutBatch& batch,
                      OptimizerState& opt, const GradientHook& extra = {});

struct PpoOptions {
  double clip = 0.2;
  int epochs = 4;
};

struct PpoSurrogate {
  double value = 0.0;
  double clip_fraction = 0.0;
  // Smallest |ratio - (1 +- clip)| over all terms; finite-difference checks
  // stay away from the kinks.
  double boundary_distance = 0.0;
  double max_abs_log_ratio = 0.0;
};

// (1/M) sum_m sum_t min(r A, clip(r, 1-eps, 1+eps) A) with r = p_theta / p_old,
// using the batch's stored log-probabilities as p_old.
PpoSurrogate ppo_surrogate(const PosteriorModel& model, const InferenceSpec& spec,
                           const RolloutBatch& batch, double clip, GradientBuffer* buf);

std::vector<PpoSurrogate> ppo_update(PosteriorModel& model, const InferenceSpec& spec,
                                     const RolloutBatch& batch, const PpoOptions& opts,
                                     OptimizerState& opt, const GradientHook& extra = {});

const char* to_string(AdvantageKind k);
AdvantageKind advantage_kind_from_string(const std::string& s);

}  // namespace dfm
