#pragma once

#include <span>

#include "dfm/ctmc.hpp"
#include "dfm/model.hpp"
#include "dfm/path.hpp"

namespace dfm {

// Everything needed to run DFM inference with a posterior model.
struct InferenceSpec {
  Scheduler sched;
  TimeGrid grid;
  KernelMode mode = KernelMode::clamp;

  InferenceSpec(Scheduler s, TimeGrid g, KernelMode m = KernelMode::clamp);
  double time(int k) const { return grid.time(k); }
  double dt() const { return grid.dt(); }
  int steps() const { return grid.steps(); }
};

// u_t^theta(., x | c) as a RateFn.
RateFn model_rates(const PosteriorModel& model, const Scheduler& sched, Condition c = {});

// Source p_0: all-mask point mass with a mask token, iid uniform tokens otherwise.
DistributionTable source_distribution(const StateSpace& space);
SequenceState sample_source(const StateSpace& space, Rng& rng);

// Resolves leftover masks after the last step to the posterior argmax at T - eps.
TerminalMap mask_resolver(const PosteriorModel& model, const Scheduler& sched, Condition c = {});

struct StepLogProb {
  double value = 0.0;
  bool floored = false;
};

// log p(next_i | x) for one position of the Euler kernel built from the
// posterior `p` (M entries). When `grad` is non-null, adds scale * d/dp.
StepLogProb position_log_prob(const StateSpace& space, int x_i, int next_i, bool active,
                              std::span<const double> p, double speed, double dt, KernelMode mode,
                              double scale, std::span<double> grad);

// Sum over positions of the kernel log-probability, from a forward pass at (x, t_k).
StepLogProb step_log_prob(const Posterior& fwd, const StateSpace& space, const InferenceSpec& spec,
                          int k, const SequenceState& next, double scale = 0.0,
                          std::span<double> grad = {});

// log p_t^theta(next | x) at grid step k.
StepLogProb step_log_prob(const PosteriorModel& model, const InferenceSpec& spec,
                          const SequenceState& x, const SequenceState& next, int k,
                          Condition c = {});

// Same, adding scale * grad_theta log p into `buf`.
StepLogProb step_log_prob_grad(const PosteriorModel& model, const InferenceSpec& spec,
                               const SequenceState& x, const SequenceState& next, int k,
                               Condition c, double scale, GradientBuffer& buf);

// One policy-driven trajectory (no reward), deterministic in `seed`.
Trajectory sample_trajectory(const PosteriorModel& model, const InferenceSpec& spec,
                             std::uint64_t seed, Condition c = {});

// Exact terminal law p_T^theta of the discretized sampler (enumerable spaces).
DistributionTable terminal_distribution(const PosteriorModel& model, const InferenceSpec& spec,
                                        Condition c = {});

}  // namespace dfm
