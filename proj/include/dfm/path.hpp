#pragma once

#include <span>
#include <vector>

#include "dfm/ctmc.hpp"
#include "dfm/random.hpp"
#include "dfm/state_space.hpp"

namespace dfm {

enum class SchedulerKind { linear, cosine };

// Mixture-path scheduler kappa_t on [0, T]. Rates use kappa_dot / (1 - kappa),
// which diverges at T, so evaluation is clipped to t <= T - eps.
class Scheduler {
 public:
  struct Value {
    double kappa;
    double kappa_dot;
  };

  explicit Scheduler(SchedulerKind kind = SchedulerKind::linear, double horizon = 1.0,
                     double eps_fraction = 1e-3);

  SchedulerKind kind() const { return kind_; }
  double horizon() const { return horizon_; }
  double eps() const { return eps_; }
  double t_max() const { return horizon_ - eps_; }

  // Throws outside [0, T - eps].
  Value kappa(double t) const;
  // kappa_dot / (1 - kappa) at min(t, T - eps).
  double speed(double t) const;

 private:
  SchedulerKind kind_;
  double horizon_;
  double eps_;
};

struct ConditionalPathSample {
  double t = 0.0;
  SequenceState x1;
  SequenceState xt;
  std::vector<bool> copied;
};

// x_t^i = x1^i with probability kappa_t, the mask token otherwise.
ConditionalPathSample sample_xt(const StateSpace& space, const Scheduler& sched,
                                const SequenceState& x1, double t, Rng& rng);

// u_t(y, x | x1) = speed * [delta(y, x1) - delta(y, x)] per position.
RateEvaluation conditional_velocity(const StateSpace& space, const Scheduler& sched,
                                    const SequenceState& x1, const SequenceState& x, double t);

// Maps per-position posteriors p_{1|t}(.|x) (d x M, data tokens only) to rates
// speed * p(y) for y != x_i. With a mask token, positions already unmasked
// get zero rates.
RateEvaluation posterior_to_velocity(const StateSpace& space, std::span<const double> posterior,
                                     const SequenceState& x, double speed);
RateEvaluation posterior_to_velocity(const StateSpace& space, const Scheduler& sched,
                                     std::span<const double> posterior, const SequenceState& x,
                                     double t);

// Whether position i carries a non-zero velocity (mask spaces: masked only).
inline bool position_active(const StateSpace& space, const SequenceState& x, int i) {
  return !space.has_mask || space.is_mask(x[i]);
}

// Replaces leftover mask tokens by the posterior argmax.
SequenceState resolve_masks(const StateSpace& space, std::span<const double> posterior,
                            const SequenceState& x);

const char* to_string(SchedulerKind kind);
SchedulerKind scheduler_kind_from_string(const std::string& s);

}  // namespace dfm
