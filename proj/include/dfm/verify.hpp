#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dfm/policy.hpp"
#include "dfm/regularize.hpp"
#include "dfm/reward.hpp"

namespace dfm {

struct SweepRow {
  double x = 0.0;         // dt or sigma
  double measured = 0.0;  // e.g. J, TV
  double oracle = 0.0;    // e.g. J-tilde, gap
  double error = 0.0;     // quantity entering the log-log fit
};

struct SweepReport {
  std::string name;
  std::vector<SweepRow> rows;
  double slope = 0.0;
  double slope_stderr = 0.0;
  bool pass = false;
  std::vector<std::pair<std::string, std::string>> extra;

  void set(const std::string& key, double value);
  void set(const std::string& key, const std::string& value);
};

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
};

// Least squares of log(y) on log(x); points with x <= 0 or y <= 0 are skipped.
LineFit fit_loglog(std::span<const double> x, std::span<const double> y);

// "key=value" header lines, then "# x measured oracle error" and one row per line.
void write_report(const std::string& path, const SweepReport& report);
std::string format_report(const SweepReport& report);

// Mask-free tabular posterior (one time bin) driven by a smooth bounded speed
// c(t) = 1 + a sin(2 pi t / T + phi): rates c(t) p_theta(y | x) for y != x_i.
struct BoundedRateModel {
  PosteriorModel model;
  double amplitude = 0.5;
  double phase = 0.0;

  double speed(double t) const;
  RateFn rates() const;
  static BoundedRateModel random(const StateSpace& space, double horizon, std::uint64_t seed,
                                 double logit_scale = 1.0);
};

// J = E_{p_T}[r] under the Euler chain and the reference J-tilde from the
// Kolmogorov equation; error |J - J-tilde| per dt.
SweepReport discretization_value_sweep(const RateFn& rates, const DistributionTable& p0,
                                       std::span<const double> reward, double horizon,
                                       std::span<const double> dts, int fine_steps = 20000);

struct ValueGradient {
  double value = 0.0;
  std::vector<double> grad;  // over model parameters
};

// Forward-mode derivative of the Euler push-forward, J = sum_x r(x) p_K(x).
// The factorized form differentiates the product kernel used by the sampler,
// the joint form the I + dt U recursion.
ValueGradient euler_value_gradient(const BoundedRateModel& bm, const DistributionTable& p0,
                                   std::span<const double> reward, const TimeGrid& grid,
                                   KernelForm form = KernelForm::factorized);

// RK4 on the augmented (p, grad p) Kolmogorov system.
ValueGradient continuous_value_gradient(const BoundedRateModel& bm, const DistributionTable& p0,
                                        std::span<const double> reward, double horizon,
                                        int fine_steps_per_unit = 2000);

// Infinity-norm gradient error per dt; records the fine-step self-consistency
// (doubling) under "reference_drift".
SweepReport discretization_grad_sweep(const BoundedRateModel& bm, const DistributionTable& p0,
                                      std::span<const double> reward, double horizon,
                                      std::span<const double> dts,
                                      KernelForm form = KernelForm::factorized,
                                      int fine_steps_per_unit = 2000);

struct TvSweepOptions {
  std::vector<double> sigmas{1e-3, 3e-3, 1e-2, 3e-2, 1e-1};
  int directions = 20;
  std::uint64_t seed = 0;
  double max_slope = 0.6;
};

// Perturbs theta = theta_ref + sigma xi and records (gap, exact TV) with the
// gap measured on exact reference-chain states. Rows: x = sigma,
// measured = TV, oracle = gap, error = TV. Slope is d log TV / d log gap and
// C (extra "C") is the largest TV / sqrt(gap).
SweepReport tv_bound_sweep(const PosteriorModel& ref, const InferenceSpec& spec, RegKind kind,
                           const TvSweepOptions& opts);

struct EstimatorReport {
  double j_rl = 0.0;     // trajectory enumeration
  double j = 0.0;        // marginal push-forward
  std::size_t trajectories = 0;
  std::vector<double> exact_grad;
  std::vector<double> mc_mean;
  std::vector<double> mc_stderr;
  double max_z = 0.0;
  double cosine = 0.0;
  double ppo_value = 0.0;      // PPO surrogate at theta = theta_old
  double ppo_expected = 0.0;   // (K / M) sum of advantages
  bool pass = false;
};

using TrajectoryVisitor =
    std::function<void(const std::vector<SequenceState>& states, const SequenceState& terminal, double prob)>;

// Visits every trajectory with positive probability; `terminal` has leftover
// masks resolved. Throws when states^(K+1) exceeds `cap`.
void enumerate_trajectories(const PosteriorModel& model, const InferenceSpec& spec, Condition c,
                            const TrajectoryVisitor& fn, std::uint64_t cap = 1'000'000);

// Exact J_RL vs J and, with samples > 0, the REINFORCE Monte-Carlo gradient
// (raw rewards) against the exact policy gradient.
EstimatorReport estimator_oracle_check(const PosteriorModel& model, const InferenceSpec& spec,
                                       const RewardFn& reward, int samples, std::uint64_t seed);

// Empirical terminal law of the sampler against push_forward_euler.
// Rows: x = state index, measured = empirical, oracle = exact, error = |z|.
SweepReport sampler_oracle_check(const PosteriorModel& model, const InferenceSpec& spec, int samples,
                                 std::uint64_t seed, double z_max = 3.0);

}  // namespace dfm
