#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dfm/distribution.hpp"
#include "dfm/random.hpp"
#include "dfm/state_space.hpp"

namespace dfm {

// Factorized rates u_t(., x) at one (x, t): for each position i a vector over
// the alphabet. Off-diagonal entries are jump rates to token y at position i;
// the entry at x_i holds minus their sum.
class RateEvaluation {
 public:
  RateEvaluation(int d, int alphabet) : d_(d), a_(alphabet), r_(static_cast<std::size_t>(d * alphabet), 0.0) {}

  int d() const { return d_; }
  int alphabet() const { return a_; }

  // token is 1-based
  double& at(int position, int token) { return r_[index(position, token)]; }
  double at(int position, int token) const { return r_[index(position, token)]; }
  std::span<const double> position_rates(int position) const {
    return std::span<const double>(r_).subspan(static_cast<std::size_t>(position * a_), static_cast<std::size_t>(a_));
  }
  std::span<const double> values() const { return r_; }

  // Sets every diagonal entry to minus the off-diagonal sum.
  void fill_diagonal(const SequenceState& x);
  // Throws unless off-diagonals are >= 0 and each position sums to zero.
  void check_conditions(const SequenceState& x, double tol = 1e-9) const;

 private:
  std::size_t index(int position, int token) const {
    return static_cast<std::size_t>(position * a_ + token - 1);
  }
  int d_;
  int a_;
  std::vector<double> r_;
};

// Uniform grid t_k = k * dt, k = 0..K with K = T / dt integral.
class TimeGrid {
 public:
  TimeGrid(double horizon, double dt);

  double horizon() const { return horizon_; }
  double dt() const { return dt_; }
  int steps() const { return steps_; }
  double time(int k) const { return static_cast<double>(k) * dt_; }

 private:
  double horizon_;
  double dt_;
  int steps_;
};

enum class KernelMode { strict, clamp };
enum class KernelForm { factorized, joint };

// Per-position categorical next-token distributions of one Euler step.
struct StepKernel {
  int d = 0;
  int alphabet = 0;
  std::vector<double> prob;
  bool clamped = false;

  double p(int position, int token) const {
    return prob[static_cast<std::size_t>(position * alphabet + token - 1)];
  }
  std::span<const double> position_probs(int position) const {
    return std::span<const double>(prob).subspan(static_cast<std::size_t>(position * alphabet),
                                                 static_cast<std::size_t>(alphabet));
  }
};

StepKernel step_kernel(const RateEvaluation& rates, const SequenceState& x, double dt,
                       KernelMode mode = KernelMode::strict);

using RateFn = std::function<RateEvaluation(const SequenceState&, double)>;
using SourceSampler = std::function<SequenceState(Rng&)>;
// Deterministic map applied to the terminal state (e.g. resolving leftover masks).
using TerminalMap = std::function<SequenceState(const SequenceState&)>;

// Rollout record shared by the sampler, the RL updates and the regularizers.
struct Trajectory {
  std::vector<SequenceState> states;   // K + 1 chain states
  SequenceState output;                // terminal after the terminal map; empty if none
  std::vector<double> step_log_probs;  // K entries, summed over positions
  Condition condition;
  double reward = 0.0;
  double advantage = 0.0;
  bool floored = false;
  int clamped_steps = 0;

  const SequenceState& terminal() const { return output.tokens.empty() ? states.back() : output; }
  double total_log_prob() const;
};

Trajectory euler_sample(const RateFn& rates, const SourceSampler& source, const TimeGrid& grid,
                        std::uint64_t seed, KernelMode mode = KernelMode::strict,
                        const TerminalMap& terminal_map = {});

// Calls fn(successor_index, probability) for every state reachable in one
// factorized step with non-zero probability.
void for_each_successor(const StateSpace& space, const SequenceState& x, const StepKernel& kernel,
                        const std::function<void(std::size_t, double)>& fn);

// Fixed-step RK4 on dp/dt = U_t p over the enumerated joint space.
DistributionTable kolmogorov_exact(const RateFn& rates, const DistributionTable& p0, double horizon,
                                   int fine_steps_per_unit = 100000);

// Exact marginal law of the Euler-discretized chain after grid.steps() steps.
DistributionTable push_forward_euler(const RateFn& rates, const DistributionTable& p0,
                                     const TimeGrid& grid, KernelMode mode = KernelMode::strict,
                                     KernelForm form = KernelForm::factorized,
                                     const TerminalMap& terminal_map = {});

// All K + 1 grid marginals (terminal map not applied).
std::vector<std::vector<double>> push_forward_marginals(const RateFn& rates,
                                                        const DistributionTable& p0,
                                                        const TimeGrid& grid,
                                                        KernelMode mode = KernelMode::strict,
                                                        KernelForm form = KernelForm::factorized);

// y = U_t p for the joint generator assembled from factorized rates.
void apply_generator(const RateFn& rates, const StateSpace& space,
                     const std::vector<SequenceState>& states, double t,
                     std::span<const double> p, std::span<double> out);

}  // namespace dfm
