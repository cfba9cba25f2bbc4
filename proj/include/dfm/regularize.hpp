#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dfm/policy.hpp"
#include "dfm/rl.hpp"

namespace dfm {

// Generalized KL: sum u log(u/v) - sum u + sum v. Throws on negative entries.
double gkl(std::span<const double> u, std::span<const double> v);

// One weighted (t, X_t, c) point of a regularizer expectation.
struct RegState {
  double t = 0.0;
  SequenceState x;
  Condition c;
  double weight = 1.0;
};

// sum_s w_s sum_i -sum_y p_ref(y|x) log p_theta(y|x), active positions only.
// With `buf`, adds scale * gradient.
double ce_regularizer(const PosteriorModel& model, const PosteriorModel& ref, const Scheduler& sched,
                      std::span<const RegState> states, GradientBuffer* buf = nullptr,
                      double scale = 1.0);

// sum_s w_s D_gKL(u_ref(., x), u_theta(., x)) over off-diagonal entries.
double gkl_regularizer(const PosteriorModel& model, const PosteriorModel& ref, const Scheduler& sched,
                       std::span<const RegState> states, GradientBuffer* buf = nullptr,
                       double scale = 1.0);

// sum_s w_s sum_i KL(p_ref || p_theta) over the same positions as the CE term.
double posterior_kl(const PosteriorModel& model, const PosteriorModel& ref, const Scheduler& sched,
                    std::span<const RegState> states);

// Rollout estimate of the path-space KL(P_theta || P_ref): per-step gKL of
// off-diagonal rates times dt, averaged over trajectories.
double pathwise_kl(const PosteriorModel& model, const PosteriorModel& ref, const InferenceSpec& spec,
                   const RolloutBatch& batch);

// T * sum_s w_s ||u_theta - u_ref||^2 over off-diagonal entries.
double factorized_risk(const PosteriorModel& model, const PosteriorModel& ref, const Scheduler& sched,
                       std::span<const RegState> states);

enum class RegKind { none, ce, gkl, path_kl };
enum class StateSource { reference_rollouts, current_rollouts };

struct RegSpec {
  RegKind kind = RegKind::none;
  double lambda = 0.0;
  StateSource source = StateSource::reference_rollouts;
  int refresh = 10;
  int reference_rollouts = 64;

  void validate() const;
  // Whether the regularizer contributes a gradient.
  bool active() const { return lambda > 0.0 && (kind == RegKind::ce || kind == RegKind::gkl); }
};

// Grid states t_0..t_{K-1} of every trajectory, weight 1 / (M K).
std::vector<RegState> states_from_batch(const RolloutBatch& batch, const InferenceSpec& spec);

// Exact grid marginals of the discretized reference chain, weight p_k(x) / K.
std::vector<RegState> exact_reference_states(const PosteriorModel& ref, const InferenceSpec& spec,
                                             Condition c = {});

double regularizer_value(RegKind kind, const PosteriorModel& model, const PosteriorModel& ref,
                         const Scheduler& sched, std::span<const RegState> states,
                         GradientBuffer* buf = nullptr, double scale = 1.0);

// Frozen reference snapshot plus the cached reference-rollout states.
class ReferenceModel {
 public:
  explicit ReferenceModel(PosteriorModel snapshot) : model_(std::move(snapshot)) {}

  const PosteriorModel& model() const { return model_; }
  // Reference-rollout states, resampled when `iteration` reaches the refresh cadence.
  const std::vector<RegState>& states(const InferenceSpec& spec, const RegSpec& reg,
                                      std::uint64_t seed, std::uint64_t iteration, int conditions);

 private:
  PosteriorModel model_;
  std::vector<RegState> cache_;
  std::optional<std::uint64_t> refreshed_at_;
};

enum class Algorithm { reinforce, ppo };

struct StepReport {
  double reg_value = 0.0;  // before the update, 0 when inactive
  std::vector<PpoSurrogate> ppo;
};

// One update of J_RL - lambda * L_reg. With lambda = 0 the regularizer is
// skipped entirely, so the step equals the plain RL update bit for bit.
StepReport total_objective_step(PosteriorModel& model, const PosteriorModel& ref,
                                const InferenceSpec& spec, const RolloutBatch& batch,
                                const RegSpec& reg, std::span<const RegState> reg_states,
                                Algorithm algorithm, const PpoOptions& ppo, OptimizerState& opt);

const char* to_string(RegKind k);
RegKind reg_kind_from_string(const std::string& s);
const char* to_string(StateSource s);
StateSource state_source_from_string(const std::string& s);
const char* to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& s);

}  // namespace dfm
