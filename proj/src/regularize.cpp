#include "dfm/regularize.hpp"

#include <fmt/format.h>

#include <cmath>

#include "dfm/error.hpp"

namespace dfm {

double gkl(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw Error("gkl: size mismatch");
  double out = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (u[i] < 0.0 || v[i] < 0.0) throw Error(fmt::format("gkl: negative entry at {}", i));
    if (u[i] > 0.0) {
      if (v[i] <= 0.0) return std::numeric_limits<double>::infinity();
      out += u[i] * std::log(u[i] / v[i]);
    }
    out += v[i] - u[i];
  }
  return out;
}

namespace {

struct PairPass {
  Posterior cur;
  Posterior ref;
  double speed;
};

PairPass pair_forward(const PosteriorModel& model, const PosteriorModel& ref, const Scheduler& sched,
                      const RegState& s) {
  const double t = std::min(s.t, sched.t_max());
  return {model.forward(s.x, t, s.c), ref.forward(s.x, t, s.c), sched.speed(s.t)};
}

void check_compatible(const PosteriorModel& model, const PosteriorModel& ref) {
  if (!(model.space() == ref.space())) {
    throw Error(fmt::format("reference model space {} differs from {}", ref.space().describe(),
                            model.space().describe()));
  }
}

// Per-state loss over active positions. `term` returns the value for one
// position and adds d/dp into its gradient span.
template <typename Term>
double accumulate(const PosteriorModel& model, const PosteriorModel& ref, const Scheduler& sched,
                  std::span<const RegState> states, GradientBuffer* buf, double scale, Term term) {
  check_compatible(model, ref);
  const StateSpace& space = model.space();
  const auto m = static_cast<std::size_t>(space.M);
  double total = 0.0;
  std::vector<double> g;
  for (const RegState& s : states) {
    if (s.weight == 0.0) continue;
    const PairPass pass = pair_forward(model, ref, sched, s);
    const bool want_grad = buf != nullptr && scale != 0.0;
    if (want_grad) g.assign(pass.cur.probs.size(), 0.0);
    double value = 0.0;
    for (int i = 0; i < space.d; ++i) {
      if (!position_active(space, s.x, i)) continue;
      std::span<double> gi = want_grad ? std::span<double>(g).subspan(static_cast<std::size_t>(i) * m, m)
                                       : std::span<double>();
      value += term(s.x[i], pass.cur.position(i), pass.ref.position(i), pass.speed,
                    want_grad ? scale * s.weight : 0.0, gi);
    }
    total += s.weight * value;
    if (want_grad) model.backward(pass.cur, g, *buf);
  }
  return total;
}

}  // namespace

double ce_regularizer(const PosteriorModel& model, const PosteriorModel& ref, const Scheduler& sched,
                      std::span<const RegState> states, GradientBuffer* buf, double scale) {
  return accumulate(model, ref, sched, states, buf, scale,
                    [](int, std::span<const double> p, std::span<const double> q, double, double w,
                       std::span<double> g) {
                      double v = 0.0;
                      for (std::size_t y = 0; y < p.size(); ++y) {
                        v -= q[y] * std::log(p[y]);
                        if (!g.empty()) g[y] -= w * q[y] / p[y];
                      }
                      return v;
                    });
}

double gkl_regularizer(const PosteriorModel& model, const PosteriorModel& ref, const Scheduler& sched,
                       std::span<const RegState> states, GradientBuffer* buf, double scale) {
  return accumulate(model, ref, sched, states, buf, scale,
                    [](int x_i, std::span<const double> p, std::span<const double> q, double speed,
                       double w, std::span<double> g) {
                      double v = 0.0;
                      for (std::size_t y = 0; y < p.size(); ++y) {
                        if (static_cast<int>(y) + 1 == x_i) continue;
                        const double u = speed * q[y];
                        const double uth = speed * p[y];
                        if (u > 0.0) v += u * std::log(u / uth);
                        v += uth - u;
                        if (!g.empty()) g[y] += w * speed * (1.0 - q[y] / p[y]);
                      }
                      return v;
                    });
}

double posterior_kl(const PosteriorModel& model, const PosteriorModel& ref, const Scheduler& sched,
                    std::span<const RegState> states) {
  return accumulate(model, ref, sched, states, nullptr, 0.0,
                    [](int, std::span<const double> p, std::span<const double> q, double, double,
                       std::span<double>) {
                      double v = 0.0;
                      for (std::size_t y = 0; y < p.size(); ++y) {
                        if (q[y] > 0.0) v += q[y] * std::log(q[y] / p[y]);
                      }
                      return v;
                    });
}

double pathwise_kl(const PosteriorModel& model, const PosteriorModel& ref, const InferenceSpec& spec,
                   const RolloutBatch& batch) {
  check_compatible(model, ref);
  if (batch.trajectories.empty()) return 0.0;
  const StateSpace& space = model.space();
  double total = 0.0;
  for (const Trajectory& traj : batch.trajectories) {
    for (int k = 0; k < spec.steps(); ++k) {
      const RegState s{spec.time(k), traj.states[static_cast<std::size_t>(k)], traj.condition, 1.0};
      const PairPass pass = pair_forward(model, ref, spec.sched, s);
      for (int i = 0; i < space.d; ++i) {
        if (!position_active(space, s.x, i)) continue;
        const auto p = pass.cur.position(i);
        const auto q = pass.ref.position(i);
        for (int y = 1; y <= space.M; ++y) {
          if (y == s.x[i]) continue;
          const double a = pass.speed * p[static_cast<std::size_t>(y - 1)];
          const double b = pass.speed * q[static_cast<std::size_t>(y - 1)];
          total += spec.dt() * ((a > 0.0 ? a * std::log(a / b) : 0.0) - a + b);
        }
      }
    }
  }
  return total / static_cast<double>(batch.trajectories.size());
}

double factorized_risk(const PosteriorModel& model, const PosteriorModel& ref, const Scheduler& sched,
                       std::span<const RegState> states) {
  const double v = accumulate(model, ref, sched, states, nullptr, 0.0,
                              [](int x_i, std::span<const double> p, std::span<const double> q,
                                 double speed, double, std::span<double>) {
                                double v = 0.0;
                                for (std::size_t y = 0; y < p.size(); ++y) {
                                  if (static_cast<int>(y) + 1 == x_i) continue;
                                  const double diff = speed * (p[y] - q[y]);
                                  v += diff * diff;
                                }
                                return v;
                              });
  return sched.horizon() * v;
}

void RegSpec::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw Error(fmt::format("regularizer weight must be >= 0, got {}", lambda));
  }
  if (refresh < 1) throw Error("reference refresh interval must be >= 1");
  if (reference_rollouts < 1) throw Error("reference rollout count must be >= 1");
}

std::vector<RegState> states_from_batch(const RolloutBatch& batch, const InferenceSpec& spec) {
  std::vector<RegState> out;
  if (batch.trajectories.empty()) return out;
  const double w =
      1.0 / (static_cast<double>(batch.trajectories.size()) * static_cast<double>(spec.steps()));
  out.reserve(batch.trajectories.size() * static_cast<std::size_t>(spec.steps()));
  for (const Trajectory& traj : batch.trajectories) {
    for (int k = 0; k < spec.steps(); ++k) {
      out.push_back({spec.time(k), traj.states[static_cast<std::size_t>(k)], traj.condition, w});
    }
  }
  return out;
}

std::vector<RegState> exact_reference_states(const PosteriorModel& ref, const InferenceSpec& spec,
                                             Condition c) {
  const StateSpace& space = ref.space();
  space.require_enumerable();
  const auto marginals = push_forward_marginals(model_rates(ref, spec.sched, c),
                                                source_distribution(space), spec.grid, spec.mode);
  const auto states = enumerate_states(space);
  std::vector<RegState> out;
  const double inv_k = 1.0 / static_cast<double>(spec.steps());
  for (int k = 0; k < spec.steps(); ++k) {
    const auto& pk = marginals[static_cast<std::size_t>(k)];
    for (std::size_t j = 0; j < pk.size(); ++j) {
      if (pk[j] > 0.0) out.push_back({spec.time(k), states[j], c, pk[j] * inv_k});
    }
  }
  return out;
}

double regularizer_value(RegKind kind, const PosteriorModel& model, const PosteriorModel& ref,
                         const Scheduler& sched, std::span<const RegState> states,
                         GradientBuffer* buf, double scale) {
  switch (kind) {
    case RegKind::ce: return ce_regularizer(model, ref, sched, states, buf, scale);
    case RegKind::gkl: return gkl_regularizer(model, ref, sched, states, buf, scale);
    case RegKind::none:
    case RegKind::path_kl: return 0.0;
  }
  return 0.0;
}

const std::vector<RegState>& ReferenceModel::states(const InferenceSpec& spec, const RegSpec& reg,
                                                    std::uint64_t seed, std::uint64_t iteration,
                                                    int conditions) {
  if (refreshed_at_ && iteration < *refreshed_at_ + static_cast<std::uint64_t>(reg.refresh)) {
    return cache_;
  }
  RolloutBatch batch{std::vector<Trajectory>(static_cast<std::size_t>(reg.reference_rollouts)),
                     model_.version(), spec.grid};
  for (int m = 0; m < reg.reference_rollouts; ++m) {
    const std::uint64_t s = seed_from({seed, 0x7265ULL, iteration, static_cast<std::uint64_t>(m)});
    Condition c;
    if (conditions > 0) c = static_cast<int>(s % static_cast<std::uint64_t>(conditions));
    batch.trajectories[static_cast<std::size_t>(m)] = sample_trajectory(model_, spec, s, c);
  }
  cache_ = states_from_batch(batch, spec);
  refreshed_at_ = iteration;
  return cache_;
}

StepReport total_objective_step(PosteriorModel& model, const PosteriorModel& ref,
                                const InferenceSpec& spec, const RolloutBatch& batch,
                                const RegSpec& reg, std::span<const RegState> reg_states,
                                Algorithm algorithm, const PpoOptions& ppo, OptimizerState& opt) {
  reg.validate();
  StepReport report;
  GradientHook hook;
  if (reg.active()) {
    // Ascent on J_RL - lambda * L_reg: the regularizer enters with weight -lambda.
    hook = [&](GradientBuffer& buf) {
      const double v = regularizer_value(reg.kind, model, ref, spec.sched, reg_states, &buf, -reg.lambda);
      if (report.reg_value == 0.0) report.reg_value = v;
    };
  }
  if (algorithm == Algorithm::reinforce) {
    reinforce_update(model, spec, batch, opt, hook);
  } else {
    report.ppo = ppo_update(model, spec, batch, ppo, opt, hook);
  }
  return report;
}

const char* to_string(RegKind k) {
  switch (k) {
    case RegKind::none: return "none";
    case RegKind::ce: return "ce";
    case RegKind::gkl: return "gkl";
    case RegKind::path_kl: return "path_kl";
  }
  return "?";
}

RegKind reg_kind_from_string(const std::string& s) {
  if (s == "none") return RegKind::none;
  if (s == "ce") return RegKind::ce;
  if (s == "gkl") return RegKind::gkl;
  if (s == "path_kl") return RegKind::path_kl;
  throw Error(fmt::format("unknown regularizer '{}'", s));
}

const char* to_string(StateSource s) {
  return s == StateSource::reference_rollouts ? "reference-rollouts" : "current-rollouts";
}

StateSource state_source_from_string(const std::string& s) {
  if (s == "reference-rollouts") return StateSource::reference_rollouts;
  if (s == "current-rollouts") return StateSource::current_rollouts;
  throw Error(fmt::format("unknown regularizer state source '{}'", s));
}

const char* to_string(Algorithm a) { return a == Algorithm::reinforce ? "reinforce" : "ppo"; }

Algorithm algorithm_from_string(const std::string& s) {
  if (s == "reinforce") return Algorithm::reinforce;
  if (s == "ppo") return Algorithm::ppo;
  throw Error(fmt::format("unknown algorithm '{}'", s));
}

}  // namespace dfm
