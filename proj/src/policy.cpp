#include "dfm/policy.hpp"

#include <fmt/format.h>

#include <cmath>

#include "dfm/error.hpp"

namespace dfm {

namespace {
const double kLogFloor = std::log(kProbabilityFloor);
constexpr double kStayTolerance = 1e-12;
}  // namespace

InferenceSpec::InferenceSpec(Scheduler s, TimeGrid g, KernelMode m)
    : sched(s), grid(g), mode(m) {
  if (std::abs(sched.horizon() - grid.horizon()) > 1e-12) {
    throw Error(fmt::format("scheduler horizon {} differs from grid horizon {}", sched.horizon(),
                            grid.horizon()));
  }
}

RateFn model_rates(const PosteriorModel& model, const Scheduler& sched, Condition c) {
  return [&model, sched, c](const SequenceState& x, double t) {
    const Posterior fwd = model.forward(x, std::min(t, sched.t_max()), c);
    return posterior_to_velocity(model.space(), sched, fwd.probs, x, t);
  };
}

DistributionTable source_distribution(const StateSpace& space) {
  if (space.has_mask) return DistributionTable::point_mass(space, all_mask(space));
  return DistributionTable::uniform(space);
}

SequenceState sample_source(const StateSpace& space, Rng& rng) {
  if (space.has_mask) return all_mask(space);
  std::vector<int> tokens(static_cast<std::size_t>(space.d));
  std::uniform_int_distribution<int> tok(1, space.M);
  for (int& v : tokens) v = tok(rng);
  return SequenceState(std::move(tokens));
}

TerminalMap mask_resolver(const PosteriorModel& model, const Scheduler& sched, Condition c) {
  if (!model.space().has_mask) return {};
  return [&model, sched, c](const SequenceState& x) {
    bool any = false;
    for (int tok : x.tokens) any = any || model.space().is_mask(tok);
    if (!any) return x;
    const Posterior fwd = model.forward(x, sched.t_max(), c);
    return resolve_masks(model.space(), fwd.probs, x);
  };
}

StepLogProb position_log_prob(const StateSpace& space, int x_i, int next_i, bool active,
                              std::span<const double> p, double speed, double dt, KernelMode mode,
                              double scale, std::span<double> grad) {
  if (!active) {
    if (next_i == x_i) return {0.0, false};
    return {kLogFloor, true};
  }
  // Mirrors step_kernel(): jump_y = (speed * p_y) * dt, stay = 1 - sum.
  double jump = 0.0;
  for (int y = 1; y <= space.M; ++y) {
    if (y != x_i) jump += speed * p[static_cast<std::size_t>(y - 1)] * dt;
  }
  double stay = 1.0 - jump;
  bool clamped = false;
  if (stay < 0.0) {
    if (stay >= -kStayTolerance) {
      stay = 0.0;
    } else if (mode == KernelMode::strict) {
      throw StrictModeError(fmt::format("staying probability {:.6g} < 0 (dt too large)", stay), -1);
    } else {
      clamped = true;
      stay = 0.0;
    }
  }
  const bool want_grad = !grad.empty() && scale != 0.0;
  if (next_i == x_i) {
    if (stay <= 0.0) return {kLogFloor, true};
    if (want_grad) {
      for (int y = 1; y <= space.M; ++y) {
        if (y != x_i) grad[static_cast<std::size_t>(y - 1)] += scale * (-speed * dt / stay);
      }
    }
    return {std::log(stay), false};
  }
  if (next_i > space.M) return {kLogFloor, true};  // jumping into the mask
  const double py = p[static_cast<std::size_t>(next_i - 1)];
  if (clamped) {
    double total = 0.0;
    for (int y = 1; y <= space.M; ++y) {
      if (y != x_i) total += p[static_cast<std::size_t>(y - 1)];
    }
    if (want_grad) {
      for (int y = 1; y <= space.M; ++y) {
        if (y != x_i) grad[static_cast<std::size_t>(y - 1)] -= scale / total;
      }
      grad[static_cast<std::size_t>(next_i - 1)] += scale / py;
    }
    return {std::log(py) - std::log(total), false};
  }
  const double prob = speed * py * dt;
  if (!(prob > 0.0)) return {kLogFloor, true};
  if (want_grad) grad[static_cast<std::size_t>(next_i - 1)] += scale / py;
  return {std::log(prob), false};
}

StepLogProb step_log_prob(const Posterior& fwd, const StateSpace& space, const InferenceSpec& spec,
                          int k, const SequenceState& next, double scale, std::span<double> grad) {
  const double speed = spec.sched.speed(spec.time(k));
  StepLogProb out;
  const auto m = static_cast<std::size_t>(space.M);
  for (int i = 0; i < space.d; ++i) {
    const std::span<double> gi =
        grad.empty() ? std::span<double>() : grad.subspan(static_cast<std::size_t>(i) * m, m);
    const StepLogProb lp = position_log_prob(space, fwd.x[i], next[i], position_active(space, fwd.x, i),
                                             fwd.position(i), speed, spec.dt(), spec.mode, scale, gi);
    out.value += lp.value;
    out.floored = out.floored || lp.floored;
  }
  return out;
}

StepLogProb step_log_prob(const PosteriorModel& model, const InferenceSpec& spec,
                          const SequenceState& x, const SequenceState& next, int k, Condition c) {
  const Posterior fwd = model.forward(x, std::min(spec.time(k), spec.sched.t_max()), c);
  return step_log_prob(fwd, model.space(), spec, k, next);
}

StepLogProb step_log_prob_grad(const PosteriorModel& model, const InferenceSpec& spec,
                               const SequenceState& x, const SequenceState& next, int k,
                               Condition c, double scale, GradientBuffer& buf) {
  const Posterior fwd = model.forward(x, std::min(spec.time(k), spec.sched.t_max()), c);
  std::vector<double> g(fwd.probs.size(), 0.0);
  const StepLogProb lp = step_log_prob(fwd, model.space(), spec, k, next, scale, g);
  if (scale != 0.0) model.backward(fwd, g, buf);
  return lp;
}

Trajectory sample_trajectory(const PosteriorModel& model, const InferenceSpec& spec,
                             std::uint64_t seed, Condition c) {
  const StateSpace& space = model.space();
  Rng rng(seed);
  Trajectory traj;
  traj.condition = c;
  traj.states.reserve(static_cast<std::size_t>(spec.steps() + 1));
  traj.step_log_probs.reserve(static_cast<std::size_t>(spec.steps()));
  traj.states.push_back(sample_source(space, rng));
  for (int k = 0; k < spec.steps(); ++k) {
    const SequenceState& x = traj.states.back();
    const double t = spec.time(k);
    const Posterior fwd = model.forward(x, std::min(t, spec.sched.t_max()), c);
    const RateEvaluation rates = posterior_to_velocity(space, spec.sched, fwd.probs, x, t);
    const StepKernel kernel = step_kernel(rates, x, spec.dt(), spec.mode);
    if (kernel.clamped) ++traj.clamped_steps;
    SequenceState next = x;
    for (int i = 0; i < space.d; ++i) next[i] = sample_categorical(kernel.position_probs(i), rng) + 1;
    const StepLogProb lp = step_log_prob(fwd, space, spec, k, next);
    traj.floored = traj.floored || lp.floored;
    traj.step_log_probs.push_back(lp.value);
    traj.states.push_back(std::move(next));
  }
  if (space.has_mask) traj.output = mask_resolver(model, spec.sched, c)(traj.states.back());
  return traj;
}

DistributionTable terminal_distribution(const PosteriorModel& model, const InferenceSpec& spec,
                                        Condition c) {
  return push_forward_euler(model_rates(model, spec.sched, c), source_distribution(model.space()),
                            spec.grid, spec.mode, KernelForm::factorized,
                            mask_resolver(model, spec.sched, c));
}

}  // namespace dfm
