#include "dfm/path.hpp"

#include <fmt/format.h>

#include <cmath>
#include <numbers>

#include "dfm/error.hpp"

namespace dfm {

Scheduler::Scheduler(SchedulerKind kind, double horizon, double eps_fraction)
    : kind_(kind), horizon_(horizon), eps_(eps_fraction * horizon) {
  if (!(horizon > 0.0)) throw Error("scheduler horizon must be positive");
  if (!(eps_fraction > 0.0 && eps_fraction < 1.0)) {
    throw Error("scheduler eps fraction must lie in (0, 1)");
  }
}

Scheduler::Value Scheduler::kappa(double t) const {
  if (!(t >= 0.0 && t <= t_max() + 1e-12)) {
    throw Error(fmt::format("scheduler time {} outside [0, {}]", t, t_max()));
  }
  switch (kind_) {
    case SchedulerKind::linear:
      return {t / horizon_, 1.0 / horizon_};
    case SchedulerKind::cosine: {
      // kappa = sin(pi t / 2T): kappa_0 = 0, kappa_T = 1, kappa_dot > 0 on [0, T).
      const double w = std::numbers::pi / (2.0 * horizon_);
      return {std::sin(w * t), w * std::cos(w * t)};
    }
  }
  throw Error("unknown scheduler kind");
}

double Scheduler::speed(double t) const {
  const Value v = kappa(std::clamp(t, 0.0, t_max()));
  return v.kappa_dot / (1.0 - v.kappa);
}

ConditionalPathSample sample_xt(const StateSpace& space, const Scheduler& sched,
                                const SequenceState& x1, double t, Rng& rng) {
  if (!space.has_mask) throw Error("sample_xt requires a mask token");
  const double kappa = sched.kappa(std::min(t, sched.t_max())).kappa;
  ConditionalPathSample s{t, x1, x1, std::vector<bool>(static_cast<std::size_t>(space.d), false)};
  for (int i = 0; i < space.d; ++i) {
    const bool copy = uniform01(rng) < kappa;
    s.copied[static_cast<std::size_t>(i)] = copy;
    if (!copy) s.xt[i] = space.mask_token();
  }
  return s;
}

RateEvaluation conditional_velocity(const StateSpace& space, const Scheduler& sched,
                                    const SequenceState& x1, const SequenceState& x, double t) {
  RateEvaluation r(space.d, space.alphabet());
  const double s = sched.speed(t);
  for (int i = 0; i < space.d; ++i) {
    if (x[i] != x1[i]) r.at(i, x1[i]) = s;
  }
  r.fill_diagonal(x);
  return r;
}

RateEvaluation posterior_to_velocity(const StateSpace& space, std::span<const double> posterior,
                                     const SequenceState& x, double speed) {
  const auto m = static_cast<std::size_t>(space.M);
  if (posterior.size() != static_cast<std::size_t>(space.d) * m) {
    throw Error(fmt::format("posterior has {} entries, expected d*M = {}", posterior.size(),
                            static_cast<std::size_t>(space.d) * m));
  }
  RateEvaluation r(space.d, space.alphabet());
  for (int i = 0; i < space.d; ++i) {
    const auto p = posterior.subspan(static_cast<std::size_t>(i) * m, m);
    double total = 0.0;
    for (double v : p) {
      if (!(v >= 0.0)) throw Error(fmt::format("malformed posterior at position {}", i));
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw Error(fmt::format("posterior at position {} sums to {}", i, total));
    }
    if (!position_active(space, x, i)) continue;
    for (int y = 1; y <= space.M; ++y) {
      if (y != x[i]) r.at(i, y) = speed * p[static_cast<std::size_t>(y - 1)];
    }
  }
  r.fill_diagonal(x);
  return r;
}

RateEvaluation posterior_to_velocity(const StateSpace& space, const Scheduler& sched,
                                     std::span<const double> posterior, const SequenceState& x,
                                     double t) {
  return posterior_to_velocity(space, posterior, x, sched.speed(t));
}

SequenceState resolve_masks(const StateSpace& space, std::span<const double> posterior,
                            const SequenceState& x) {
  SequenceState out = x;
  const auto m = static_cast<std::size_t>(space.M);
  for (int i = 0; i < space.d; ++i) {
    if (!space.is_mask(x[i])) continue;
    const auto p = posterior.subspan(static_cast<std::size_t>(i) * m, m);
    out[i] = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()) + 1;
  }
  return out;
}

const char* to_string(SchedulerKind kind) {
  return kind == SchedulerKind::linear ? "linear" : "cosine";
}

SchedulerKind scheduler_kind_from_string(const std::string& s) {
  if (s == "linear") return SchedulerKind::linear;
  if (s == "cosine") return SchedulerKind::cosine;
  throw Error(fmt::format("unknown scheduler '{}' (expected linear|cosine)", s));
}

}  // namespace dfm
