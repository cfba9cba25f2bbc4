#include "dfm/ctmc.hpp"

#include <fmt/format.h>

#include <cmath>

#include "dfm/error.hpp"

namespace dfm {

namespace {
// Round-off allowance on the staying probability before strict mode fires.
constexpr double kStayTolerance = 1e-12;
}  // namespace

void RateEvaluation::fill_diagonal(const SequenceState& x) {
  for (int i = 0; i < d_; ++i) {
    double off = 0.0;
    for (int y = 1; y <= a_; ++y) {
      if (y != x[i]) off += at(i, y);
    }
    at(i, x[i]) = -off;
  }
}

void RateEvaluation::check_conditions(const SequenceState& x, double tol) const {
  for (int i = 0; i < d_; ++i) {
    double sum = 0.0;
    for (int y = 1; y <= a_; ++y) {
      const double r = at(i, y);
      if (y != x[i] && r < 0.0) {
        throw Error(fmt::format("negative rate {} to token {} at position {}", r, y, i));
      }
      sum += r;
    }
    if (std::abs(sum) > tol) {
      throw Error(fmt::format("rates at position {} sum to {}, expected 0", i, sum));
    }
  }
}

TimeGrid::TimeGrid(double horizon, double dt) : horizon_(horizon), dt_(dt) {
  if (!(horizon > 0.0) || !(dt > 0.0)) {
    throw Error(fmt::format("time grid needs T > 0 and dt > 0, got T={} dt={}", horizon, dt));
  }
  const double k = horizon / dt;
  const double rounded = std::round(k);
  if (rounded < 1.0 || std::abs(rounded * dt - horizon) > 1e-9) {
    throw Error(fmt::format("T / dt = {} is not a positive integer", k));
  }
  steps_ = static_cast<int>(rounded);
}

double Trajectory::total_log_prob() const {
  double s = 0.0;
  for (double lp : step_log_probs) s += lp;
  return s;
}

StepKernel step_kernel(const RateEvaluation& rates, const SequenceState& x, double dt,
                       KernelMode mode) {
  if (!(dt > 0.0)) throw Error("step_kernel needs dt > 0");
  StepKernel k{rates.d(), rates.alphabet(),
               std::vector<double>(static_cast<std::size_t>(rates.d() * rates.alphabet()), 0.0),
               false};
  for (int i = 0; i < rates.d(); ++i) {
    const int xi = x[i];
    double jump = 0.0;
    for (int y = 1; y <= k.alphabet; ++y) {
      if (y == xi) continue;
      const double p = rates.at(i, y) * dt;
      k.prob[static_cast<std::size_t>(i * k.alphabet + y - 1)] = p;
      jump += p;
    }
    double stay = 1.0 - jump;
    if (stay < 0.0) {
      if (stay >= -kStayTolerance) {
        stay = 0.0;
      } else if (mode == KernelMode::strict) {
        throw StrictModeError(
            fmt::format("staying probability {:.6g} < 0 at position {} (dt too large)", stay, i),
            i);
      } else {
        for (int y = 1; y <= k.alphabet; ++y) {
          if (y != xi) k.prob[static_cast<std::size_t>(i * k.alphabet + y - 1)] /= jump;
        }
        stay = 0.0;
        k.clamped = true;
      }
    }
    k.prob[static_cast<std::size_t>(i * k.alphabet + xi - 1)] = stay;
  }
  return k;
}

Trajectory euler_sample(const RateFn& rates, const SourceSampler& source, const TimeGrid& grid,
                        std::uint64_t seed, KernelMode mode, const TerminalMap& terminal_map) {
  Rng rng(seed);
  Trajectory traj;
  traj.states.reserve(static_cast<std::size_t>(grid.steps() + 1));
  traj.step_log_probs.reserve(static_cast<std::size_t>(grid.steps()));
  traj.states.push_back(source(rng));
  for (int k = 0; k < grid.steps(); ++k) {
    const SequenceState& x = traj.states.back();
    const StepKernel kernel = step_kernel(rates(x, grid.time(k)), x, grid.dt(), mode);
    if (kernel.clamped) ++traj.clamped_steps;
    SequenceState next = x;
    double lp = 0.0;
    for (int i = 0; i < kernel.d; ++i) {
      const auto probs = kernel.position_probs(i);
      next[i] = sample_categorical(probs, rng) + 1;
      lp += std::log(probs[static_cast<std::size_t>(next[i] - 1)]);
    }
    traj.step_log_probs.push_back(lp);
    traj.states.push_back(std::move(next));
  }
  if (terminal_map) traj.output = terminal_map(traj.states.back());
  return traj;
}

void for_each_successor(const StateSpace& space, const SequenceState& x, const StepKernel& kernel,
                        const std::function<void(std::size_t, double)>& fn) {
  // Expand the product of per-position supports, starting from x's index.
  std::vector<std::pair<std::size_t, double>> frontier{{index_of(space, x), 1.0}};
  std::vector<std::pair<std::size_t, double>> next;
  for (int i = 0; i < space.d; ++i) {
    const std::size_t stride = position_stride(space, i);
    next.clear();
    for (const auto& [idx, prob] : frontier) {
      for (int y = 1; y <= space.alphabet(); ++y) {
        const double p = kernel.p(i, y);
        if (p <= 0.0) continue;
        const std::size_t moved = idx + static_cast<std::size_t>(y) * stride -
                                  static_cast<std::size_t>(x[i]) * stride;
        next.emplace_back(moved, prob * p);
      }
    }
    frontier.swap(next);
  }
  for (const auto& [idx, prob] : frontier) fn(idx, prob);
}

void apply_generator(const RateFn& rates, const StateSpace& space,
                     const std::vector<SequenceState>& states, double t,
                     std::span<const double> p, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t s = 0; s < states.size(); ++s) {
    if (p[s] == 0.0) continue;
    const SequenceState& x = states[s];
    const RateEvaluation r = rates(x, t);
    for (int i = 0; i < space.d; ++i) {
      const std::size_t stride = position_stride(space, i);
      for (int y = 1; y <= space.alphabet(); ++y) {
        if (y == x[i]) continue;
        const double flow = r.at(i, y) * p[s];
        if (flow == 0.0) continue;
        out[s + static_cast<std::size_t>(y) * stride - static_cast<std::size_t>(x[i]) * stride] += flow;
        out[s] -= flow;
      }
    }
  }
}

namespace {

std::vector<double> finish(std::vector<double> p) {
  // RK4 conserves total mass up to round-off; clip tiny negatives.
  for (double& v : p) {
    if (v < 0.0) {
      if (v < -1e-9) throw Error(fmt::format("integrated probability went negative ({})", v));
      v = 0.0;
    }
  }
  return p;
}

std::vector<double> euler_step(const RateFn& rates, const StateSpace& space,
                               const std::vector<SequenceState>& states, double t, double dt,
                               const std::vector<double>& p, KernelMode mode, KernelForm form) {
  std::vector<double> out(p.size(), 0.0);
  if (form == KernelForm::joint) {
    apply_generator(rates, space, states, t, p, out);
    for (std::size_t s = 0; s < p.size(); ++s) {
      out[s] = p[s] + dt * out[s];
      if (out[s] < 0.0) {
        if (out[s] >= -kStayTolerance) {
          out[s] = 0.0;
        } else {
          // Only reachable when a diagonal entry of I + dt U is negative.
          throw StrictModeError(
              fmt::format("joint Euler step produced negative mass {:.6g}", out[s]), -1);
        }
      }
    }
    return out;
  }
  for (std::size_t s = 0; s < states.size(); ++s) {
    if (p[s] == 0.0) continue;
    const StepKernel kernel = step_kernel(rates(states[s], t), states[s], dt, mode);
    for_each_successor(space, states[s], kernel,
                       [&](std::size_t idx, double prob) { out[idx] += prob * p[s]; });
  }
  return out;
}

}  // namespace

DistributionTable kolmogorov_exact(const RateFn& rates, const DistributionTable& p0, double horizon,
                                   int fine_steps_per_unit) {
  const StateSpace& space = p0.space();
  space.require_enumerable();
  if (!(horizon >= 0.0)) throw Error("kolmogorov_exact needs T >= 0");
  if (horizon == 0.0) return p0;
  const auto states = enumerate_states(space);
  const long n = std::max(1L, std::lround(std::ceil(static_cast<double>(fine_steps_per_unit) * horizon)));
  const double h = horizon / static_cast<double>(n);
  const std::size_t size = states.size();

  std::vector<double> p(p0.mass().begin(), p0.mass().end());
  std::vector<double> k1(size), k2(size), k3(size), k4(size), tmp(size);
  for (long step = 0; step < n; ++step) {
    const double t = static_cast<double>(step) * h;
    apply_generator(rates, space, states, t, p, k1);
    for (std::size_t s = 0; s < size; ++s) tmp[s] = p[s] + 0.5 * h * k1[s];
    apply_generator(rates, space, states, t + 0.5 * h, tmp, k2);
    for (std::size_t s = 0; s < size; ++s) tmp[s] = p[s] + 0.5 * h * k2[s];
    apply_generator(rates, space, states, t + 0.5 * h, tmp, k3);
    for (std::size_t s = 0; s < size; ++s) tmp[s] = p[s] + h * k3[s];
    apply_generator(rates, space, states, t + h, tmp, k4);
    for (std::size_t s = 0; s < size; ++s) {
      p[s] += h / 6.0 * (k1[s] + 2.0 * k2[s] + 2.0 * k3[s] + k4[s]);
    }
  }
  return DistributionTable::normalized(space, finish(std::move(p)));
}

std::vector<std::vector<double>> push_forward_marginals(const RateFn& rates,
                                                        const DistributionTable& p0,
                                                        const TimeGrid& grid, KernelMode mode,
                                                        KernelForm form) {
  const StateSpace& space = p0.space();
  space.require_enumerable();
  const auto states = enumerate_states(space);
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<std::size_t>(grid.steps() + 1));
  out.emplace_back(p0.mass().begin(), p0.mass().end());
  for (int k = 0; k < grid.steps(); ++k) {
    out.push_back(euler_step(rates, space, states, grid.time(k), grid.dt(), out.back(), mode, form));
  }
  return out;
}

DistributionTable push_forward_euler(const RateFn& rates, const DistributionTable& p0,
                                     const TimeGrid& grid, KernelMode mode, KernelForm form,
                                     const TerminalMap& terminal_map) {
  auto marginals = push_forward_marginals(rates, p0, grid, mode, form);
  std::vector<double> p = std::move(marginals.back());
  const StateSpace& space = p0.space();
  if (terminal_map) {
    std::vector<double> mapped(p.size(), 0.0);
    for (std::size_t s = 0; s < p.size(); ++s) {
      if (p[s] == 0.0) continue;
      mapped[index_of(space, terminal_map(state_at(space, s)))] += p[s];
    }
    p.swap(mapped);
  }
  return DistributionTable::normalized(space, std::move(p));
}

}  // namespace dfm
