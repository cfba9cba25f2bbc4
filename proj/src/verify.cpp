#include "dfm/verify.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include "dfm/error.hpp"

namespace dfm {

void SweepReport::set(const std::string& key, double value) { set(key, fmt::format("{:.17g}", value)); }

void SweepReport::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : extra) {
    if (k == key) {
      v = value;
      return;
    }
  }
  extra.emplace_back(key, value);
}

LineFit fit_loglog(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("fit_loglog: size mismatch");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] > 0.0 && y[i] > 0.0) {
      lx.push_back(std::log(x[i]));
      ly.push_back(std::log(y[i]));
    }
  }
  const auto n = static_cast<double>(lx.size());
  if (lx.size() < 2) throw Error("fit_loglog needs at least two positive points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (sxx == 0.0) throw Error("fit_loglog: all x values coincide");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (lx.size() > 2) {
    double rss = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      const double r = ly[i] - f.intercept - f.slope * lx[i];
      rss += r * r;
    }
    f.slope_stderr = std::sqrt(rss / (n - 2.0) / sxx);
  }
  return f;
}

std::string format_report(const SweepReport& r) {
  std::string out = fmt::format("name={}\nslope={:.17g}\nslope_stderr={:.17g}\npass={}\n", r.name,
                                r.slope, r.slope_stderr, r.pass ? 1 : 0);
  for (const auto& [k, v] : r.extra) out += fmt::format("{}={}\n", k, v);
  out += "# x measured oracle error\n";
  for (const auto& row : r.rows) {
    out += fmt::format("{:.17g} {:.17g} {:.17g} {:.17g}\n", row.x, row.measured, row.oracle, row.error);
  }
  return out;
}

void write_report(const std::string& path, const SweepReport& report) {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write report '{}'", path));
  out << format_report(report);
}

// ---------------------------------------------------------------------------
// bounded-rate tabular models

double BoundedRateModel::speed(double t) const {
  return 1.0 + amplitude * std::sin(2.0 * std::numbers::pi * t / model.spec().horizon + phase);
}

RateFn BoundedRateModel::rates() const {
  return [this](const SequenceState& x, double t) {
    const Posterior fwd = model.forward(x, t);
    return posterior_to_velocity(model.space(), fwd.probs, x, speed(t));
  };
}

BoundedRateModel BoundedRateModel::random(const StateSpace& space, double horizon, std::uint64_t seed,
                                          double logit_scale) {
  if (space.has_mask) throw Error("bounded-rate models live on mask-free spaces");
  BoundedRateModel bm{PosteriorModel::tabular(space, horizon), 0.5, 0.0};
  Rng rng(seed_from({seed, 0x62726dULL}));
  std::normal_distribution<double> n01;
  auto& p = bm.model.mutable_params();
  for (double& v : p) v = logit_scale * n01(rng);
  bm.model.touch();
  bm.amplitude = std::uniform_real_distribution<double>(0.2, 0.6)(rng);
  bm.phase = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  return bm;
}

SweepReport discretization_value_sweep(const RateFn& rates, const DistributionTable& p0,
                                       std::span<const double> reward, double horizon,
                                       std::span<const double> dts, int fine_steps) {
  p0.space().require_enumerable();
  if (reward.size() != p0.size()) throw Error("reward table size differs from the state count");
  SweepReport rep;
  rep.name = "discretization_value";
  const double j_cont = kolmogorov_exact(rates, p0, horizon, fine_steps).expect(reward);
  std::vector<double> xs, ys;
  for (double dt : dts) {
    const double j = push_forward_euler(rates, p0, TimeGrid(horizon, dt)).expect(reward);
    const double err = std::abs(j - j_cont);
    rep.rows.push_back({dt, j, j_cont, err});
    xs.push_back(dt);
    ys.push_back(err);
  }
  double max_err = 0.0;
  for (double e : ys) max_err = std::max(max_err, e);
  if (max_err < 1e-14) {
    rep.set("degenerate", 1.0);
    rep.pass = true;
    return rep;
  }
  const LineFit fit = fit_loglog(xs, ys);
  rep.slope = fit.slope;
  rep.slope_stderr = fit.slope_stderr;
  rep.pass = fit.slope >= 0.9 && fit.slope <= 1.1;
  return rep;
}

// ---------------------------------------------------------------------------
// forward-mode gradients of tabular push-forwards

namespace {

// Dense description of a bounded-rate tabular chain: posterior per state and
// position, parameter offsets and single-site neighbours.
struct TabularChain {
  const BoundedRateModel& bm;
  StateSpace space;
  std::vector<SequenceState> states;
  std::size_t S = 0, P = 0;
  int d = 0, M = 0;
  std::vector<double> q;  // S * d * M
  std::vector<std::size_t> offset;
  struct Neighbour {
    std::size_t b;
    int i;
    int z;  // 0-based token at position i in b
  };
  std::vector<std::vector<Neighbour>> nbr;

  explicit TabularChain(const BoundedRateModel& m) : bm(m), space(m.model.space()) {
    const ModelSpec& spec = m.model.spec();
    if (spec.backend != Backend::tabular || spec.tabular.time_bins != 1 || spec.tabular.conditions != 0 ||
        space.has_mask) {
      throw Error("gradient oracle needs a mask-free single-bin unconditional tabular model");
    }
    space.require_enumerable();
    states = enumerate_states(space);
    S = states.size();
    P = m.model.params().size();
    d = space.d;
    M = space.M;
    q.resize(S * static_cast<std::size_t>(d * M));
    offset.resize(S);
    nbr.resize(S);
    for (std::size_t a = 0; a < S; ++a) {
      const Posterior fwd = m.model.forward(states[a], 0.0);
      for (double v : fwd.softmax) {
        if (v < 1e-10) throw Error("gradient oracle assumes the probability floor is inactive");
      }
      std::copy(fwd.probs.begin(), fwd.probs.end(), q.begin() + static_cast<std::ptrdiff_t>(a * static_cast<std::size_t>(d * M)));
      offset[a] = m.model.tabular_offset({}, 0, a);
      for (int i = 0; i < d; ++i) {
        for (int z = 0; z < M; ++z) {
          if (z + 1 == states[a][i]) continue;
          SequenceState b = states[a];
          b[i] = z + 1;
          nbr[a].push_back({index_of(space, b), i, z});
        }
      }
    }
  }

  double prob(std::size_t a, int i, int z) const {
    return q[a * static_cast<std::size_t>(d * M) + static_cast<std::size_t>(i * M + z)];
  }
  std::size_t param(std::size_t a, int i, int m) const {
    return offset[a] + static_cast<std::size_t>(i * M + m);
  }

  // dp/dt and dG/dt of the augmented Kolmogorov system at time t.
  void derivative(double t, std::span<const double> p, std::span<const double> G, std::span<double> dp,
                  std::span<double> dG) const {
    std::fill(dp.begin(), dp.end(), 0.0);
    std::fill(dG.begin(), dG.end(), 0.0);
    const double c = bm.speed(t);
    for (std::size_t a = 0; a < S; ++a) {
      const double* Ga = G.data() + a * P;
      double* dGa = dG.data() + a * P;
      for (const Neighbour& n : nbr[a]) {
        const double r = c * prob(a, n.i, n.z);
        dp[n.b] += r * p[a];
        dp[a] -= r * p[a];
        double* dGb = dG.data() + n.b * P;
        for (std::size_t k = 0; k < P; ++k) {
          dGb[k] += r * Ga[k];
          dGa[k] -= r * Ga[k];
        }
        for (int m = 0; m < M; ++m) {
          const double dr = c * prob(a, n.i, n.z) * ((n.z == m ? 1.0 : 0.0) - prob(a, n.i, m));
          const std::size_t k = param(a, n.i, m);
          dGb[k] += p[a] * dr;
          dGa[k] -= p[a] * dr;
        }
      }
    }
  }

  ValueGradient finish(std::span<const double> p, std::span<const double> G,
                       std::span<const double> reward) const {
    ValueGradient out;
    out.grad.assign(P, 0.0);
    for (std::size_t b = 0; b < S; ++b) {
      out.value += reward[b] * p[b];
      for (std::size_t k = 0; k < P; ++k) out.grad[k] += reward[b] * G[b * P + k];
    }
    return out;
  }
};

void check_inputs(const TabularChain& ch, const DistributionTable& p0, std::span<const double> reward) {
  if (!(p0.space() == ch.space)) throw Error("initial distribution lives on a different space");
  if (reward.size() != ch.S) throw Error("reward table size differs from the state count");
}

}  // namespace

ValueGradient euler_value_gradient(const BoundedRateModel& bm, const DistributionTable& p0,
                                   std::span<const double> reward, const TimeGrid& grid,
                                   KernelForm form) {
  const TabularChain ch(bm);
  check_inputs(ch, p0, reward);
  const std::size_t S = ch.S, P = ch.P;
  const int d = ch.d, M = ch.M;
  std::vector<double> p(p0.mass().begin(), p0.mass().end()), np(S);
  std::vector<double> G(S * P, 0.0), nG(S * P);
  const double dt = grid.dt();
  std::vector<double> K(static_cast<std::size_t>(d * M));
  std::vector<double> prefix(static_cast<std::size_t>(d + 1)), suffix(static_cast<std::size_t>(d + 1));
  for (int step = 0; step < grid.steps(); ++step) {
    const double c = bm.speed(grid.time(step));
    std::fill(np.begin(), np.end(), 0.0);
    std::fill(nG.begin(), nG.end(), 0.0);
    for (std::size_t a = 0; a < S; ++a) {
      const SequenceState& x = ch.states[a];
      const double* Ga = G.data() + a * P;
      if (form == KernelForm::joint) {
        double out_rate = 0.0;
        for (const auto& n : ch.nbr[a]) out_rate += c * ch.prob(a, n.i, n.z);
        const double stay = 1.0 - dt * out_rate;
        if (stay < 0.0) throw StrictModeError("joint Euler kernel has negative diagonal", -1);
        np[a] += stay * p[a];
        for (std::size_t k = 0; k < P; ++k) nG[a * P + k] += stay * Ga[k];
        for (const auto& n : ch.nbr[a]) {
          const double w = dt * c * ch.prob(a, n.i, n.z);
          np[n.b] += w * p[a];
          double* nGb = nG.data() + n.b * P;
          for (std::size_t k = 0; k < P; ++k) nGb[k] += w * Ga[k];
          for (int m = 0; m < M; ++m) {
            const double dw = dt * c * ch.prob(a, n.i, n.z) * ((n.z == m ? 1.0 : 0.0) - ch.prob(a, n.i, m));
            const std::size_t k = ch.param(a, n.i, m);
            nGb[k] += p[a] * dw;
            nG[a * P + k] -= p[a] * dw;
          }
        }
        continue;
      }
      // Factorized kernel K_i(z) = dt c q_i(z) for z != x_i, stay otherwise.
      for (int i = 0; i < d; ++i) {
        double jump = 0.0;
        for (int z = 0; z < M; ++z) {
          if (z + 1 == x[i]) continue;
          K[static_cast<std::size_t>(i * M + z)] = dt * c * ch.prob(a, i, z);
          jump += K[static_cast<std::size_t>(i * M + z)];
        }
        if (1.0 - jump < 0.0) throw StrictModeError("Euler kernel has negative staying probability", i);
        K[static_cast<std::size_t>(i * M + x[i] - 1)] = 1.0 - jump;
      }
      for (std::size_t b = 0; b < S; ++b) {
        const SequenceState& y = ch.states[b];
        prefix[0] = 1.0;
        for (int i = 0; i < d; ++i) prefix[static_cast<std::size_t>(i + 1)] = prefix[static_cast<std::size_t>(i)] * K[static_cast<std::size_t>(i * M + y[i] - 1)];
        suffix[static_cast<std::size_t>(d)] = 1.0;
        for (int i = d - 1; i >= 0; --i) suffix[static_cast<std::size_t>(i)] = suffix[static_cast<std::size_t>(i + 1)] * K[static_cast<std::size_t>(i * M + y[i] - 1)];
        const double T = prefix[static_cast<std::size_t>(d)];
        np[b] += T * p[a];
        double* nGb = nG.data() + b * P;
        if (T != 0.0) {
          for (std::size_t k = 0; k < P; ++k) nGb[k] += T * Ga[k];
        }
        // dK_i(z)/dlogit_m = dt c q_i(z) (delta_zm - q_i(m)) for every z, stay included.
        for (int i = 0; i < d; ++i) {
          const double others = prefix[static_cast<std::size_t>(i)] * suffix[static_cast<std::size_t>(i + 1)];
          if (others == 0.0) continue;
          const int z = y[i] - 1;
          for (int m = 0; m < M; ++m) {
            const double dk = dt * c * ch.prob(a, i, z) * ((z == m ? 1.0 : 0.0) - ch.prob(a, i, m));
            nGb[ch.param(a, i, m)] += p[a] * others * dk;
          }
        }
      }
    }
    std::swap(p, np);
    std::swap(G, nG);
  }
  return ch.finish(p, G, reward);
}

ValueGradient continuous_value_gradient(const BoundedRateModel& bm, const DistributionTable& p0,
                                        std::span<const double> reward, double horizon,
                                        int fine_steps_per_unit) {
  const TabularChain ch(bm);
  check_inputs(ch, p0, reward);
  const std::size_t S = ch.S, P = ch.P;
  const long n = std::max(1L, std::lround(std::ceil(static_cast<double>(fine_steps_per_unit) * horizon)));
  const double h = horizon / static_cast<double>(n);
  // state vector: p (S) followed by G (S * P)
  const std::size_t N = S + S * P;
  std::vector<double> y(N, 0.0), k1(N), k2(N), k3(N), k4(N), tmp(N);
  std::copy(p0.mass().begin(), p0.mass().end(), y.begin());
  auto f = [&](double t, const std::vector<double>& in, std::vector<double>& out) {
    ch.derivative(t, std::span<const double>(in).first(S), std::span<const double>(in).subspan(S),
                  std::span<double>(out).first(S), std::span<double>(out).subspan(S));
  };
  for (long step = 0; step < n; ++step) {
    const double t = static_cast<double>(step) * h;
    f(t, y, k1);
    for (std::size_t i = 0; i < N; ++i) tmp[i] = y[i] + 0.5 * h * k1[i];
    f(t + 0.5 * h, tmp, k2);
    for (std::size_t i = 0; i < N; ++i) tmp[i] = y[i] + 0.5 * h * k2[i];
    f(t + 0.5 * h, tmp, k3);
    for (std::size_t i = 0; i < N; ++i) tmp[i] = y[i] + h * k3[i];
    f(t + h, tmp, k4);
    for (std::size_t i = 0; i < N; ++i) y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  }
  return ch.finish(std::span<const double>(y).first(S), std::span<const double>(y).subspan(S), reward);
}

namespace {
double inf_norm_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}
}  // namespace

SweepReport discretization_grad_sweep(const BoundedRateModel& bm, const DistributionTable& p0,
                                      std::span<const double> reward, double horizon,
                                      std::span<const double> dts, KernelForm form,
                                      int fine_steps_per_unit) {
  SweepReport rep;
  rep.name = form == KernelForm::factorized ? "discretization_grad" : "discretization_grad_joint";
  const ValueGradient ref = continuous_value_gradient(bm, p0, reward, horizon, fine_steps_per_unit);
  const ValueGradient ref2 = continuous_value_gradient(bm, p0, reward, horizon, 2 * fine_steps_per_unit);
  rep.set("reference_drift", inf_norm_diff(ref.grad, ref2.grad));
  double ref_norm = 0.0;
  for (double g : ref2.grad) ref_norm = std::max(ref_norm, std::abs(g));
  rep.set("reference_grad_inf_norm", ref_norm);
  std::vector<double> xs, ys;
  for (double dt : dts) {
    const ValueGradient g = euler_value_gradient(bm, p0, reward, TimeGrid(horizon, dt), form);
    const double err = inf_norm_diff(g.grad, ref2.grad);
    rep.rows.push_back({dt, g.value, ref2.value, err});
    xs.push_back(dt);
    ys.push_back(err);
  }
  double max_err = 0.0;
  for (double e : ys) max_err = std::max(max_err, e);
  if (max_err < 1e-14) {
    rep.set("degenerate", 1.0);
    rep.pass = true;
    return rep;
  }
  const LineFit fit = fit_loglog(xs, ys);
  rep.slope = fit.slope;
  rep.slope_stderr = fit.slope_stderr;
  bool halving_ok = true;
  double min_ratio = std::numeric_limits<double>::infinity(), max_ratio = 0.0;
  for (std::size_t i = 1; i < ys.size(); ++i) {
    if (std::abs(xs[i - 1] / xs[i] - 2.0) > 1e-9) continue;
    const double r = ys[i - 1] / ys[i];
    min_ratio = std::min(min_ratio, r);
    max_ratio = std::max(max_ratio, r);
    halving_ok = halving_ok && r >= 1.6 && r <= 2.5;
  }
  rep.set("halving_ratio_min", min_ratio);
  rep.set("halving_ratio_max", max_ratio);
  rep.pass = fit.slope >= 0.9 && fit.slope <= 1.1 && halving_ok;
  return rep;
}

// ---------------------------------------------------------------------------
// TV bounds

SweepReport tv_bound_sweep(const PosteriorModel& ref, const InferenceSpec& spec, RegKind kind,
                           const TvSweepOptions& opts) {
  if (kind != RegKind::ce && kind != RegKind::gkl) throw Error("tv_bound_sweep needs kind ce or gkl");
  if (opts.sigmas.size() < 4) throw Error("tv_bound_sweep needs at least four perturbation scales");
  ref.space().require_enumerable();
  SweepReport rep;
  rep.name = kind == RegKind::ce ? "tv_bound_ce" : "tv_bound_gkl";
  const std::vector<RegState> states = exact_reference_states(ref, spec);
  const DistributionTable p_ref = terminal_distribution(ref, spec);
  const double ce_base = kind == RegKind::ce ? ce_regularizer(ref, ref, spec.sched, states) : 0.0;

  std::vector<std::vector<double>> dirs(static_cast<std::size_t>(opts.directions));
  std::normal_distribution<double> n01;
  for (int j = 0; j < opts.directions; ++j) {
    Rng rng(seed_from({opts.seed, 0x747662ULL, static_cast<std::uint64_t>(j)}));
    auto& v = dirs[static_cast<std::size_t>(j)];
    v.resize(ref.params().size());
    for (double& e : v) e = n01(rng);
  }
  std::vector<double> gaps, tvs, mean_gap;
  double C = 0.0;
  for (double sigma : opts.sigmas) {
    double gsum = 0.0;
    for (const auto& xi : dirs) {
      PosteriorModel model = ref;
      auto& p = model.mutable_params();
      for (std::size_t k = 0; k < p.size(); ++k) p[k] += sigma * xi[k];
      model.touch();
      const double gap = kind == RegKind::ce ? ce_regularizer(model, ref, spec.sched, states) - ce_base
                                             : gkl_regularizer(model, ref, spec.sched, states);
      const double tv = tv_distance(terminal_distribution(model, spec), p_ref);
      rep.rows.push_back({sigma, tv, gap, tv});
      gaps.push_back(gap);
      tvs.push_back(tv);
      gsum += gap;
      if (gap > 0.0) C = std::max(C, tv / std::sqrt(gap));
    }
    mean_gap.push_back(gsum / static_cast<double>(dirs.size()));
  }
  bool monotone = true;
  for (std::size_t i = 1; i < mean_gap.size(); ++i) monotone = monotone && mean_gap[i] > mean_gap[i - 1];
  bool bound = true;
  double min_ratio = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < gaps.size(); ++i) {
    bound = bound && tvs[i] <= C * std::sqrt(std::max(gaps[i], 0.0)) * (1.0 + 1e-12);
    if (gaps[i] > 0.0) min_ratio = std::min(min_ratio, tvs[i] / std::sqrt(gaps[i]));
  }
  const LineFit fit = fit_loglog(gaps, tvs);
  rep.slope = fit.slope;
  rep.slope_stderr = fit.slope_stderr;
  rep.set("C", C);
  rep.set("ratio_min", min_ratio);
  rep.set("gap_monotone", monotone ? 1.0 : 0.0);
  rep.set("bound_holds", bound ? 1.0 : 0.0);
  rep.pass = fit.slope <= opts.max_slope && monotone && bound;
  return rep;
}

// ---------------------------------------------------------------------------
// estimator vs oracle

void enumerate_trajectories(const PosteriorModel& model, const InferenceSpec& spec, Condition c,
                            const TrajectoryVisitor& fn, std::uint64_t cap) {
  const StateSpace& space = model.space();
  space.require_enumerable();
  const double paths = std::pow(static_cast<double>(space.size()), spec.steps() + 1);
  if (paths > static_cast<double>(cap)) {
    throw NotEnumerableError(fmt::format("{} states over {} steps give {:.3g} paths, cap is {}",
                                         space.size(), spec.steps(), paths, cap));
  }
  const TerminalMap resolve = mask_resolver(model, spec.sched, c);
  const DistributionTable p0 = source_distribution(space);
  std::vector<SequenceState> path;
  std::function<void(int, double)> rec = [&](int k, double prob) {
    if (k == spec.steps()) {
      fn(path, resolve ? resolve(path.back()) : path.back(), prob);
      return;
    }
    const SequenceState x = path.back();
    const double t = spec.time(k);
    const Posterior fwd = model.forward(x, std::min(t, spec.sched.t_max()), c);
    const StepKernel kernel = step_kernel(posterior_to_velocity(space, spec.sched, fwd.probs, x, t), x,
                                          spec.dt(), spec.mode);
    for_each_successor(space, x, kernel, [&](std::size_t idx, double pr) {
      path.push_back(state_at(space, idx));
      rec(k + 1, prob * pr);
      path.pop_back();
    });
  };
  for (std::size_t j = 0; j < p0.size(); ++j) {
    if (p0[j] <= 0.0) continue;
    path.assign(1, state_at(space, j));
    rec(0, p0[j]);
  }
}

EstimatorReport estimator_oracle_check(const PosteriorModel& model, const InferenceSpec& spec,
                                       const RewardFn& reward, int samples, std::uint64_t seed) {
  EstimatorReport rep;
  const StateSpace& space = model.space();
  const auto states = enumerate_states(space);
  std::vector<double> r(states.size());
  for (std::size_t j = 0; j < states.size(); ++j) {
    bool masked = false;
    for (int tok : states[j].tokens) masked = masked || space.is_mask(tok);
    r[j] = masked ? 0.0 : reward(states[j]);
  }
  rep.j = terminal_distribution(model, spec).expect(r);

  GradientBuffer exact = model.make_buffer();
  double j_rl = 0.0;
  enumerate_trajectories(model, spec, {}, [&](const std::vector<SequenceState>& path,
                                              const SequenceState& terminal, double prob) {
    ++rep.trajectories;
    const double R = reward(terminal);
    j_rl += prob * R;
    if (prob * R == 0.0) return;
    for (int k = 0; k < spec.steps(); ++k) {
      step_log_prob_grad(model, spec, path[static_cast<std::size_t>(k)],
                         path[static_cast<std::size_t>(k + 1)], k, {}, prob * R, exact);
    }
  });
  rep.j_rl = j_rl;
  rep.exact_grad = exact.g;

  if (samples > 0) {
    const std::size_t P = model.params().size();
    std::vector<double> sum(P, 0.0), sumsq(P, 0.0);
    GradientBuffer buf = model.make_buffer();
    RolloutBatch batch{std::vector<Trajectory>(), model.version(), spec.grid};
    batch.trajectories.reserve(static_cast<std::size_t>(std::min(samples, 256)));
    for (int m = 0; m < samples; ++m) {
      Trajectory traj = sample_trajectory(model, spec, seed_from({seed, static_cast<std::uint64_t>(m)}));
      const double R = reward(traj.terminal());
      buf.zero();
      if (R != 0.0) {
        for (int k = 0; k < spec.steps(); ++k) {
          step_log_prob_grad(model, spec, traj.states[static_cast<std::size_t>(k)],
                             traj.states[static_cast<std::size_t>(k + 1)], k, {}, R, buf);
        }
      }
      for (std::size_t k = 0; k < P; ++k) {
        sum[k] += buf.g[k];
        sumsq[k] += buf.g[k] * buf.g[k];
      }
      if (batch.trajectories.size() < batch.trajectories.capacity()) {
        traj.reward = R;
        batch.trajectories.push_back(std::move(traj));
      }
    }
    const auto n = static_cast<double>(samples);
    rep.mc_mean.resize(P);
    rep.mc_stderr.resize(P);
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < P; ++k) {
      const double mean = sum[k] / n;
      const double var = std::max(0.0, sumsq[k] / n - mean * mean) * n / (n - 1.0);
      rep.mc_mean[k] = mean;
      rep.mc_stderr[k] = std::sqrt(var / n);
      const double diff = std::abs(mean - rep.exact_grad[k]);
      if (rep.mc_stderr[k] > 0.0) {
        rep.max_z = std::max(rep.max_z, diff / rep.mc_stderr[k]);
      } else if (diff > 1e-12) {
        rep.max_z = std::numeric_limits<double>::infinity();
      }
      dot += mean * rep.exact_grad[k];
      na += mean * mean;
      nb += rep.exact_grad[k] * rep.exact_grad[k];
    }
    rep.cosine = (na > 0.0 && nb > 0.0) ? dot / std::sqrt(na * nb) : 0.0;

    compute_advantages(batch, {AdvantageKind::mean_baseline});
    rep.ppo_value = ppo_surrogate(model, spec, batch, 0.2, nullptr).value;
    double adv = 0.0;
    for (const auto& t : batch.trajectories) adv += t.advantage;
    rep.ppo_expected = static_cast<double>(spec.steps()) * adv / static_cast<double>(batch.trajectories.size());
  }
  rep.pass = std::abs(rep.j_rl - rep.j) < 1e-10 &&
             (samples == 0 || (rep.max_z <= 3.0 && rep.cosine > 0.99 &&
                               std::abs(rep.ppo_value - rep.ppo_expected) < 1e-12));
  return rep;
}

SweepReport sampler_oracle_check(const PosteriorModel& model, const InferenceSpec& spec, int samples,
                                 std::uint64_t seed, double z_max) {
  const StateSpace& space = model.space();
  space.require_enumerable();
  if (samples < 1) throw Error("sampler_oracle_check needs samples >= 1");
  const DistributionTable exact = terminal_distribution(model, spec);
  std::vector<double> counts(exact.size(), 0.0);
  for (int m = 0; m < samples; ++m) {
    const Trajectory traj = sample_trajectory(model, spec, seed_from({seed, static_cast<std::uint64_t>(m)}));
    counts[index_of(space, traj.terminal())] += 1.0;
  }
  SweepReport rep;
  rep.name = "sampler_oracle";
  const auto n = static_cast<double>(samples);
  double worst = 0.0;
  for (std::size_t j = 0; j < exact.size(); ++j) {
    const double p = exact[j];
    const double emp = counts[j] / n;
    const double sd = std::sqrt(p * (1.0 - p) / n);
    double z = 0.0;
    if (sd > 0.0) {
      z = std::abs(emp - p) / sd;
    } else if (emp != p) {
      z = std::numeric_limits<double>::infinity();
    }
    worst = std::max(worst, z);
    rep.rows.push_back({static_cast<double>(j), emp, p, z});
  }
  rep.set("max_z", worst);
  rep.set("samples", n);
  rep.pass = worst <= z_max;
  return rep;
}

}  // namespace dfm
