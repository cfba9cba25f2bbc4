#include "dfm/model.hpp"

#include <fmt/format.h>

#include <atomic>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "dfm/error.hpp"
#include "dfm/random.hpp"

namespace dfm {

namespace {

std::uint64_t next_version() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

struct NeuralLayout {
  std::size_t in_dim, hidden, out_dim;
  std::size_t embed, cond, w1, b1, w2, b2, w3, b3, total;
};

NeuralLayout layout_of(const ModelSpec& s) {
  const NeuralArch& a = s.neural;
  NeuralLayout l{};
  const auto A = static_cast<std::size_t>(s.space.alphabet());
  const auto d = static_cast<std::size_t>(s.space.d);
  const auto e = static_cast<std::size_t>(a.embed);
  const auto ce = a.conditions > 0 ? static_cast<std::size_t>(a.cond_embed) : 0;
  l.in_dim = d * e + static_cast<std::size_t>(a.time_features) + ce;
  l.hidden = static_cast<std::size_t>(a.hidden);
  l.out_dim = d * static_cast<std::size_t>(s.space.M);
  l.embed = 0;
  l.cond = l.embed + A * e;
  l.w1 = l.cond + static_cast<std::size_t>(std::max(a.conditions, 0)) * ce;
  l.b1 = l.w1 + l.hidden * l.in_dim;
  l.w2 = l.b1 + l.hidden;
  l.b2 = l.w2 + l.hidden * l.hidden;
  l.w3 = l.b2 + l.hidden;
  l.b3 = l.w3 + l.out_dim * l.hidden;
  l.total = l.b3 + l.out_dim;
  return l;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
inline double silu(double z) { return z * sigmoid(z); }
inline double silu_grad(double z) {
  const double s = sigmoid(z);
  return s * (1.0 + z * (1.0 - s));
}

// Softmax followed by the probability floor, per position.
void normalize_logits(std::span<const double> logits, int d, int M, Posterior& out) {
  out.softmax.assign(logits.size(), 0.0);
  out.probs.assign(logits.size(), 0.0);
  for (int i = 0; i < d; ++i) {
    const auto off = static_cast<std::size_t>(i * M);
    double mx = logits[off];
    for (int j = 1; j < M; ++j) mx = std::max(mx, logits[off + static_cast<std::size_t>(j)]);
    double z = 0.0;
    for (int j = 0; j < M; ++j) {
      const double e = std::exp(logits[off + static_cast<std::size_t>(j)] - mx);
      out.softmax[off + static_cast<std::size_t>(j)] = e;
      z += e;
    }
    double zf = 0.0;
    for (int j = 0; j < M; ++j) {
      double& q = out.softmax[off + static_cast<std::size_t>(j)];
      q /= z;
      const double m = std::max(q, kProbabilityFloor);
      out.probs[off + static_cast<std::size_t>(j)] = m;
      zf += m;
    }
    for (int j = 0; j < M; ++j) out.probs[off + static_cast<std::size_t>(j)] /= zf;
  }
}

// d(loss)/d(logits) from d(loss)/d(probs), through the floor and softmax.
std::vector<double> logits_gradient(const Posterior& fwd, std::span<const double> grad_probs) {
  const int d = fwd.d, M = fwd.M;
  std::vector<double> out(static_cast<std::size_t>(d * M), 0.0);
  std::vector<double> gq(static_cast<std::size_t>(M));
  for (int i = 0; i < d; ++i) {
    const auto off = static_cast<std::size_t>(i * M);
    double zf = 0.0, gp = 0.0;
    for (int j = 0; j < M; ++j) {
      const auto k = off + static_cast<std::size_t>(j);
      zf += std::max(fwd.softmax[k], kProbabilityFloor);
      gp += grad_probs[k] * fwd.probs[k];
    }
    double gqq = 0.0;
    for (int j = 0; j < M; ++j) {
      const auto k = off + static_cast<std::size_t>(j);
      const double gm = (grad_probs[k] - gp) / zf;
      gq[static_cast<std::size_t>(j)] = fwd.softmax[k] >= kProbabilityFloor ? gm : 0.0;
      gqq += gq[static_cast<std::size_t>(j)] * fwd.softmax[k];
    }
    for (int j = 0; j < M; ++j) {
      const auto k = off + static_cast<std::size_t>(j);
      out[k] = fwd.softmax[k] * (gq[static_cast<std::size_t>(j)] - gqq);
    }
  }
  return out;
}

}  // namespace

std::size_t ModelSpec::parameter_count() const {
  if (backend == Backend::tabular) {
    space.require_enumerable();
    const auto cells = static_cast<std::size_t>(std::max(tabular.conditions, 1)) *
                       static_cast<std::size_t>(tabular.time_bins) * static_cast<std::size_t>(space.size());
    return cells * static_cast<std::size_t>(space.d) * static_cast<std::size_t>(space.M);
  }
  return layout_of(*this).total;
}

std::string ModelSpec::describe() const {
  std::string s = fmt::format("backend={} d={} M={} mask={} horizon={:.17g}", to_string(backend),
                              space.d, space.M, space.has_mask ? 1 : 0, horizon);
  if (backend == Backend::tabular) {
    s += fmt::format(" bins={} conditions={}", tabular.time_bins, tabular.conditions);
  } else {
    s += fmt::format(" embed={} hidden={} time_features={} conditions={} cond_embed={}",
                     neural.embed, neural.hidden, neural.time_features, neural.conditions,
                     neural.cond_embed);
  }
  return s;
}

ModelSpec ModelSpec::parse(const std::string& descriptor) {
  std::map<std::string, std::string> kv;
  std::istringstream in(descriptor);
  std::string tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw Error(fmt::format("bad descriptor token '{}'", tok));
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw Error(fmt::format("descriptor missing '{}': {}", key, descriptor));
    return it->second;
  };
  ModelSpec s;
  try {
    s.backend = backend_from_string(get("backend"));
    s.space.d = std::stoi(get("d"));
    s.space.M = std::stoi(get("M"));
    s.space.has_mask = std::stoi(get("mask")) != 0;
    s.horizon = std::stod(get("horizon"));
    if (s.backend == Backend::tabular) {
      s.tabular.time_bins = std::stoi(get("bins"));
      s.tabular.conditions = std::stoi(get("conditions"));
    } else {
      s.neural.embed = std::stoi(get("embed"));
      s.neural.hidden = std::stoi(get("hidden"));
      s.neural.time_features = std::stoi(get("time_features"));
      s.neural.conditions = std::stoi(get("conditions"));
      s.neural.cond_embed = std::stoi(get("cond_embed"));
    }
  } catch (const std::logic_error&) {
    throw Error(fmt::format("malformed model descriptor: {}", descriptor));
  }
  s.space.validate();
  return s;
}

PosteriorModel::PosteriorModel(ModelSpec spec, std::vector<double> params)
    : spec_(std::move(spec)), params_(std::move(params)), version_(next_version()) {
  spec_.space.validate();
  if (params_.size() != spec_.parameter_count()) {
    throw Error(fmt::format("model {} expects {} parameters, got {}", spec_.describe(),
                            spec_.parameter_count(), params_.size()));
  }
}

PosteriorModel PosteriorModel::tabular(StateSpace space, double horizon, TabularArch arch) {
  if (arch.time_bins < 1) throw Error("tabular model needs at least one time bin");
  ModelSpec spec;
  spec.space = space;
  spec.horizon = horizon;
  spec.backend = Backend::tabular;
  spec.tabular = arch;
  const std::size_t n = spec.parameter_count();
  return PosteriorModel(std::move(spec), std::vector<double>(n, 0.0));
}

PosteriorModel PosteriorModel::neural(StateSpace space, double horizon, NeuralArch arch,
                                      std::uint64_t seed) {
  if (arch.embed < 1 || arch.hidden < 1 || arch.time_features < 0 || arch.time_features % 2 != 0) {
    throw Error("neural architecture needs embed, hidden >= 1 and an even time_features count");
  }
  ModelSpec spec;
  spec.space = space;
  spec.horizon = horizon;
  spec.backend = Backend::neural;
  spec.neural = arch;
  const NeuralLayout l = layout_of(spec);
  std::vector<double> p(l.total, 0.0);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = l.embed; i < l.w1; ++i) p[i] = normal(rng);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(l.in_dim));
  for (std::size_t i = l.w1; i < l.b1; ++i) p[i] = s1 * normal(rng);
  const double s2 = 1.0 / std::sqrt(static_cast<double>(l.hidden));
  for (std::size_t i = l.w2; i < l.b2; ++i) p[i] = s2 * normal(rng);
  for (std::size_t i = l.w3; i < l.b3; ++i) p[i] = 0.1 * s2 * normal(rng);
  return PosteriorModel(std::move(spec), std::move(p));
}

PosteriorModel PosteriorModel::from_spec(const ModelSpec& spec, std::vector<double> params) {
  return PosteriorModel(spec, std::move(params));
}

void PosteriorModel::set_params(std::vector<double> params) {
  if (params.size() != params_.size()) throw Error("set_params: parameter count mismatch");
  params_ = std::move(params);
  touch();
}

void PosteriorModel::touch() { version_ = next_version(); }

int PosteriorModel::time_bin(double t) const {
  const int bins = spec_.backend == Backend::tabular ? spec_.tabular.time_bins : 1;
  const int b = static_cast<int>(std::floor(t / spec_.horizon * bins));
  return std::clamp(b, 0, bins - 1);
}

int PosteriorModel::condition_index(Condition c) const {
  const int n = spec_.conditions();
  if (n == 0) {
    if (c) throw Error("unconditional model received a condition");
    return 0;
  }
  if (!c) throw Error("conditional model requires a condition");
  if (*c < 0 || *c >= n) throw Error(fmt::format("condition {} outside 0..{}", *c, n - 1));
  return *c;
}

std::size_t PosteriorModel::tabular_offset(Condition c, int bin, std::size_t state_index) const {
  const std::size_t cell =
      (static_cast<std::size_t>(condition_index(c)) * static_cast<std::size_t>(spec_.tabular.time_bins) +
       static_cast<std::size_t>(bin)) * static_cast<std::size_t>(spec_.space.size()) + state_index;
  return cell * static_cast<std::size_t>(spec_.space.d * spec_.space.M);
}

Posterior PosteriorModel::forward(const SequenceState& x, double t, Condition c) const {
  Posterior out;
  out.d = spec_.space.d;
  out.M = spec_.space.M;
  out.x = x;
  out.condition = c;
  out.version = version_;
  if (spec_.backend == Backend::tabular) {
    out.table_offset = tabular_offset(c, time_bin(t), index_of(spec_.space, x));
    normalize_logits(std::span<const double>(params_).subspan(out.table_offset,
                                                              static_cast<std::size_t>(out.d * out.M)),
                     out.d, out.M, out);
  } else {
    validate_state(spec_.space, x);
    forward_neural(x, t, c, out);
  }
  return out;
}

void PosteriorModel::forward_neural(const SequenceState& x, double t, Condition c,
                                    Posterior& out) const {
  const NeuralLayout l = layout_of(spec_);
  const NeuralArch& a = spec_.neural;
  const int ci = condition_index(c);
  const auto e = static_cast<std::size_t>(a.embed);
  // acts = [input | z1 | a1 | z2 | a2]
  out.acts.assign(l.in_dim + 4 * l.hidden, 0.0);
  double* in = out.acts.data();
  double* z1 = in + l.in_dim;
  double* a1 = z1 + l.hidden;
  double* z2 = a1 + l.hidden;
  double* a2 = z2 + l.hidden;

  std::size_t pos = 0;
  for (int i = 0; i < spec_.space.d; ++i) {
    const double* row = params_.data() + l.embed + static_cast<std::size_t>(x[i] - 1) * e;
    for (std::size_t j = 0; j < e; ++j) in[pos++] = row[j];
  }
  const double tau = t / spec_.horizon;
  for (int f = 0; f < a.time_features / 2; ++f) {
    const double w = std::numbers::pi * std::pow(2.0, f);
    in[pos++] = std::sin(w * tau);
    in[pos++] = std::cos(w * tau);
  }
  if (a.conditions > 0) {
    const auto ce = static_cast<std::size_t>(a.cond_embed);
    const double* row = params_.data() + l.cond + static_cast<std::size_t>(ci) * ce;
    for (std::size_t j = 0; j < ce; ++j) in[pos++] = row[j];
  }

  const double* W1 = params_.data() + l.w1;
  const double* b1 = params_.data() + l.b1;
  for (std::size_t h = 0; h < l.hidden; ++h) {
    double s = b1[h];
    const double* w = W1 + h * l.in_dim;
    for (std::size_t j = 0; j < l.in_dim; ++j) s += w[j] * in[j];
    z1[h] = s;
    a1[h] = silu(s);
  }
  const double* W2 = params_.data() + l.w2;
  const double* b2 = params_.data() + l.b2;
  for (std::size_t h = 0; h < l.hidden; ++h) {
    double s = b2[h];
    const double* w = W2 + h * l.hidden;
    for (std::size_t j = 0; j < l.hidden; ++j) s += w[j] * a1[j];
    z2[h] = s;
    a2[h] = silu(s);
  }
  const double* W3 = params_.data() + l.w3;
  const double* b3 = params_.data() + l.b3;
  std::vector<double> logits(l.out_dim);
  for (std::size_t o = 0; o < l.out_dim; ++o) {
    double s = b3[o];
    const double* w = W3 + o * l.hidden;
    for (std::size_t j = 0; j < l.hidden; ++j) s += w[j] * a2[j];
    logits[o] = s;
  }
  normalize_logits(logits, spec_.space.d, spec_.space.M, out);
}

void PosteriorModel::backward(const Posterior& fwd, std::span<const double> grad_probs,
                              GradientBuffer& buf) const {
  if (fwd.version != version_) {
    throw Error(fmt::format("stale forward cache (version {} vs model {})", fwd.version, version_));
  }
  if (grad_probs.size() != fwd.probs.size()) throw Error("backward: gradient has wrong length");
  if (buf.g.size() != params_.size()) throw Error("backward: gradient buffer has wrong length");
  const std::vector<double> gl = logits_gradient(fwd, grad_probs);
  if (spec_.backend == Backend::tabular) {
    for (std::size_t k = 0; k < gl.size(); ++k) buf.g[fwd.table_offset + k] += gl[k];
  } else {
    backward_neural(fwd, gl, buf);
  }
  ++buf.count;
}

void PosteriorModel::backward_neural(const Posterior& fwd, std::span<const double> gl,
                                     GradientBuffer& buf) const {
  const NeuralLayout l = layout_of(spec_);
  const NeuralArch& a = spec_.neural;
  const double* in = fwd.acts.data();
  const double* z1 = in + l.in_dim;
  const double* a1 = z1 + l.hidden;
  const double* z2 = a1 + l.hidden;
  const double* a2 = z2 + l.hidden;
  double* g = buf.g.data();

  std::vector<double> da2(l.hidden, 0.0);
  const double* W3 = params_.data() + l.w3;
  for (std::size_t o = 0; o < l.out_dim; ++o) {
    const double go = gl[o];
    if (go == 0.0) continue;
    g[l.b3 + o] += go;
    double* gw = g + l.w3 + o * l.hidden;
    const double* w = W3 + o * l.hidden;
    for (std::size_t j = 0; j < l.hidden; ++j) {
      gw[j] += go * a2[j];
      da2[j] += go * w[j];
    }
  }
  std::vector<double> dz2(l.hidden), da1(l.hidden, 0.0);
  for (std::size_t h = 0; h < l.hidden; ++h) dz2[h] = da2[h] * silu_grad(z2[h]);
  const double* W2 = params_.data() + l.w2;
  for (std::size_t h = 0; h < l.hidden; ++h) {
    const double gz = dz2[h];
    if (gz == 0.0) continue;
    g[l.b2 + h] += gz;
    double* gw = g + l.w2 + h * l.hidden;
    const double* w = W2 + h * l.hidden;
    for (std::size_t j = 0; j < l.hidden; ++j) {
      gw[j] += gz * a1[j];
      da1[j] += gz * w[j];
    }
  }
  std::vector<double> dz1(l.hidden), din(l.in_dim, 0.0);
  for (std::size_t h = 0; h < l.hidden; ++h) dz1[h] = da1[h] * silu_grad(z1[h]);
  const double* W1 = params_.data() + l.w1;
  for (std::size_t h = 0; h < l.hidden; ++h) {
    const double gz = dz1[h];
    if (gz == 0.0) continue;
    g[l.b1 + h] += gz;
    double* gw = g + l.w1 + h * l.in_dim;
    const double* w = W1 + h * l.in_dim;
    for (std::size_t j = 0; j < l.in_dim; ++j) {
      gw[j] += gz * in[j];
      din[j] += gz * w[j];
    }
  }
  const auto e = static_cast<std::size_t>(a.embed);
  std::size_t pos = 0;
  for (int i = 0; i < spec_.space.d; ++i) {
    double* row = g + l.embed + static_cast<std::size_t>(fwd.x[i] - 1) * e;
    for (std::size_t j = 0; j < e; ++j) row[j] += din[pos++];
  }
  pos += static_cast<std::size_t>(a.time_features);
  if (a.conditions > 0) {
    const auto ce = static_cast<std::size_t>(a.cond_embed);
    double* row = g + l.cond + static_cast<std::size_t>(condition_index(fwd.condition)) * ce;
    for (std::size_t j = 0; j < ce; ++j) row[j] += din[pos++];
  }
}

const char* to_string(Backend b) { return b == Backend::tabular ? "tabular" : "neural"; }

Backend backend_from_string(const std::string& s) {
  if (s == "tabular") return Backend::tabular;
  if (s == "neural") return Backend::neural;
  throw Error(fmt::format("unknown model backend '{}' (expected tabular|neural)", s));
}

}  // namespace dfm
