#include "dfm/optimizer.hpp"

#include <fmt/format.h>

#include <cmath>

#include "dfm/error.hpp"

namespace dfm {

void optimizer_step(PosteriorModel& model, GradientBuffer& buffer, OptimizerState& state,
                    Direction direction) {
  auto& theta = model.mutable_params();
  if (buffer.g.size() != theta.size()) throw Error("optimizer_step: gradient length mismatch");
  const double sign = direction == Direction::ascent ? 1.0 : -1.0;
  ++state.steps;
  if (state.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += sign * state.lr * buffer.g[i];
  } else {
    if (state.m.size() != theta.size()) {
      state.m.assign(theta.size(), 0.0);
      state.v.assign(theta.size(), 0.0);
    }
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.steps));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.steps));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = buffer.g[i];
      state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
      state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = state.m[i] / c1;
      const double vhat = state.v[i] / c2;
      theta[i] += sign * state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
  model.touch();
  buffer.zero();
}

const char* to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw Error(fmt::format("unknown optimizer '{}' (expected sgd|adam)", s));
}

}  // namespace dfm
