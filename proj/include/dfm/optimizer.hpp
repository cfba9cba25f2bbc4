#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfm/model.hpp"

namespace dfm {

enum class OptimizerKind { sgd, adam };
enum class Direction { ascent, descent };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t steps = 0;
  std::vector<double> m;
  std::vector<double> v;
};

// Applies one update from `buffer` to the model parameters and zeroes the buffer.
void optimizer_step(PosteriorModel& model, GradientBuffer& buffer, OptimizerState& state,
                    Direction direction);

const char* to_string(OptimizerKind k);
OptimizerKind optimizer_kind_from_string(const std::string& s);

}  // namespace dfm
