#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfm/verify.hpp"

namespace dfm {

// Named verification protocols shared by `dfm verify` and the acceptance run.
struct CheckOutcome {
  std::string name;
  std::vector<SweepReport> reports;
  bool pass = false;
};

// value, grad, estimator, sampler, tv-ce, tv-gkl
const std::vector<std::string>& check_names();

// samples drives the Monte-Carlo checks (estimator, sampler).
CheckOutcome run_check(const std::string& name, std::uint64_t seed, int samples = 100000);

// Instances the protocols run on, exposed for tests.
BoundedRateModel sweep_model(std::uint64_t seed, int index);
std::vector<double> sweep_reward(std::uint64_t seed, int index);
PosteriorModel tiny_policy(std::uint64_t seed);
InferenceSpec tiny_inference();
RewardFn tiny_reward();

}  // namespace dfm
