#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dfm/state_space.hpp"

namespace dfm {

// Black-box terminal reward r(x[, c]) with a declared bound |r| <= r_max.
class RewardFn {
 public:
  using Fn = std::function<double(const SequenceState&, Condition)>;

  RewardFn(std::string name, double r_max, Fn fn);

  double operator()(const SequenceState& x, Condition c = {}) const;
  const std::string& name() const { return name_; }
  double r_max() const { return r_max_; }

 private:
  std::string name_;
  double r_max_;
  Fn fn_;
};

// Number of (overlapping) occurrences of `pattern` in x.
int count_motif(const SequenceState& x, const std::vector<int>& pattern);

RewardFn motif_count_reward(std::vector<int> pattern, int d);
// 1 - |fraction of positions equal to token - target|
RewardFn token_freq_reward(int token, double target);
// Motif count of the pattern selected by the condition label.
RewardFn match_condition_reward(std::vector<std::vector<int>> patterns, int d);
// Reward given as a table over the enumerated states of `space`.
RewardFn table_reward(const StateSpace& space, std::vector<double> values);

// Built-in registry: "motif_count(1 2 3)", "token_freq(2, 0.5)",
// "match_condition(1 2 3; 4 4)".
RewardFn make_reward(const std::string& spec, const StateSpace& space);

}  // namespace dfm
