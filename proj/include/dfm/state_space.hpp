#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dfm {

inline constexpr std::uint64_t kDefaultEnumerationCap = 1'000'000;

// Product space V^d over data tokens {1..M}, optionally extended with a mask
// token M+1 that serves as the source state of the mixture path.
struct StateSpace {
  int d = 1;
  int M = 2;
  bool has_mask = false;
  std::uint64_t enumeration_cap = kDefaultEnumerationCap;

  int alphabet() const { return M + (has_mask ? 1 : 0); }
  int mask_token() const { return M + 1; }
  bool is_mask(int token) const { return has_mask && token == M + 1; }

  // (M + has_mask)^d, saturating at UINT64_MAX.
  std::uint64_t size() const;
  bool enumerable() const { return size() <= enumeration_cap; }
  void require_enumerable() const;
  void validate() const;

  std::string describe() const;

  friend bool operator==(const StateSpace& a, const StateSpace& b) {
    return a.d == b.d && a.M == b.M && a.has_mask == b.has_mask;
  }
};

struct SequenceState {
  std::vector<int> tokens;

  SequenceState() = default;
  explicit SequenceState(std::vector<int> t) : tokens(std::move(t)) {}

  int size() const { return static_cast<int>(tokens.size()); }
  int operator[](int i) const { return tokens[static_cast<std::size_t>(i)]; }
  int& operator[](int i) { return tokens[static_cast<std::size_t>(i)]; }

  friend auto operator<=>(const SequenceState&, const SequenceState&) = default;
  friend bool operator==(const SequenceState&, const SequenceState&) = default;
};

// Condition label attached to a whole trajectory; empty for unconditional runs.
using Condition = std::optional<int>;

void validate_state(const StateSpace& space, const SequenceState& x);
SequenceState all_mask(const StateSpace& space);
std::string to_string(const SequenceState& x);

// Lexicographic enumeration (token 1 first, position 0 most significant).
std::vector<SequenceState> enumerate_states(const StateSpace& space);
std::size_t index_of(const StateSpace& space, const SequenceState& x);
SequenceState state_at(const StateSpace& space, std::size_t index);

// Index stride of position i in the lexicographic ordering.
std::size_t position_stride(const StateSpace& space, int position);

}  // namespace dfm
