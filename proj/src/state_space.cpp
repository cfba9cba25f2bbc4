#include "dfm/state_space.hpp"

#include <fmt/format.h>

#include <limits>

#include "dfm/error.hpp"

namespace dfm {

std::uint64_t StateSpace::size() const {
  std::uint64_t n = 1;
  const auto a = static_cast<std::uint64_t>(alphabet());
  for (int i = 0; i < d; ++i) {
    if (n > std::numeric_limits<std::uint64_t>::max() / a) {
      return std::numeric_limits<std::uint64_t>::max();
    }
    n *= a;
  }
  return n;
}

void StateSpace::require_enumerable() const {
  if (!enumerable()) {
    throw NotEnumerableError(fmt::format(
        "state space {} is not enumerable: size exceeds cap {}", describe(),
        enumeration_cap));
  }
}

void StateSpace::validate() const {
  if (d < 1) throw Error(fmt::format("state space needs d >= 1, got {}", d));
  if (M < 2) throw Error(fmt::format("state space needs M >= 2, got {}", M));
}

std::string StateSpace::describe() const {
  return fmt::format("(d={}, M={}, mask={})", d, M, has_mask ? "yes" : "no");
}

void validate_state(const StateSpace& space, const SequenceState& x) {
  if (x.size() != space.d) {
    throw Error(fmt::format("state has length {}, expected {}", x.size(), space.d));
  }
  for (int i = 0; i < x.size(); ++i) {
    if (x[i] < 1 || x[i] > space.alphabet()) {
      throw Error(fmt::format("token {} at position {} outside 1..{}", x[i], i,
                              space.alphabet()));
    }
  }
}

SequenceState all_mask(const StateSpace& space) {
  if (!space.has_mask) throw Error("all_mask requires a mask token");
  return SequenceState(std::vector<int>(static_cast<std::size_t>(space.d), space.mask_token()));
}

std::string to_string(const SequenceState& x) {
  std::string s;
  for (int i = 0; i < x.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(x[i]);
  }
  return s;
}

std::size_t position_stride(const StateSpace& space, int position) {
  std::size_t stride = 1;
  for (int j = space.d - 1; j > position; --j) stride *= static_cast<std::size_t>(space.alphabet());
  return stride;
}

std::vector<SequenceState> enumerate_states(const StateSpace& space) {
  space.require_enumerable();
  const auto n = static_cast<std::size_t>(space.size());
  std::vector<SequenceState> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(state_at(space, i));
  return out;
}

std::size_t index_of(const StateSpace& space, const SequenceState& x) {
  space.require_enumerable();
  validate_state(space, x);
  std::size_t idx = 0;
  const auto a = static_cast<std::size_t>(space.alphabet());
  for (int i = 0; i < space.d; ++i) idx = idx * a + static_cast<std::size_t>(x[i] - 1);
  return idx;
}

SequenceState state_at(const StateSpace& space, std::size_t index) {
  const auto a = static_cast<std::size_t>(space.alphabet());
  std::vector<int> tokens(static_cast<std::size_t>(space.d));
  for (int i = space.d - 1; i >= 0; --i) {
    tokens[static_cast<std::size_t>(i)] = static_cast<int>(index % a) + 1;
    index /= a;
  }
  return SequenceState(std::move(tokens));
}

}  // namespace dfm
