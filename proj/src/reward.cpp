#include "dfm/reward.hpp"

#include <fmt/format.h>

#include <cmath>
#include <sstream>

#include "dfm/error.hpp"

namespace dfm {

RewardFn::RewardFn(std::string name, double r_max, Fn fn)
    : name_(std::move(name)), r_max_(r_max), fn_(std::move(fn)) {
  if (!(r_max >= 0.0)) throw Error("reward bound must be non-negative");
}

double RewardFn::operator()(const SequenceState& x, Condition c) const {
  const double r = fn_(x, c);
  if (!std::isfinite(r) || std::abs(r) > r_max_ + 1e-12) {
    throw Error(fmt::format("reward '{}' returned {} outside declared bound {}", name_, r, r_max_));
  }
  return r;
}

int count_motif(const SequenceState& x, const std::vector<int>& pattern) {
  const int n = static_cast<int>(pattern.size());
  int count = 0;
  for (int s = 0; s + n <= x.size(); ++s) {
    bool hit = true;
    for (int j = 0; j < n && hit; ++j) hit = x[s + j] == pattern[static_cast<std::size_t>(j)];
    count += hit ? 1 : 0;
  }
  return count;
}

RewardFn motif_count_reward(std::vector<int> pattern, int d) {
  if (pattern.empty()) throw Error("motif_count needs a non-empty pattern");
  const double bound = std::max(0, d - static_cast<int>(pattern.size()) + 1);
  std::string name = "motif_count(";
  for (std::size_t i = 0; i < pattern.size(); ++i) name += (i ? " " : "") + std::to_string(pattern[i]);
  name += ")";
  return RewardFn(name, bound, [pattern = std::move(pattern)](const SequenceState& x, Condition) {
    return static_cast<double>(count_motif(x, pattern));
  });
}

RewardFn token_freq_reward(int token, double target) {
  return RewardFn(fmt::format("token_freq({}, {})", token, target), 1.0,
                  [token, target](const SequenceState& x, Condition) {
                    int n = 0;
                    for (int tok : x.tokens) n += tok == token ? 1 : 0;
                    return 1.0 - std::abs(static_cast<double>(n) / x.size() - target);
                  });
}

RewardFn match_condition_reward(std::vector<std::vector<int>> patterns, int d) {
  if (patterns.empty()) throw Error("match_condition needs at least one pattern");
  std::size_t shortest = patterns.front().size();
  for (const auto& p : patterns) {
    if (p.empty()) throw Error("match_condition patterns must be non-empty");
    shortest = std::min(shortest, p.size());
  }
  const double bound = std::max(0, d - static_cast<int>(shortest) + 1);
  return RewardFn("match_condition", bound,
                  [patterns = std::move(patterns)](const SequenceState& x, Condition c) {
                    if (!c || *c < 0 || *c >= static_cast<int>(patterns.size())) {
                      throw Error("match_condition reward needs a condition label");
                    }
                    return static_cast<double>(count_motif(x, patterns[static_cast<std::size_t>(*c)]));
                  });
}

RewardFn table_reward(const StateSpace& space, std::vector<double> values) {
  if (values.size() != space.size()) throw Error("reward table has wrong length");
  double bound = 0.0;
  for (double v : values) bound = std::max(bound, std::abs(v));
  return RewardFn("table", bound, [space, values = std::move(values)](const SequenceState& x, Condition) {
    return values[index_of(space, x)];
  });
}

namespace {

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::logic_error&) {
      throw Error(fmt::format("expected an integer token, got '{}'", tok));
    }
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

void check_tokens(const std::vector<int>& pattern, const StateSpace& space) {
  for (int t : pattern) {
    if (t < 1 || t > space.M) throw Error(fmt::format("reward token {} outside 1..{}", t, space.M));
  }
}

}  // namespace

RewardFn make_reward(const std::string& spec, const StateSpace& space) {
  const auto open = spec.find('(');
  const auto close = spec.rfind(')');
  if (open == std::string::npos || close == std::string::npos || close < open) {
    throw Error(fmt::format("malformed reward '{}' (expected name(args))", spec));
  }
  const std::string name = trim(spec.substr(0, open));
  const std::string args = spec.substr(open + 1, close - open - 1);
  if (name == "motif_count") {
    auto pattern = parse_ints(args);
    check_tokens(pattern, space);
    return motif_count_reward(std::move(pattern), space.d);
  }
  if (name == "token_freq") {
    const auto comma = args.find(',');
    if (comma == std::string::npos) throw Error("token_freq expects (token, target)");
    const auto tok = parse_ints(args.substr(0, comma));
    if (tok.size() != 1) throw Error("token_freq expects a single token");
    check_tokens(tok, space);
    double target = 0.0;
    try {
      target = std::stod(args.substr(comma + 1));
    } catch (const std::logic_error&) {
      throw Error(fmt::format("token_freq target '{}' is not a number", trim(args.substr(comma + 1))));
    }
    return token_freq_reward(tok[0], target);
  }
  if (name == "match_condition") {
    std::vector<std::vector<int>> patterns;
    std::istringstream in(args);
    std::string part;
    while (std::getline(in, part, ';')) {
      auto p = parse_ints(part);
      check_tokens(p, space);
      patterns.push_back(std::move(p));
    }
    return match_condition_reward(std::move(patterns), space.d);
  }
  throw Error(fmt::format("unknown reward '{}' (known: motif_count, token_freq, match_condition)", name));
}

}  // namespace dfm
