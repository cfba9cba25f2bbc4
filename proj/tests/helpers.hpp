#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "dfm/ctmc.hpp"
#include "dfm/model.hpp"
#include "dfm/random.hpp"

namespace testutil {

// d = 1, M = 2 chain with rate a for 1 -> 2 and b for 2 -> 1.
inline dfm::RateFn two_state(double a, double b) {
  return [a, b](const dfm::SequenceState& x, double) {
    dfm::RateEvaluation r(1, 2);
    if (x[0] == 1) r.at(0, 2) = a;
    else r.at(0, 1) = b;
    r.fill_diagonal(x);
    return r;
  };
}

inline dfm::RateFn zero_rates(const dfm::StateSpace& s) {
  return [s](const dfm::SequenceState& x, double) {
    dfm::RateEvaluation r(s.d, s.alphabet());
    r.fill_diagonal(x);
    return r;
  };
}

// Smooth random rates on a mask-free space, bounded by `scale`.
inline dfm::RateFn random_rates(const dfm::StateSpace& s, std::uint64_t seed, double scale) {
  return [s, seed, scale](const dfm::SequenceState& x, double t) {
    dfm::RateEvaluation r(s.d, s.alphabet());
    for (int i = 0; i < s.d; ++i) {
      for (int y = 1; y <= s.M; ++y) {
        if (y == x[i]) continue;
        std::uint64_t h = dfm::seed_from({seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(y),
                                          static_cast<std::uint64_t>(x[i]), static_cast<std::uint64_t>(x[(i + 1) % s.d])});
        const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
        r.at(i, y) = scale * u * (1.0 + 0.5 * std::sin(3.0 * t + u * 6.0));
      }
    }
    r.fill_diagonal(x);
    return r;
  };
}

inline void randomize(dfm::PosteriorModel& m, std::uint64_t seed, double scale = 1.0) {
  dfm::Rng rng(seed);
  std::normal_distribution<double> n;
  for (double& v : m.mutable_params()) v = scale * n(rng);
  m.touch();
}

// Central difference of f along coordinate k.
inline double central_diff(dfm::PosteriorModel& m, std::size_t k, double h,
                           const std::function<double(const dfm::PosteriorModel&)>& f) {
  const double orig = m.mutable_params()[k];
  m.mutable_params()[k] = orig + h;
  m.touch();
  const double up = f(m);
  m.mutable_params()[k] = orig - h;
  m.touch();
  const double down = f(m);
  m.mutable_params()[k] = orig;
  m.touch();
  return (up - down) / (2.0 * h);
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

}  // namespace testutil
