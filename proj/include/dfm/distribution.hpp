#pragma once

#include <span>
#include <vector>

#include "dfm/state_space.hpp"

namespace dfm {

inline constexpr double kMassTolerance = 1e-9;

// Dense PMF over an enumerable state space, indexed by index_of().
class DistributionTable {
 public:
  // Validates non-negativity and unit mass (within kMassTolerance).
  DistributionTable(StateSpace space, std::vector<double> mass);

  static DistributionTable normalized(StateSpace space, std::vector<double> weights);
  static DistributionTable point_mass(StateSpace space, const SequenceState& x);
  static DistributionTable uniform(StateSpace space);
  // Uniform over data tokens only (mask states get zero mass).
  static DistributionTable uniform_data(StateSpace space);
  static DistributionTable empirical(StateSpace space, std::span<const SequenceState> samples);

  const StateSpace& space() const { return space_; }
  std::span<const double> mass() const { return mass_; }
  std::size_t size() const { return mass_.size(); }
  double operator[](std::size_t i) const { return mass_[i]; }
  double probability(const SequenceState& x) const;

  // Expectation of f over the table, f indexed like mass().
  double expect(std::span<const double> f) const;

 private:
  StateSpace space_;
  std::vector<double> mass_;
};

double tv_distance(const DistributionTable& p, const DistributionTable& q);

// Pearson correlation of overlapping k-mer count profiles (dimension M^k).
// Windows never cross sequence boundaries.
double kmer_correlation(std::span<const SequenceState> samples,
                        std::span<const SequenceState> reference, int k, int M);

std::vector<double> kmer_profile(std::span<const SequenceState> seqs, int k, int M);

}  // namespace dfm
