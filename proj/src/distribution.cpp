#include "dfm/distribution.hpp"

#include <fmt/format.h>

#include <cmath>
#include <numeric>

#include "dfm/error.hpp"

namespace dfm {

DistributionTable::DistributionTable(StateSpace space, std::vector<double> mass)
    : space_(space), mass_(std::move(mass)) {
  space_.require_enumerable();
  if (mass_.size() != space_.size()) {
    throw Error(fmt::format("distribution has {} entries, space {} has {}", mass_.size(),
                            space_.describe(), space_.size()));
  }
  double total = 0.0;
  for (double m : mass_) {
    if (!(m >= 0.0)) throw Error("distribution entries must be non-negative");
    total += m;
  }
  if (std::abs(total - 1.0) > kMassTolerance) {
    throw Error(fmt::format("distribution mass sums to {:.12g}, expected 1", total));
  }
}

DistributionTable DistributionTable::normalized(StateSpace space, std::vector<double> weights) {
  double total = 0.0;
  for (double& w : weights) {
    if (w < 0.0) throw Error("negative weight in distribution");
    total += w;
  }
  if (!(total > 0.0)) throw Error("cannot normalize a zero-mass distribution");
  for (double& w : weights) w /= total;
  return DistributionTable(space, std::move(weights));
}

DistributionTable DistributionTable::point_mass(StateSpace space, const SequenceState& x) {
  std::vector<double> m(space.size(), 0.0);
  m[index_of(space, x)] = 1.0;
  return DistributionTable(space, std::move(m));
}

DistributionTable DistributionTable::uniform(StateSpace space) {
  space.require_enumerable();
  return normalized(space, std::vector<double>(space.size(), 1.0));
}

DistributionTable DistributionTable::uniform_data(StateSpace space) {
  auto states = enumerate_states(space);
  std::vector<double> w(states.size(), 0.0);
  for (std::size_t i = 0; i < states.size(); ++i) {
    bool data = true;
    for (int tok : states[i].tokens) data = data && !space.is_mask(tok);
    w[i] = data ? 1.0 : 0.0;
  }
  return normalized(space, std::move(w));
}

DistributionTable DistributionTable::empirical(StateSpace space,
                                               std::span<const SequenceState> samples) {
  std::vector<double> w(space.size(), 0.0);
  for (const auto& s : samples) w[index_of(space, s)] += 1.0;
  return normalized(space, std::move(w));
}

double DistributionTable::probability(const SequenceState& x) const {
  return mass_[index_of(space_, x)];
}

double DistributionTable::expect(std::span<const double> f) const {
  if (f.size() != mass_.size()) throw Error("expectation vector has wrong length");
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) s += mass_[i] * f[i];
  return s;
}

double tv_distance(const DistributionTable& p, const DistributionTable& q) {
  if (!(p.space() == q.space())) {
    throw Error(fmt::format("tv_distance over mismatched spaces {} vs {}",
                            p.space().describe(), q.space().describe()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

std::vector<double> kmer_profile(std::span<const SequenceState> seqs, int k, int M) {
  if (k < 1) throw Error("k-mer length must be >= 1");
  std::size_t dim = 1;
  for (int i = 0; i < k; ++i) dim *= static_cast<std::size_t>(M);
  std::vector<double> counts(dim, 0.0);
  for (const auto& s : seqs) {
    if (s.size() < k) {
      throw Error(fmt::format("sequence of length {} shorter than k={}", s.size(), k));
    }
    for (int start = 0; start + k <= s.size(); ++start) {
      std::size_t idx = 0;
      for (int j = 0; j < k; ++j) {
        const int tok = s[start + j];
        if (tok < 1 || tok > M) {
          throw Error(fmt::format("token {} outside data vocabulary 1..{}", tok, M));
        }
        idx = idx * static_cast<std::size_t>(M) + static_cast<std::size_t>(tok - 1);
      }
      counts[idx] += 1.0;
    }
  }
  return counts;
}

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) {
    throw Error("undefined correlation: a k-mer frequency profile has zero variance");
  }
  return sab / std::sqrt(saa * sbb);
}

std::vector<double> to_frequencies(std::vector<double> counts) {
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  if (total > 0.0) {
    for (double& c : counts) c /= total;
  }
  return counts;
}

}  // namespace

double kmer_correlation(std::span<const SequenceState> samples,
                        std::span<const SequenceState> reference, int k, int M) {
  if (samples.empty() || reference.empty()) {
    throw Error("kmer_correlation needs non-empty sample and reference sets");
  }
  return pearson(to_frequencies(kmer_profile(samples, k, M)),
                 to_frequencies(kmer_profile(reference, k, M)));
}

}  // namespace dfm
