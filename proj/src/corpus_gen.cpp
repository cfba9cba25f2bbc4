#include "dfm/corpus_gen.hpp"

#include <fmt/format.h>

#include <algorithm>

#include "dfm/random.hpp"

namespace dfm {

namespace {

std::vector<double> token_weights(const std::vector<double>& given, const StateSpace& space,
                                  const char* field, std::vector<double> fallback) {
  const std::vector<double>& w = given.empty() ? fallback : given;
  if (static_cast<int>(w.size()) != space.M) {
    throw Error(fmt::format("{} needs {} weights, got {}", field, space.M, w.size()));
  }
  double total = 0.0;
  for (double v : w) {
    if (!(v >= 0.0)) throw Error(fmt::format("{} has a negative weight", field));
    total += v;
  }
  if (!(total > 0.0)) throw Error(fmt::format("{} sums to zero", field));
  return w;
}

SequenceState draw_iid(const StateSpace& space, const std::vector<double>& w, Rng& rng) {
  SequenceState x(std::vector<int>(static_cast<std::size_t>(space.d)));
  for (int i = 0; i < space.d; ++i) x[i] = sample_categorical(w, rng) + 1;
  return x;
}

}  // namespace

const std::vector<std::string>& corpus_generators() {
  static const std::vector<std::string> names{"iid-categorical", "motif-planted", "two-component-mixture"};
  return names;
}

DataCorpus make_corpus(const CorpusGenSpec& spec, const StateSpace& space, int n, std::uint64_t seed) {
  space.validate();
  if (n < 1) throw Error("corpus size must be >= 1");
  const std::vector<double> uniform(static_cast<std::size_t>(space.M), 1.0);
  Rng rng(seed_from({seed, 0x636f72707573ULL}));
  std::vector<SequenceState> samples;
  samples.reserve(static_cast<std::size_t>(n));

  if (spec.generator == "iid-categorical") {
    const auto w = token_weights(spec.probs, space, "probs", uniform);
    for (int k = 0; k < n; ++k) samples.push_back(draw_iid(space, w, rng));
  } else if (spec.generator == "motif-planted") {
    const auto w = token_weights(spec.probs, space, "probs", uniform);
    const int len = static_cast<int>(spec.motif.size());
    if (len == 0 || len > space.d) throw Error(fmt::format("motif length {} does not fit d={}", len, space.d));
    for (int tok : spec.motif) {
      if (tok < 1 || tok > space.M) throw Error(fmt::format("motif token {} outside 1..{}", tok, space.M));
    }
    std::uniform_int_distribution<int> offset(0, space.d - len);
    for (int k = 0; k < n; ++k) {
      SequenceState x = draw_iid(space, w, rng);
      if (uniform01(rng) < spec.rate) {
        const int s = offset(rng);
        for (int j = 0; j < len; ++j) x[s + j] = spec.motif[static_cast<std::size_t>(j)];
      }
      samples.push_back(std::move(x));
    }
  } else if (spec.generator == "two-component-mixture") {
    // Default components lean towards low and high tokens respectively.
    std::vector<double> down(static_cast<std::size_t>(space.M));
    for (int m = 0; m < space.M; ++m) down[static_cast<std::size_t>(m)] = space.M - m;
    std::vector<double> up(down.rbegin(), down.rend());
    const auto a = token_weights(spec.probs_a, space, "probs_a", down);
    const auto b = token_weights(spec.probs_b, space, "probs_b", up);
    for (int k = 0; k < n; ++k) samples.push_back(draw_iid(space, uniform01(rng) < spec.weight ? a : b, rng));
  } else {
    throw Error(fmt::format("unknown corpus generator '{}' (known: iid-categorical, motif-planted, "
                            "two-component-mixture)",
                            spec.generator));
  }
  return DataCorpus::from_samples(space, std::move(samples));
}

}  // namespace dfm
