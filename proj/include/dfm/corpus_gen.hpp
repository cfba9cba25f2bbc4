#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfm/config.hpp"
#include "dfm/pretrain.hpp"

namespace dfm {

// Registered generators: iid-categorical, motif-planted, two-component-mixture.
const std::vector<std::string>& corpus_generators();

// n sequences over space (mask tokens never appear). Deterministic per seed.
DataCorpus make_corpus(const CorpusGenSpec& spec, const StateSpace& space, int n, std::uint64_t seed);

}  // namespace dfm
