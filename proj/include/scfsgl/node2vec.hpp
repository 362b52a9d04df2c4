#pragma once

#include <cstdint>
#include <vector>

#include "scfsgl/tensor.hpp"

namespace scfsgl {

struct WalkCorpus {
  std::vector<std::vector<int64_t>> walks;  // r * |V| walks of length l
  int64_t node_count = 0;
  int64_t walks_per_node = 0;
  int64_t walk_length = 0;
  double p = 1.0;
  double q = 1.0;
};

// Second-order biased random walks: from edge (t -> v), a candidate x is
// weighted A[v][x] times 1/p if x == t, 1 if x is a neighbor of t, else 1/q.
// Isolated nodes yield walks that repeat the start node.
WalkCorpus biased_walks(const Tensor& adjacency, double p, double q, int64_t walks_per_node,
                        int64_t walk_length, uint64_t seed);

struct SkipgramConfig {
  int64_t dim = 16;
  int64_t window = 5;
  int64_t negatives = 5;
  int64_t epochs = 3;
  double lr = 0.025;
  uint64_t seed = 1;
};

// Skip-gram with negative sampling over the walk corpus; negatives drawn from
// the corpus unigram distribution raised to 0.75. Single-threaded and
// reproducible. Zero epochs returns the seeded initialization.
Tensor skipgram_train(const WalkCorpus& corpus, const SkipgramConfig& cfg);

}  // namespace scfsgl
