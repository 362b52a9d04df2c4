#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "scfsgl/node2vec.hpp"

using namespace scfsgl;

namespace {

Tensor path_graph(int64_t n) {
  Tensor a({n, n});
  for (int64_t i = 0; i + 1 < n; ++i) {
    a.at({i, i + 1}) = 1.0;
    a.at({i + 1, i}) = 1.0;
  }
  return a;
}

Tensor ring_graph(int64_t n) {
  Tensor a({n, n});
  for (int64_t i = 0; i < n; ++i) {
    a.at({i, (i + 1) % n}) = 1.0;
    a.at({(i + 1) % n, i}) = 1.0;
  }
  return a;
}

Tensor two_cliques(int64_t half) {
  Tensor a({2 * half, 2 * half});
  for (int64_t i = 0; i < 2 * half; ++i)
    for (int64_t j = 0; j < 2 * half; ++j)
      if (i != j && (i / half) == (j / half)) a.at({i, j}) = 1.0;
  // one bridge so the graph is connected
  a.at({0, half}) = 1.0;
  a.at({half, 0}) = 1.0;
  return a;
}

Tensor sbm_graph(int64_t half, double intra, double inter, uint64_t seed) {
  Rng rng(seed);
  Tensor a({2 * half, 2 * half});
  for (int64_t i = 0; i < 2 * half; ++i)
    for (int64_t j = i + 1; j < 2 * half; ++j) {
      double pr = (i / half) == (j / half) ? intra : inter;
      if (rng.uniform() < pr) {
        a.at({i, j}) = 1.0;
        a.at({j, i}) = 1.0;
      }
    }
  return a;
}

double cosine(const double* a, const double* b, int64_t d) {
  double s = 0, na = 0, nb = 0;
  for (int64_t i = 0; i < d; ++i) {
    s += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return s / (std::sqrt(na * nb) + 1e-30);
}

void check_edge_valid(const WalkCorpus& corpus, const Tensor& adj) {
  for (const auto& walk : corpus.walks)
    for (size_t i = 0; i + 1 < walk.size(); ++i)
      CHECK(adj.at({walk[i], walk[i + 1]}) > 0.0);
}

}  // namespace

TEST_CASE("walks only traverse existing edges") {
  for (uint64_t seed : {1u, 2u, 3u}) {
    check_edge_valid(biased_walks(path_graph(3), 0.5, 2.0, 4, 10, seed), path_graph(3));
    check_edge_valid(biased_walks(ring_graph(9), 2.0, 0.5, 3, 12, seed), ring_graph(9));
    check_edge_valid(biased_walks(sbm_graph(8, 0.5, 0.1, seed), 1.0, 1.0, 3, 10, seed),
                     sbm_graph(8, 0.5, 0.1, seed));
  }
}

TEST_CASE("walk count is r * |V| and isolated nodes self-repeat") {
  Tensor a({5, 5});
  a.at({0, 1}) = 1.0;
  a.at({1, 0}) = 1.0;  // nodes 2,3,4 isolated
  auto corpus = biased_walks(a, 1, 1, 2, 6, 7);
  CHECK(corpus.walks.size() == 10);
  for (const auto& walk : corpus.walks) CHECK(walk.size() == 6);
  const auto& iso = corpus.walks[2 * 2];  // first walk of node 2
  for (int64_t n : iso) CHECK(n == 2);
}

TEST_CASE("p=q=1 first step from a hub is uniform over neighbors") {
  // star: node 0 connected to 1..8
  const int64_t leaves = 8;
  Tensor a({leaves + 1, leaves + 1});
  for (int64_t i = 1; i <= leaves; ++i) {
    a.at({0, i}) = 1.0;
    a.at({i, 0}) = 1.0;
  }
  const int64_t per_node = 10000;
  auto corpus = biased_walks(a, 1, 1, per_node, 2, 99);
  std::vector<int64_t> counts(static_cast<size_t>(leaves), 0);
  for (int64_t w = 0; w < per_node; ++w)
    ++counts[static_cast<size_t>(corpus.walks[static_cast<size_t>(w)][1] - 1)];
  const double expected = static_cast<double>(per_node) / leaves;
  double chi2 = 0.0;
  for (int64_t i = 0; i < leaves; ++i) {
    double d = counts[static_cast<size_t>(i)] - expected;
    chi2 += d * d / expected;
  }
  CHECK(chi2 < 24.32);  // chi-square 99.9% quantile, 7 dof
}

TEST_CASE("rejections") {
  CHECK_THROWS_AS((void)biased_walks(Tensor::zeros({2, 3}), 1, 1, 1, 5, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)biased_walks(path_graph(3), 0.0, 1, 1, 5, 1), std::invalid_argument);
  WalkCorpus empty;
  CHECK_THROWS_AS((void)skipgram_train(empty, {}), std::invalid_argument);
}

TEST_CASE("zero epochs returns the seeded initialization") {
  auto corpus = biased_walks(ring_graph(6), 1, 1, 2, 8, 5);
  SkipgramConfig cfg;
  cfg.dim = 8;
  cfg.epochs = 0;
  cfg.seed = 11;
  Tensor a = skipgram_train(corpus, cfg);
  Tensor b = skipgram_train(corpus, cfg);
  CHECK(a.vec() == b.vec());
  Rng rng(11);
  Tensor expect = rng.tensor_uniform({6, 8}, -0.5 / 8, 0.5 / 8);
  CHECK(a.vec() == expect.vec());
}

TEST_CASE("identical seeds give identical embeddings") {
  auto corpus = biased_walks(two_cliques(6), 1, 1, 6, 12, 3);
  SkipgramConfig cfg;
  cfg.dim = 8;
  cfg.epochs = 2;
  cfg.seed = 21;
  CHECK(skipgram_train(corpus, cfg).vec() == skipgram_train(corpus, cfg).vec());
}

TEST_CASE("two cliques: intra-clique cosine beats inter-clique") {
  const int64_t half = 6;
  auto corpus = biased_walks(two_cliques(half), 1, 1, 10, 16, 13);
  SkipgramConfig cfg;
  cfg.dim = 8;
  cfg.epochs = 4;
  cfg.seed = 13;
  Tensor se = skipgram_train(corpus, cfg);
  double intra = 0, inter = 0;
  int64_t n_intra = 0, n_inter = 0;
  for (int64_t i = 0; i < 2 * half; ++i)
    for (int64_t j = i + 1; j < 2 * half; ++j) {
      double c = cosine(se.data() + i * cfg.dim, se.data() + j * cfg.dim, cfg.dim);
      if ((i / half) == (j / half)) {
        intra += c;
        ++n_intra;
      } else {
        inter += c;
        ++n_inter;
      }
    }
  CHECK(intra / n_intra > inter / n_inter);
}

TEST_CASE("ring: adjacent cosine beats antipodal on average") {
  const int64_t n = 20;
  auto corpus = biased_walks(ring_graph(n), 1, 1, 10, 20, 17);
  SkipgramConfig cfg;
  cfg.dim = 8;
  cfg.epochs = 4;
  cfg.seed = 17;
  Tensor se = skipgram_train(corpus, cfg);
  double adj = 0, anti = 0;
  for (int64_t i = 0; i < n; ++i) {
    adj += cosine(se.data() + i * cfg.dim, se.data() + ((i + 1) % n) * cfg.dim, cfg.dim);
    anti += cosine(se.data() + i * cfg.dim, se.data() + ((i + n / 2) % n) * cfg.dim, cfg.dim);
  }
  CHECK(adj > anti);
}

TEST_CASE("stochastic block model: 1-NN recovers blocks above 0.8") {
  const int64_t half = 15, D = 16;
  int64_t hits = 0, total = 0;
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Tensor a = sbm_graph(half, 0.5, 0.05, seed);
    auto corpus = biased_walks(a, 1, 1, 10, 20, seed);
    SkipgramConfig cfg;
    cfg.dim = D;
    cfg.epochs = 3;
    cfg.seed = seed;
    Tensor se = skipgram_train(corpus, cfg);
    for (int64_t i = 0; i < 2 * half; ++i) {
      int64_t best = -1;
      double best_c = -2;
      for (int64_t j = 0; j < 2 * half; ++j) {
        if (j == i) continue;
        double c = cosine(se.data() + i * D, se.data() + j * D, D);
        if (c > best_c) {
          best_c = c;
          best = j;
        }
      }
      hits += (best / half) == (i / half) ? 1 : 0;
      ++total;
    }
  }
  CHECK(static_cast<double>(hits) / static_cast<double>(total) > 0.8);
}
