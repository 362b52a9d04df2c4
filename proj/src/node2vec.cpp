#include "scfsgl/node2vec.hpp"

#include <cmath>
#include <stdexcept>

namespace scfsgl {

WalkCorpus biased_walks(const Tensor& adjacency, double p, double q, int64_t walks_per_node,
                        int64_t walk_length, uint64_t seed) {
  if (adjacency.ndim() != 2 || adjacency.dim(0) != adjacency.dim(1))
    throw std::invalid_argument("biased_walks: adjacency must be square, got " +
                                adjacency.shape_str());
  if (!(p > 0.0) || !(q > 0.0)) throw std::invalid_argument("biased_walks: p, q must be > 0");
  if (walks_per_node < 1 || walk_length < 1)
    throw std::invalid_argument("biased_walks: r, l must be >= 1");

  const int64_t V = adjacency.dim(0);
  std::vector<std::vector<int64_t>> nbrs(static_cast<size_t>(V));
  std::vector<std::vector<double>> wts(static_cast<size_t>(V));
  for (int64_t i = 0; i < V; ++i)
    for (int64_t j = 0; j < V; ++j) {
      double w = adjacency.at({i, j});
      if (w > 0.0) {
        nbrs[static_cast<size_t>(i)].push_back(j);
        wts[static_cast<size_t>(i)].push_back(w);
      }
    }
  auto is_edge = [&](int64_t a, int64_t b) { return adjacency.at({a, b}) > 0.0; };

  WalkCorpus corpus;
  corpus.node_count = V;
  corpus.walks_per_node = walks_per_node;
  corpus.walk_length = walk_length;
  corpus.p = p;
  corpus.q = q;
  corpus.walks.assign(static_cast<size_t>(V * walks_per_node), {});

  Rng root(seed);
#pragma omp parallel for schedule(static)
  for (int64_t u = 0; u < V; ++u) {
    for (int64_t w = 0; w < walks_per_node; ++w) {
      Rng rng = root.fork(static_cast<uint64_t>(u * walks_per_node + w));
      std::vector<int64_t> walk;
      walk.reserve(static_cast<size_t>(walk_length));
      walk.push_back(u);
      const auto& un = nbrs[static_cast<size_t>(u)];
      if (un.empty()) {
        while (static_cast<int64_t>(walk.size()) < walk_length) walk.push_back(u);
      } else {
        std::vector<double> probs;
        while (static_cast<int64_t>(walk.size()) < walk_length) {
          const int64_t v = walk.back();
          const auto& vn = nbrs[static_cast<size_t>(v)];
          const auto& vw = wts[static_cast<size_t>(v)];
          if (vn.empty()) break;
          probs.resize(vn.size());
          double total = 0.0;
          if (walk.size() == 1) {
            for (size_t c = 0; c < vn.size(); ++c) total = probs[c] = total + vw[c];
          } else {
            const int64_t t = walk[walk.size() - 2];
            for (size_t c = 0; c < vn.size(); ++c) {
              double bias = vn[c] == t ? 1.0 / p : (is_edge(t, vn[c]) ? 1.0 : 1.0 / q);
              total = probs[c] = total + vw[c] * bias;
            }
          }
          const double draw = rng.uniform() * total;
          size_t pick = 0;
          while (pick + 1 < probs.size() && probs[pick] <= draw) ++pick;
          walk.push_back(vn[pick]);
        }
      }
      corpus.walks[static_cast<size_t>(u * walks_per_node + w)] = std::move(walk);
    }
  }
  return corpus;
}

Tensor skipgram_train(const WalkCorpus& corpus, const SkipgramConfig& cfg) {
  if (corpus.walks.empty()) throw std::invalid_argument("skipgram_train: empty corpus");
  if (cfg.dim < 2) throw std::invalid_argument("skipgram_train: dim must be >= 2");
  const int64_t V = corpus.node_count;
  const int64_t D = cfg.dim;

  Rng rng(cfg.seed);
  double init_range = 0.5 / static_cast<double>(D);
  Tensor w_in = rng.tensor_uniform({V, D}, -init_range, init_range);
  if (cfg.epochs == 0) return w_in;
  Tensor w_out = Tensor::zeros({V, D});

  // Unigram^0.75 negative-sampling distribution over corpus tokens.
  std::vector<double> freq(static_cast<size_t>(V), 0.0);
  for (const auto& walk : corpus.walks)
    for (int64_t n : walk) freq[static_cast<size_t>(n)] += 1.0;
  std::vector<double> cum(static_cast<size_t>(V), 0.0);
  double total = 0.0;
  for (int64_t i = 0; i < V; ++i) {
    total += std::pow(freq[static_cast<size_t>(i)], 0.75);
    cum[static_cast<size_t>(i)] = total;
  }
  auto sample_negative = [&]() {
    double draw = rng.uniform() * total;
    size_t lo = 0, hi = static_cast<size_t>(V - 1);
    while (lo < hi) {
      size_t mid = (lo + hi) / 2;
      if (cum[mid] <= draw)
        lo = mid + 1;
      else
        hi = mid;
    }
    return static_cast<int64_t>(lo);
  };

  std::vector<double> accum(static_cast<size_t>(D));
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr * (1.0 - static_cast<double>(epoch) / static_cast<double>(cfg.epochs));
    for (const auto& walk : corpus.walks) {
      const int64_t len = static_cast<int64_t>(walk.size());
      for (int64_t pos = 0; pos < len; ++pos) {
        const int64_t center = walk[static_cast<size_t>(pos)];
        double* vc = w_in.data() + center * D;
        const int64_t lo = std::max<int64_t>(0, pos - cfg.window);
        const int64_t hi = std::min(len - 1, pos + cfg.window);
        for (int64_t cpos = lo; cpos <= hi; ++cpos) {
          if (cpos == pos) continue;
          const int64_t context = walk[static_cast<size_t>(cpos)];
          std::fill(accum.begin(), accum.end(), 0.0);
          for (int64_t s = 0; s <= cfg.negatives; ++s) {
            int64_t target;
            double label;
            if (s == 0) {
              target = context;
              label = 1.0;
            } else {
              target = sample_negative();
              if (target == context) continue;
              label = 0.0;
            }
            double* vo = w_out.data() + target * D;
            double z = 0.0;
            for (int64_t i = 0; i < D; ++i) z += vc[i] * vo[i];
            const double sig = 1.0 / (1.0 + std::exp(-z));
            const double g = lr * (label - sig);
            for (int64_t i = 0; i < D; ++i) {
              accum[static_cast<size_t>(i)] += g * vo[i];
              vo[i] += g * vc[i];
            }
          }
          for (int64_t i = 0; i < D; ++i) vc[i] += accum[static_cast<size_t>(i)];
        }
      }
    }
  }
  for (int64_t i = 0; i < w_in.numel(); ++i)
    if (!std::isfinite(w_in[i])) throw std::runtime_error("skipgram_train: diverged");
  return w_in;
}

}  // namespace scfsgl
