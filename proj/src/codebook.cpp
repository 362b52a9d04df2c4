#include "scfsgl/codebook.hpp"

#include <cmath>
#include <stdexcept>

#include "scfsgl/graph.hpp"

namespace scfsgl {

void Codebook::validate() const {
  if (delta.ndim() != 2 || delta.dim(0) < 2)
    throw std::invalid_argument("codebook: need at least 2 prototypes, got " +
                                delta.shape_str());
  for (int64_t i = 0; i < delta.numel(); ++i)
    if (!std::isfinite(delta[i])) throw std::invalid_argument("codebook: non-finite entry");
}

Codebook init_codebook(int64_t prototypes, int64_t dim, uint64_t seed) {
  if (prototypes < 2) throw std::invalid_argument("codebook: need >= 2 prototypes");
  if (dim < 1) throw std::invalid_argument("codebook: dim must be >= 1");
  Rng rng(seed);
  const double range = 1.0 / std::sqrt(static_cast<double>(dim));
  Codebook book;
  book.delta = rng.tensor_uniform({prototypes, dim}, -range, range);
  return book;
}

QueryResult codebook_query(const Tensor& features, const Tensor& w_q, const Tensor& bias,
                           const Codebook& book) {
  book.validate();
  if (features.ndim() < 1 || w_q.ndim() != 2 || w_q.dim(1) != book.dim())
    throw std::invalid_argument("codebook_query: projection must land in dim " +
                                std::to_string(book.dim()) + ", got " + w_q.shape_str());
  if (features.dim(features.ndim() - 1) != w_q.dim(0))
    throw std::invalid_argument("codebook_query: feature dim " + features.shape_str() +
                                " does not match projection " + w_q.shape_str());
  if (bias.numel() != book.dim())
    throw std::invalid_argument("codebook_query: bias must have dim " +
                                std::to_string(book.dim()));

  // Reuse the autodiff ops so this is the same arithmetic the model records.
  Graph g;
  int f = g.constant(features);
  if (features.ndim() == 1) f = g.reshape(f, {1, features.dim(0)});
  int anchor = g.add(g.matmul(f, g.constant(w_q)), g.constant(bias));
  int scores = g.matmul(anchor, g.transpose_last2(g.constant(book.delta)));
  int alpha = g.softmax(scores, g.value(scores).ndim() - 1);

  QueryResult out;
  out.alpha = g.value(alpha);
  out.anchor = g.value(anchor);
  if (features.ndim() == 1) {
    out.alpha = Tensor({book.prototypes()}, out.alpha.vec());
    out.anchor = Tensor({book.dim()}, out.anchor.vec());
  }
  return out;
}

void top2_indices(const double* alpha, int64_t n, int64_t& best, int64_t& second) {
  best = 0;
  for (int64_t j = 1; j < n; ++j)
    if (alpha[j] > alpha[best]) best = j;
  second = best == 0 ? 1 : 0;
  for (int64_t j = 0; j < n; ++j) {
    if (j == best) continue;
    if (alpha[j] > alpha[second]) second = j;
  }
}

PairSelection select_pairs(const Tensor& alpha, const Codebook& book) {
  book.validate();
  if (alpha.ndim() != 1 || alpha.dim(0) != book.prototypes())
    throw std::invalid_argument("select_pairs: alpha must be a vector over " +
                                std::to_string(book.prototypes()) + " prototypes, got " +
                                alpha.shape_str());
  PairSelection sel;
  top2_indices(alpha.data(), alpha.dim(0), sel.pos_index, sel.neg_index);
  const int64_t d = book.dim();
  sel.pos = Tensor({d});
  sel.neg = Tensor({d});
  for (int64_t i = 0; i < d; ++i) {
    sel.pos[i] = alpha[sel.pos_index] * book.delta.at({sel.pos_index, i});
    sel.neg[i] = alpha[sel.neg_index] * book.delta.at({sel.neg_index, i});
  }
  return sel;
}

double contrastive_branch_loss(const Tensor& anchor, const Tensor& pos, const Tensor& neg,
                               double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: tau must be > 0");
  if (!anchor.same_shape(pos) || !anchor.same_shape(neg))
    throw std::invalid_argument("contrastive_loss: shapes differ: " + anchor.shape_str() + " / " +
                                pos.shape_str() + " / " + neg.shape_str());
  const int64_t d = anchor.dim(anchor.ndim() - 1);
  const int64_t rows = anchor.numel() / d;
  auto cos = [&](const double* a, const double* b) {
    double s = 0, na2 = 0, nb2 = 0;
    for (int64_t i = 0; i < d; ++i) {
      s += a[i] * b[i];
      na2 += a[i] * a[i];
      nb2 += b[i] * b[i];
    }
    return s / (std::max(std::sqrt(na2), Graph::kCosineEps) *
                std::max(std::sqrt(nb2), Graph::kCosineEps));
  };
  double total = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    const double cp = cos(anchor.data() + r * d, pos.data() + r * d);
    const double cn = cos(anchor.data() + r * d, neg.data() + r * d);
    // -log(e^{cp/tau} / (e^{cp/tau} + e^{cn/tau})) = log(1 + e^{(cn-cp)/tau})
    total += std::log1p(std::exp((cn - cp) / tau));
  }
  return total / static_cast<double>(rows);
}

double contrastive_loss(const Tensor& anchor_s, const Tensor& pos_s, const Tensor& neg_s,
                        const Tensor& anchor_t, const Tensor& pos_t, const Tensor& neg_t,
                        double tau) {
  return contrastive_branch_loss(anchor_s, pos_s, neg_s, tau) +
         contrastive_branch_loss(anchor_t, pos_t, neg_t, tau);
}

}  // namespace scfsgl
