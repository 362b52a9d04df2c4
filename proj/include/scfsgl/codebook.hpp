#pragma once

#include <cstdint>

#include "scfsgl/tensor.hpp"

namespace scfsgl {

// The shared prototype matrix delta (phi x d) -- the only federated payload.
struct Codebook {
  Tensor delta;
  bool trainable = true;

  int64_t prototypes() const { return delta.dim(0); }
  int64_t dim() const { return delta.dim(1); }
  void validate() const;
};

// Entries i.i.d. uniform in [-1/sqrt(d), +1/sqrt(d)].
Codebook init_codebook(int64_t prototypes, int64_t dim, uint64_t seed);

struct QueryResult {
  Tensor alpha;   // (..., phi), softmax scores over prototypes
  Tensor anchor;  // (..., d), projected features W_Q * F + b
};

// alpha_j = softmax_j(anchor . delta_j^T) with anchor = features * w_q + b.
QueryResult codebook_query(const Tensor& features, const Tensor& w_q, const Tensor& bias,
                           const Codebook& book);

struct PairSelection {
  Tensor pos;  // alpha[j*]  * delta[j*]
  Tensor neg;  // alpha[j**] * delta[j**]
  int64_t pos_index = 0;
  int64_t neg_index = 0;
};

// Top-1 prototype as positive, second-best as hard negative; ties break to
// the lower index. alpha must be a vector over >= 2 prototypes.
PairSelection select_pairs(const Tensor& alpha, const Codebook& book);

void top2_indices(const double* alpha, int64_t n, int64_t& best, int64_t& second);

// Per branch: -log( exp(sim(a,pos)/tau) / (exp(sim(a,pos)/tau) + exp(sim(a,neg)/tau)) )
// with cosine sim, averaged over leading rows; the two branch losses add up.
double contrastive_branch_loss(const Tensor& anchor, const Tensor& pos, const Tensor& neg,
                               double tau);
double contrastive_loss(const Tensor& anchor_s, const Tensor& pos_s, const Tensor& neg_s,
                        const Tensor& anchor_t, const Tensor& pos_t, const Tensor& neg_t,
                        double tau);

}  // namespace scfsgl
