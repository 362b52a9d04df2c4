#pragma once

#include <map>
#include <string>
#include <vector>

#include "scfsgl/tensor.hpp"

namespace scfsgl {

enum class OpKind {
  kLeaf,
  kConstant,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kScale,
  kSigmoid,
  kRelu,
  kExp,
  kLog,
  kSquare,
  kSoftmax,
  kLayerNorm,
  kConcat,
  kMeanAll,
  kSumAxis,
  kMeanAxis,
  kReshape,
  kTransposeLast2,
  kSwapAxes01,
  kCosineSim,
};

const char* op_name(OpKind op);

using GradientMap = std::map<int, Tensor>;

// Eagerly-executed computation record. Every op appends a node, computes its
// value immediately, and can be replayed after leaf values change. Node ids
// are indices into execution order, so inputs always precede outputs.
class Graph {
 public:
  struct Node {
    OpKind op = OpKind::kLeaf;
    std::vector<int> inputs;
    Tensor value;
    int64_t axis = 0;
    double factor = 0.0;
    std::vector<int64_t> target_shape;
    bool trainable = false;
    bool needs_grad = false;
  };

  int leaf(Tensor v, bool trainable = true);
  int constant(Tensor v);
  int scalar(double v) { return constant(Tensor::scalar(v)); }

  // A (..., m, k) x B (k, n) or (batch-matching ..., k, n) -> (..., m, n)
  int matmul(int a, int b);
  // Elementwise with numpy-style broadcasting (align right, dims equal or 1).
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int scale(int a, double c);
  int sigmoid(int a);
  int relu(int a);
  int exp(int a);
  int log(int a);
  int square(int a);
  int softmax(int a, int64_t axis);
  // Over the last axis, eps 1e-5, no affine parameters.
  int layer_norm(int a);
  int concat(const std::vector<int>& xs, int64_t axis);
  int mean_all(int a);
  int sum_axis(int a, int64_t axis);
  int mean_axis(int a, int64_t axis);
  int reshape(int a, std::vector<int64_t> shape);
  int transpose_last2(int a);
  int swap_axes01(int a);
  // Over the last axis of equal-shaped inputs; norms floored at 1e-12 so the
  // value is exact for nonzero inputs and finite at zero norm.
  int cosine_sim(int a, int b);

  const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  int size() const { return static_cast<int>(nodes_.size()); }
  bool is_trainable_leaf(int id) const;

  void set_leaf(int id, Tensor v);
  // Replays every non-leaf node in order; used by the finite-difference oracle.
  void recompute();

  // Reverse-mode gradients of a scalar loss over all trainable leaves.
  // Leaves the loss does not depend on map to zero tensors.
  GradientMap backward(int loss) const;

  static constexpr double kLayerNormEps = 1e-5;
  static constexpr double kCosineEps = 1e-12;

 private:
  int push(Node n);
  void eval(Node& n) const;

  std::vector<Node> nodes_;
};

// Central-difference check of backward() for one leaf. Returns the max
// relative error with an absolute floor of 1e-8 in the denominator; returns
// +inf if the perturbed forward value is non-finite.
double grad_check(Graph& g, int loss, int leaf, double perturbation);

}  // namespace scfsgl
