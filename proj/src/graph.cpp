#include "scfsgl/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "scfsgl/kernels.hpp"

namespace scfsgl {

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "hadamard";
    case OpKind::kScale: return "scale";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kRelu: return "relu";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSquare: return "square";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kConcat: return "concat";
    case OpKind::kMeanAll: return "mean";
    case OpKind::kSumAxis: return "sum_axis";
    case OpKind::kMeanAxis: return "mean_axis";
    case OpKind::kReshape: return "reshape";
    case OpKind::kTransposeLast2: return "transpose_last2";
    case OpKind::kSwapAxes01: return "swap_axes01";
    case OpKind::kCosineSim: return "cosine_sim";
  }
  return "?";
}

namespace {

[[noreturn]] void shape_error(OpKind op, const std::string& detail) {
  throw std::invalid_argument(std::string(op_name(op)) + ": " + detail);
}

std::vector<int64_t> broadcast_shape(OpKind op, const std::vector<int64_t>& a,
                                     const std::vector<int64_t>& b) {
  const size_t nd = std::max(a.size(), b.size());
  std::vector<int64_t> out(nd, 1);
  for (size_t i = 0; i < nd; ++i) {
    int64_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    int64_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (da != db && da != 1 && db != 1)
      shape_error(op, "incompatible shapes " + Tensor::shape_str(a) + " and " +
                          Tensor::shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `shape` expanded to `out`, 0 on broadcast axes.
std::vector<int64_t> broadcast_strides(const std::vector<int64_t>& shape,
                                       const std::vector<int64_t>& out) {
  std::vector<int64_t> st(out.size(), 0);
  int64_t stride = 1;
  const size_t off = out.size() - shape.size();
  for (size_t i = shape.size(); i-- > 0;) {
    st[off + i] = shape[i] == 1 ? 0 : stride;
    stride *= shape[i];
  }
  return st;
}

template <class F>
void for_each_broadcast(const std::vector<int64_t>& oshape, const std::vector<int64_t>& sa,
                        const std::vector<int64_t>& sb, F f) {
  const size_t nd = oshape.size();
  if (nd == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<int64_t> idx(nd, 0);
  int64_t n = 1;
  for (int64_t d : oshape) n *= d;
  int64_t oa = 0, ob = 0;
  for (int64_t lin = 0; lin < n; ++lin) {
    f(lin, oa, ob);
    for (size_t i = nd; i-- > 0;) {
      ++idx[i];
      oa += sa[i];
      ob += sb[i];
      if (idx[i] < oshape[i]) break;
      oa -= sa[i] * oshape[i];
      ob -= sb[i] * oshape[i];
      idx[i] = 0;
    }
  }
}

// Sums grad over axes that were broadcast to reach `grad`'s shape.
Tensor reduce_to(const Tensor& grad, const std::vector<int64_t>& target) {
  if (grad.shape() == target) return grad;
  Tensor out{target};
  auto st = broadcast_strides(target, grad.shape());
  std::vector<int64_t> zero(grad.shape().size(), 0);
  for_each_broadcast(grad.shape(), st, zero,
                     [&](int64_t lin, int64_t toff, int64_t) { out[toff] += grad[lin]; });
  return out;
}

void axis_split(const std::vector<int64_t>& shape, int64_t axis, int64_t& outer, int64_t& len,
                int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
  len = shape[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
}

int64_t norm_axis(OpKind op, int64_t axis, int64_t ndim) {
  int64_t a = axis < 0 ? axis + ndim : axis;
  if (a < 0 || a >= ndim) shape_error(op, "axis " + std::to_string(axis) + " out of range");
  return a;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

int Graph::push(Node n) {
  for (int in : n.inputs) {
    if (in < 0 || in >= size()) shape_error(n.op, "input node id out of range");
    if (nodes_[static_cast<size_t>(in)].needs_grad) n.needs_grad = true;
  }
  if (n.op != OpKind::kLeaf && n.op != OpKind::kConstant) eval(n);
  nodes_.push_back(std::move(n));
  return size() - 1;
}

int Graph::leaf(Tensor v, bool trainable) {
  Node n;
  n.op = OpKind::kLeaf;
  n.value = std::move(v);
  n.trainable = trainable;
  n.needs_grad = trainable;
  nodes_.push_back(std::move(n));
  return size() - 1;
}

int Graph::constant(Tensor v) {
  Node n;
  n.op = OpKind::kConstant;
  n.value = std::move(v);
  nodes_.push_back(std::move(n));
  return size() - 1;
}

bool Graph::is_trainable_leaf(int id) const {
  const Node& n = nodes_[static_cast<size_t>(id)];
  return n.op == OpKind::kLeaf && n.trainable;
}

void Graph::set_leaf(int id, Tensor v) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.op != OpKind::kLeaf && n.op != OpKind::kConstant)
    throw std::invalid_argument("set_leaf: node is not a leaf");
  if (v.shape() != n.value.shape())
    throw std::invalid_argument("set_leaf: shape changed " + n.value.shape_str() + " -> " +
                                v.shape_str());
  n.value = std::move(v);
}

void Graph::recompute() {
  for (Node& n : nodes_)
    if (n.op != OpKind::kLeaf && n.op != OpKind::kConstant) eval(n);
}

int Graph::matmul(int a, int b) {
  Node n;
  n.op = OpKind::kMatmul;
  n.inputs = {a, b};
  return push(std::move(n));
}

int Graph::add(int a, int b) {
  Node n;
  n.op = OpKind::kAdd;
  n.inputs = {a, b};
  return push(std::move(n));
}

int Graph::sub(int a, int b) {
  Node n;
  n.op = OpKind::kSub;
  n.inputs = {a, b};
  return push(std::move(n));
}

int Graph::mul(int a, int b) {
  Node n;
  n.op = OpKind::kMul;
  n.inputs = {a, b};
  return push(std::move(n));
}

int Graph::scale(int a, double c) {
  Node n;
  n.op = OpKind::kScale;
  n.inputs = {a};
  n.factor = c;
  return push(std::move(n));
}

int Graph::sigmoid(int a) {
  Node n;
  n.op = OpKind::kSigmoid;
  n.inputs = {a};
  return push(std::move(n));
}

int Graph::relu(int a) {
  Node n;
  n.op = OpKind::kRelu;
  n.inputs = {a};
  return push(std::move(n));
}

int Graph::exp(int a) {
  Node n;
  n.op = OpKind::kExp;
  n.inputs = {a};
  return push(std::move(n));
}

int Graph::log(int a) {
  Node n;
  n.op = OpKind::kLog;
  n.inputs = {a};
  return push(std::move(n));
}

int Graph::square(int a) {
  Node n;
  n.op = OpKind::kSquare;
  n.inputs = {a};
  return push(std::move(n));
}

int Graph::softmax(int a, int64_t axis) {
  Node n;
  n.op = OpKind::kSoftmax;
  n.inputs = {a};
  n.axis = norm_axis(n.op, axis, value(a).ndim());
  return push(std::move(n));
}

int Graph::layer_norm(int a) {
  Node n;
  n.op = OpKind::kLayerNorm;
  n.inputs = {a};
  return push(std::move(n));
}

int Graph::concat(const std::vector<int>& xs, int64_t axis) {
  if (xs.empty()) shape_error(OpKind::kConcat, "no inputs");
  Node n;
  n.op = OpKind::kConcat;
  n.inputs = xs;
  n.axis = norm_axis(n.op, axis, value(xs[0]).ndim());
  return push(std::move(n));
}

int Graph::mean_all(int a) {
  Node n;
  n.op = OpKind::kMeanAll;
  n.inputs = {a};
  return push(std::move(n));
}

int Graph::sum_axis(int a, int64_t axis) {
  Node n;
  n.op = OpKind::kSumAxis;
  n.inputs = {a};
  n.axis = norm_axis(n.op, axis, value(a).ndim());
  return push(std::move(n));
}

int Graph::mean_axis(int a, int64_t axis) {
  Node n;
  n.op = OpKind::kMeanAxis;
  n.inputs = {a};
  n.axis = norm_axis(n.op, axis, value(a).ndim());
  return push(std::move(n));
}

int Graph::reshape(int a, std::vector<int64_t> shape) {
  Node n;
  n.op = OpKind::kReshape;
  n.inputs = {a};
  if (Tensor::numel_of(shape) != value(a).numel())
    shape_error(n.op, "numel mismatch " + value(a).shape_str() + " -> " +
                          Tensor::shape_str(shape));
  n.target_shape = std::move(shape);
  return push(std::move(n));
}

int Graph::transpose_last2(int a) {
  if (value(a).ndim() < 2) shape_error(OpKind::kTransposeLast2, "needs ndim >= 2");
  Node n;
  n.op = OpKind::kTransposeLast2;
  n.inputs = {a};
  return push(std::move(n));
}

int Graph::swap_axes01(int a) {
  if (value(a).ndim() < 2) shape_error(OpKind::kSwapAxes01, "needs ndim >= 2");
  Node n;
  n.op = OpKind::kSwapAxes01;
  n.inputs = {a};
  return push(std::move(n));
}

int Graph::cosine_sim(int a, int b) {
  Node n;
  n.op = OpKind::kCosineSim;
  n.inputs = {a, b};
  return push(std::move(n));
}

void Graph::eval(Node& n) const {
  auto in = [&](size_t i) -> const Tensor& {
    return nodes_[static_cast<size_t>(n.inputs[i])].value;
  };
  switch (n.op) {
    case OpKind::kLeaf:
    case OpKind::kConstant:
      return;
    case OpKind::kMatmul: {
      const Tensor& A = in(0);
      const Tensor& B = in(1);
      if (A.ndim() < 2 || B.ndim() < 2)
        shape_error(n.op, "needs ndim >= 2, got " + A.shape_str() + " and " + B.shape_str());
      const int64_t m = A.dim(A.ndim() - 2), k = A.dim(A.ndim() - 1);
      const int64_t kb = B.dim(B.ndim() - 2), nn = B.dim(B.ndim() - 1);
      if (k != kb)
        shape_error(n.op, "inner dims differ: " + A.shape_str() + " x " + B.shape_str());
      const int64_t batch = A.numel() / (m * k);
      std::vector<int64_t> oshape(A.shape().begin(), A.shape().end() - 1);
      oshape.push_back(nn);
      if (B.ndim() != 2) {
        std::vector<int64_t> ab(A.shape().begin(), A.shape().end() - 2);
        std::vector<int64_t> bb(B.shape().begin(), B.shape().end() - 2);
        if (ab != bb)
          shape_error(n.op, "batch dims differ: " + A.shape_str() + " x " + B.shape_str());
      }
      Tensor out{oshape};
      kernels::matmul(A.data(), B.data(), out.data(), batch, m, k, nn, m * k,
                      B.ndim() == 2 ? 0 : kb * nn);
      n.value = std::move(out);
      return;
    }
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul: {
      const Tensor& A = in(0);
      const Tensor& B = in(1);
      auto oshape = broadcast_shape(n.op, A.shape(), B.shape());
      Tensor out{oshape};
      auto sa = broadcast_strides(A.shape(), oshape);
      auto sb = broadcast_strides(B.shape(), oshape);
      if (n.op == OpKind::kAdd)
        for_each_broadcast(oshape, sa, sb,
                           [&](int64_t o, int64_t ia, int64_t ib) { out[o] = A[ia] + B[ib]; });
      else if (n.op == OpKind::kSub)
        for_each_broadcast(oshape, sa, sb,
                           [&](int64_t o, int64_t ia, int64_t ib) { out[o] = A[ia] - B[ib]; });
      else
        for_each_broadcast(oshape, sa, sb,
                           [&](int64_t o, int64_t ia, int64_t ib) { out[o] = A[ia] * B[ib]; });
      n.value = std::move(out);
      return;
    }
    case OpKind::kScale: {
      Tensor out{in(0).shape()};
      for (int64_t i = 0; i < out.numel(); ++i) out[i] = in(0)[i] * n.factor;
      n.value = std::move(out);
      return;
    }
    case OpKind::kSigmoid: {
      Tensor out{in(0).shape()};
      for (int64_t i = 0; i < out.numel(); ++i) out[i] = stable_sigmoid(in(0)[i]);
      n.value = std::move(out);
      return;
    }
    case OpKind::kRelu: {
      Tensor out{in(0).shape()};
      for (int64_t i = 0; i < out.numel(); ++i) out[i] = in(0)[i] > 0.0 ? in(0)[i] : 0.0;
      n.value = std::move(out);
      return;
    }
    case OpKind::kExp: {
      Tensor out{in(0).shape()};
      for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(in(0)[i]);
      n.value = std::move(out);
      return;
    }
    case OpKind::kLog: {
      Tensor out{in(0).shape()};
      for (int64_t i = 0; i < out.numel(); ++i) {
        if (!(in(0)[i] > 0.0)) throw std::domain_error("log: nonpositive input");
        out[i] = std::log(in(0)[i]);
      }
      n.value = std::move(out);
      return;
    }
    case OpKind::kSquare: {
      Tensor out{in(0).shape()};
      for (int64_t i = 0; i < out.numel(); ++i) out[i] = in(0)[i] * in(0)[i];
      n.value = std::move(out);
      return;
    }
    case OpKind::kSoftmax: {
      const Tensor& X = in(0);
      int64_t outer, len, inner;
      axis_split(X.shape(), n.axis, outer, len, inner);
      Tensor out{X.shape()};
      kernels::softmax(X.data(), out.data(), outer, len, inner);
      n.value = std::move(out);
      return;
    }
    case OpKind::kLayerNorm: {
      const Tensor& X = in(0);
      if (X.ndim() < 1) shape_error(n.op, "needs ndim >= 1");
      const int64_t width = X.dim(X.ndim() - 1);
      Tensor out{X.shape()};
      kernels::layernorm(X.data(), out.data(), X.numel() / width, width, kLayerNormEps);
      n.value = std::move(out);
      return;
    }
    case OpKind::kConcat: {
      const int64_t axis = n.axis;
      const Tensor& first = in(0);
      int64_t axis_total = 0;
      for (size_t i = 0; i < n.inputs.size(); ++i) {
        const Tensor& t = in(i);
        if (t.ndim() != first.ndim()) shape_error(n.op, "rank mismatch");
        for (int64_t d = 0; d < t.ndim(); ++d)
          if (d != axis && t.dim(d) != first.dim(d))
            shape_error(n.op, "shapes " + first.shape_str() + " and " + t.shape_str() +
                                  " differ off axis " + std::to_string(axis));
        axis_total += t.dim(axis);
      }
      auto oshape = first.shape();
      oshape[static_cast<size_t>(axis)] = axis_total;
      Tensor out{oshape};
      int64_t outer, olen, inner;
      axis_split(oshape, axis, outer, olen, inner);
      int64_t pos = 0;
      for (size_t i = 0; i < n.inputs.size(); ++i) {
        const Tensor& t = in(i);
        const int64_t len = t.dim(axis);
        for (int64_t o = 0; o < outer; ++o) {
          const double* src = t.data() + o * len * inner;
          double* dst = out.data() + (o * olen + pos) * inner;
          std::copy(src, src + len * inner, dst);
        }
        pos += len;
      }
      n.value = std::move(out);
      return;
    }
    case OpKind::kMeanAll: {
      const Tensor& X = in(0);
      n.value = Tensor::scalar(kernels::block_sum(X.data(), X.numel()) /
                               static_cast<double>(X.numel()));
      return;
    }
    case OpKind::kSumAxis:
    case OpKind::kMeanAxis: {
      const Tensor& X = in(0);
      int64_t outer, len, inner;
      axis_split(X.shape(), n.axis, outer, len, inner);
      std::vector<int64_t> oshape;
      for (int64_t d = 0; d < X.ndim(); ++d)
        if (d != n.axis) oshape.push_back(X.dim(d));
      Tensor out{oshape};
      const double denom = n.op == OpKind::kMeanAxis ? static_cast<double>(len) : 1.0;
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
          double s = 0.0;
          for (int64_t l = 0; l < len; ++l) s += X[(o * len + l) * inner + i];
          out[o * inner + i] = s / denom;
        }
      n.value = std::move(out);
      return;
    }
    case OpKind::kReshape: {
      n.value = Tensor(n.target_shape, in(0).vec());
      return;
    }
    case OpKind::kTransposeLast2: {
      const Tensor& X = in(0);
      const int64_t rows = X.dim(X.ndim() - 2), cols = X.dim(X.ndim() - 1);
      auto oshape = X.shape();
      std::swap(oshape[oshape.size() - 2], oshape[oshape.size() - 1]);
      Tensor out{oshape};
      kernels::transpose_last2(X.data(), out.data(), X.numel() / (rows * cols), rows, cols);
      n.value = std::move(out);
      return;
    }
    case OpKind::kSwapAxes01: {
      const Tensor& X = in(0);
      const int64_t d0 = X.dim(0), d1 = X.dim(1);
      const int64_t inner = X.numel() / (d0 * d1);
      auto oshape = X.shape();
      std::swap(oshape[0], oshape[1]);
      Tensor out{oshape};
      for (int64_t i = 0; i < d0; ++i)
        for (int64_t j = 0; j < d1; ++j)
          std::copy(X.data() + (i * d1 + j) * inner, X.data() + (i * d1 + j + 1) * inner,
                    out.data() + (j * d0 + i) * inner);
      n.value = std::move(out);
      return;
    }
    case OpKind::kCosineSim: {
      const Tensor& A = in(0);
      const Tensor& B = in(1);
      if (A.shape() != B.shape())
        shape_error(n.op, "shapes differ: " + A.shape_str() + " vs " + B.shape_str());
      const int64_t d = A.dim(A.ndim() - 1);
      const int64_t fibers = A.numel() / d;
      std::vector<int64_t> oshape(A.shape().begin(), A.shape().end() - 1);
      Tensor out{oshape};
      for (int64_t f = 0; f < fibers; ++f) {
        const double* a = A.data() + f * d;
        const double* b = B.data() + f * d;
        double s = 0.0, na2 = 0.0, nb2 = 0.0;
        for (int64_t i = 0; i < d; ++i) {
          s += a[i] * b[i];
          na2 += a[i] * a[i];
          nb2 += b[i] * b[i];
        }
        out[f] = s / (std::max(std::sqrt(na2), kCosineEps) *
                      std::max(std::sqrt(nb2), kCosineEps));
      }
      n.value = std::move(out);
      return;
    }
  }
}

GradientMap Graph::backward(int loss) const {
  if (loss < 0 || loss >= size()) throw std::invalid_argument("backward: bad loss id");
  if (!nodes_[static_cast<size_t>(loss)].value.is_scalar())
    throw std::invalid_argument("backward: loss is not scalar, shape " +
                                nodes_[static_cast<size_t>(loss)].value.shape_str());

  std::vector<Tensor> grads(nodes_.size());
  std::vector<char> has(nodes_.size(), 0);
  auto accum = [&](int id, const Tensor& g) {
    auto& slot = grads[static_cast<size_t>(id)];
    if (!has[static_cast<size_t>(id)]) {
      slot = g;
      has[static_cast<size_t>(id)] = 1;
    } else {
      for (int64_t i = 0; i < slot.numel(); ++i) slot[i] += g[i];
    }
  };

  if (nodes_[static_cast<size_t>(loss)].needs_grad) {
    grads[static_cast<size_t>(loss)] =
        Tensor::full(nodes_[static_cast<size_t>(loss)].value.shape(), 1.0);
    has[static_cast<size_t>(loss)] = 1;
  }

  for (int id = loss; id >= 0; --id) {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (!has[static_cast<size_t>(id)] || !n.needs_grad) continue;
    const Tensor& dy = grads[static_cast<size_t>(id)];
    auto in = [&](size_t i) -> const Tensor& {
      return nodes_[static_cast<size_t>(n.inputs[i])].value;
    };
    auto wants = [&](size_t i) {
      return nodes_[static_cast<size_t>(n.inputs[i])].needs_grad;
    };
    switch (n.op) {
      case OpKind::kLeaf:
      case OpKind::kConstant:
        break;
      case OpKind::kMatmul: {
        const Tensor& A = in(0);
        const Tensor& B = in(1);
        const int64_t m = A.dim(A.ndim() - 2), k = A.dim(A.ndim() - 1);
        const int64_t nn = B.dim(B.ndim() - 1);
        const int64_t batch = A.numel() / (m * k);
        const bool b2d = B.ndim() == 2;
        if (wants(0)) {
          // dA = dC * B^T
          Tensor bt{b2d ? std::vector<int64_t>{nn, k} : std::vector<int64_t>{batch, nn, k}};
          kernels::transpose_last2(B.data(), bt.data(), b2d ? 1 : batch, k, nn);
          Tensor da{A.shape()};
          kernels::matmul(dy.data(), bt.data(), da.data(), batch, m, nn, k, m * nn,
                          b2d ? 0 : nn * k);
          accum(n.inputs[0], da);
        }
        if (wants(1)) {
          // dB = A^T * dC, summed over batches when B was broadcast
          Tensor at{batch == 1 ? std::vector<int64_t>{k, m}
                               : std::vector<int64_t>{batch, k, m}};
          kernels::transpose_last2(A.data(), at.data(), batch, m, k);
          Tensor db{B.shape()};
          if (b2d)
            kernels::matmul_sum_batches(at.data(), dy.data(), db.data(), batch, k, m, nn, k * m,
                                        m * nn);
          else
            kernels::matmul(at.data(), dy.data(), db.data(), batch, k, m, nn, k * m, m * nn);
          accum(n.inputs[1], db);
        }
        break;
      }
      case OpKind::kAdd:
      case OpKind::kSub: {
        if (wants(0)) accum(n.inputs[0], reduce_to(dy, in(0).shape()));
        if (wants(1)) {
          Tensor g = reduce_to(dy, in(1).shape());
          if (n.op == OpKind::kSub)
            for (int64_t i = 0; i < g.numel(); ++i) g[i] = -g[i];
          accum(n.inputs[1], g);
        }
        break;
      }
      case OpKind::kMul: {
        const Tensor& A = in(0);
        const Tensor& B = in(1);
        const auto& oshape = n.value.shape();
        auto sa = broadcast_strides(A.shape(), oshape);
        auto sb = broadcast_strides(B.shape(), oshape);
        if (wants(0)) {
          Tensor tmp{oshape};
          for_each_broadcast(oshape, sa, sb,
                             [&](int64_t o, int64_t, int64_t ib) { tmp[o] = dy[o] * B[ib]; });
          accum(n.inputs[0], reduce_to(tmp, A.shape()));
        }
        if (wants(1)) {
          Tensor tmp{oshape};
          for_each_broadcast(oshape, sa, sb,
                             [&](int64_t o, int64_t ia, int64_t) { tmp[o] = dy[o] * A[ia]; });
          accum(n.inputs[1], reduce_to(tmp, B.shape()));
        }
        break;
      }
      case OpKind::kScale: {
        Tensor g{dy.shape()};
        for (int64_t i = 0; i < g.numel(); ++i) g[i] = dy[i] * n.factor;
        accum(n.inputs[0], g);
        break;
      }
      case OpKind::kSigmoid: {
        Tensor g{dy.shape()};
        for (int64_t i = 0; i < g.numel(); ++i)
          g[i] = dy[i] * n.value[i] * (1.0 - n.value[i]);
        accum(n.inputs[0], g);
        break;
      }
      case OpKind::kRelu: {
        Tensor g{dy.shape()};
        for (int64_t i = 0; i < g.numel(); ++i) g[i] = in(0)[i] > 0.0 ? dy[i] : 0.0;
        accum(n.inputs[0], g);
        break;
      }
      case OpKind::kExp: {
        Tensor g{dy.shape()};
        for (int64_t i = 0; i < g.numel(); ++i) g[i] = dy[i] * n.value[i];
        accum(n.inputs[0], g);
        break;
      }
      case OpKind::kLog: {
        Tensor g{dy.shape()};
        for (int64_t i = 0; i < g.numel(); ++i) g[i] = dy[i] / in(0)[i];
        accum(n.inputs[0], g);
        break;
      }
      case OpKind::kSquare: {
        Tensor g{dy.shape()};
        for (int64_t i = 0; i < g.numel(); ++i) g[i] = dy[i] * 2.0 * in(0)[i];
        accum(n.inputs[0], g);
        break;
      }
      case OpKind::kSoftmax: {
        int64_t outer, len, inner;
        axis_split(n.value.shape(), n.axis, outer, len, inner);
        Tensor g{dy.shape()};
        kernels::softmax_backward(n.value.data(), dy.data(), g.data(), outer, len, inner);
        accum(n.inputs[0], g);
        break;
      }
      case OpKind::kLayerNorm: {
        const Tensor& X = in(0);
        const int64_t width = X.dim(X.ndim() - 1);
        Tensor g{X.shape()};
        kernels::layernorm_backward(X.data(), dy.data(), g.data(), X.numel() / width, width,
                                    kLayerNormEps);
        accum(n.inputs[0], g);
        break;
      }
      case OpKind::kConcat: {
        int64_t outer, olen, inner;
        axis_split(n.value.shape(), n.axis, outer, olen, inner);
        int64_t pos = 0;
        for (size_t i = 0; i < n.inputs.size(); ++i) {
          const int64_t len = in(i).dim(n.axis);
          if (wants(i)) {
            Tensor g{in(i).shape()};
            for (int64_t o = 0; o < outer; ++o) {
              const double* src = dy.data() + (o * olen + pos) * inner;
              std::copy(src, src + len * inner, g.data() + o * len * inner);
            }
            accum(n.inputs[i], g);
          }
          pos += len;
        }
        break;
      }
      case OpKind::kMeanAll: {
        const Tensor& X = in(0);
        Tensor g = Tensor::full(X.shape(), dy[0] / static_cast<double>(X.numel()));
        accum(n.inputs[0], g);
        break;
      }
      case OpKind::kSumAxis:
      case OpKind::kMeanAxis: {
        const Tensor& X = in(0);
        int64_t outer, len, inner;
        axis_split(X.shape(), n.axis, outer, len, inner);
        const double denom = n.op == OpKind::kMeanAxis ? static_cast<double>(len) : 1.0;
        Tensor g{X.shape()};
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t l = 0; l < len; ++l)
            for (int64_t i = 0; i < inner; ++i)
              g[(o * len + l) * inner + i] = dy[o * inner + i] / denom;
        accum(n.inputs[0], g);
        break;
      }
      case OpKind::kReshape: {
        accum(n.inputs[0], Tensor(in(0).shape(), dy.vec()));
        break;
      }
      case OpKind::kTransposeLast2: {
        const Tensor& X = in(0);
        const int64_t rows = X.dim(X.ndim() - 2), cols = X.dim(X.ndim() - 1);
        Tensor g{X.shape()};
        kernels::transpose_last2(dy.data(), g.data(), X.numel() / (rows * cols), cols, rows);
        accum(n.inputs[0], g);
        break;
      }
      case OpKind::kSwapAxes01: {
        const Tensor& X = in(0);
        const int64_t d0 = X.dim(0), d1 = X.dim(1);
        const int64_t inner = X.numel() / (d0 * d1);
        Tensor g{X.shape()};
        for (int64_t j = 0; j < d1; ++j)
          for (int64_t i = 0; i < d0; ++i)
            std::copy(dy.data() + (j * d0 + i) * inner, dy.data() + (j * d0 + i + 1) * inner,
                      g.data() + (i * d1 + j) * inner);
        accum(n.inputs[0], g);
        break;
      }
      case OpKind::kCosineSim: {
        const Tensor& A = in(0);
        const Tensor& B = in(1);
        const int64_t d = A.dim(A.ndim() - 1);
        const int64_t fibers = A.numel() / d;
        Tensor ga{A.shape()}, gb{B.shape()};
        for (int64_t f = 0; f < fibers; ++f) {
          const double* a = A.data() + f * d;
          const double* b = B.data() + f * d;
          double s = 0.0, na2 = 0.0, nb2 = 0.0;
          for (int64_t i = 0; i < d; ++i) {
            s += a[i] * b[i];
            na2 += a[i] * a[i];
            nb2 += b[i] * b[i];
          }
          const double na = std::sqrt(na2), nb = std::sqrt(nb2);
          const double nag = std::max(na, kCosineEps), nbg = std::max(nb, kCosineEps);
          const double denom = nag * nbg;
          const double dc = dy[f];
          for (int64_t i = 0; i < d; ++i) {
            const double da_norm = na > kCosineEps ? (s / (nag * nag * nbg)) * (a[i] / na) : 0.0;
            const double db_norm = nb > kCosineEps ? (s / (nag * nbg * nbg)) * (b[i] / nb) : 0.0;
            ga[f * d + i] = dc * (b[i] / denom - da_norm);
            gb[f * d + i] = dc * (a[i] / denom - db_norm);
          }
        }
        if (wants(0)) accum(n.inputs[0], ga);
        if (wants(1)) accum(n.inputs[1], gb);
        break;
      }
    }
  }

  GradientMap out;
  for (int id = 0; id < size(); ++id) {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (n.op == OpKind::kLeaf && n.trainable) {
      if (has[static_cast<size_t>(id)])
        out.emplace(id, std::move(grads[static_cast<size_t>(id)]));
      else
        out.emplace(id, Tensor::zeros(n.value.shape()));
    }
  }
  return out;
}

double grad_check(Graph& g, int loss, int leaf, double perturbation) {
  if (!(perturbation > 0.0 && perturbation <= 1e-3))
    throw std::invalid_argument("grad_check: perturbation must be in (0, 1e-3]");
  if (!g.is_trainable_leaf(leaf)) throw std::invalid_argument("grad_check: not a trainable leaf");

  GradientMap grads = g.backward(loss);
  const Tensor& gad = grads.at(leaf);
  Tensor base = g.value(leaf);
  const double inf = std::numeric_limits<double>::infinity();

  double max_rel = 0.0;
  for (int64_t i = 0; i < base.numel(); ++i) {
    double fp = 0.0, fm = 0.0;
    bool ok = true;
    for (int sign : {+1, -1}) {
      Tensor pert = base;
      pert[i] += sign * perturbation;
      g.set_leaf(leaf, std::move(pert));
      try {
        g.recompute();
      } catch (const std::exception&) {
        ok = false;
        break;
      }
      const double f = g.value(loss)[0];
      if (!std::isfinite(f)) {
        ok = false;
        break;
      }
      (sign > 0 ? fp : fm) = f;
    }
    if (!ok) {
      g.set_leaf(leaf, base);
      g.recompute();
      return inf;
    }
    const double gfd = (fp - fm) / (2.0 * perturbation);
    const double denom = std::max({std::abs(gad[i]), std::abs(gfd), 1e-8});
    max_rel = std::max(max_rel, std::abs(gad[i] - gfd) / denom);
  }
  g.set_leaf(leaf, std::move(base));
  g.recompute();
  return max_rel;
}

}  // namespace scfsgl
