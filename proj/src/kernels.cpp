#include "scfsgl/kernels.hpp"

#include <cmath>
#include <vector>

namespace scfsgl::kernels {

namespace {
bool g_parallel = true;

inline void matmul_row(const double* arow, const double* bmat, double* crow, int64_t k,
                       int64_t n) {
  for (int64_t j = 0; j < n; ++j) crow[j] = 0.0;
  for (int64_t p = 0; p < k; ++p) {
    const double av = arow[p];
    const double* brow = bmat + p * n;
    for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline void softmax_fiber(const double* x, double* y, int64_t len, int64_t stride) {
  double mx = x[0];
  for (int64_t i = 1; i < len; ++i) mx = std::max(mx, x[i * stride]);
  double sum = 0.0;
  for (int64_t i = 0; i < len; ++i) {
    double e = std::exp(x[i * stride] - mx);
    y[i * stride] = e;
    sum += e;
  }
  for (int64_t i = 0; i < len; ++i) y[i * stride] /= sum;
}

inline void softmax_bwd_fiber(const double* y, const double* dy, double* dx, int64_t len,
                              int64_t stride) {
  double dot = 0.0;
  for (int64_t i = 0; i < len; ++i) dot += y[i * stride] * dy[i * stride];
  for (int64_t i = 0; i < len; ++i) dx[i * stride] = y[i * stride] * (dy[i * stride] - dot);
}

inline void layernorm_row(const double* x, double* y, int64_t width, double eps) {
  double mean = 0.0;
  for (int64_t i = 0; i < width; ++i) mean += x[i];
  mean /= static_cast<double>(width);
  double var = 0.0;
  for (int64_t i = 0; i < width; ++i) {
    double d = x[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(width);
  double inv = 1.0 / std::sqrt(var + eps);
  for (int64_t i = 0; i < width; ++i) y[i] = (x[i] - mean) * inv;
}

// dx_i = inv * (dy_i - mean(dy) - xhat_i * mean(dy .* xhat))
inline void layernorm_bwd_row(const double* x, const double* dy, double* dx, int64_t width,
                              double eps) {
  double mean = 0.0;
  for (int64_t i = 0; i < width; ++i) mean += x[i];
  mean /= static_cast<double>(width);
  double var = 0.0;
  for (int64_t i = 0; i < width; ++i) {
    double d = x[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(width);
  double inv = 1.0 / std::sqrt(var + eps);
  double dy_mean = 0.0, proj = 0.0;
  for (int64_t i = 0; i < width; ++i) {
    dy_mean += dy[i];
    proj += dy[i] * (x[i] - mean) * inv;
  }
  dy_mean /= static_cast<double>(width);
  proj /= static_cast<double>(width);
  for (int64_t i = 0; i < width; ++i) {
    double xhat = (x[i] - mean) * inv;
    dx[i] = inv * (dy[i] - dy_mean - xhat * proj);
  }
}
}  // namespace

void set_parallel(bool enabled) { g_parallel = enabled; }
bool parallel_enabled() { return g_parallel; }

namespace serial {

void matmul(const double* a, const double* b, double* c, int64_t batch, int64_t m, int64_t k,
            int64_t n, int64_t a_bs, int64_t b_bs) {
  for (int64_t bt = 0; bt < batch; ++bt) {
    const double* ab = a + bt * a_bs;
    const double* bb = b + bt * b_bs;
    double* cb = c + bt * m * n;
    for (int64_t i = 0; i < m; ++i) matmul_row(ab + i * k, bb, cb + i * n, k, n);
  }
}

void matmul_sum_batches(const double* a, const double* b, double* c, int64_t batch, int64_t m,
                        int64_t k, int64_t n, int64_t a_bs, int64_t b_bs) {
  for (int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) crow[j] = 0.0;
    for (int64_t bt = 0; bt < batch; ++bt) {
      const double* arow = a + bt * a_bs + i * k;
      const double* bb = b + bt * b_bs;
      for (int64_t p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* brow = bb + p * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

void transpose_last2(const double* x, double* y, int64_t batch, int64_t rows, int64_t cols) {
  for (int64_t bt = 0; bt < batch; ++bt) {
    const double* xb = x + bt * rows * cols;
    double* yb = y + bt * rows * cols;
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < cols; ++j) yb[j * rows + i] = xb[i * cols + j];
  }
}

void softmax(const double* x, double* y, int64_t outer, int64_t len, int64_t inner) {
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      int64_t base = o * len * inner + in;
      softmax_fiber(x + base, y + base, len, inner);
    }
}

void softmax_backward(const double* y, const double* dy, double* dx, int64_t outer, int64_t len,
                      int64_t inner) {
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      int64_t base = o * len * inner + in;
      softmax_bwd_fiber(y + base, dy + base, dx + base, len, inner);
    }
}

void layernorm(const double* x, double* y, int64_t rows, int64_t width, double eps) {
  for (int64_t r = 0; r < rows; ++r) layernorm_row(x + r * width, y + r * width, width, eps);
}

void layernorm_backward(const double* x, const double* dy, double* dx, int64_t rows,
                        int64_t width, double eps) {
  for (int64_t r = 0; r < rows; ++r)
    layernorm_bwd_row(x + r * width, dy + r * width, dx + r * width, width, eps);
}

}  // namespace serial

namespace par {

void matmul(const double* a, const double* b, double* c, int64_t batch, int64_t m, int64_t k,
            int64_t n, int64_t a_bs, int64_t b_bs) {
  const int64_t total = batch * m;
#pragma omp parallel for schedule(static)
  for (int64_t t = 0; t < total; ++t) {
    const int64_t bt = t / m;
    const int64_t i = t % m;
    matmul_row(a + bt * a_bs + i * k, b + bt * b_bs, c + (bt * m + i) * n, k, n);
  }
}

void matmul_sum_batches(const double* a, const double* b, double* c, int64_t batch, int64_t m,
                        int64_t k, int64_t n, int64_t a_bs, int64_t b_bs) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) crow[j] = 0.0;
    for (int64_t bt = 0; bt < batch; ++bt) {
      const double* arow = a + bt * a_bs + i * k;
      const double* bb = b + bt * b_bs;
      for (int64_t p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* brow = bb + p * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

void transpose_last2(const double* x, double* y, int64_t batch, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
  for (int64_t bt = 0; bt < batch; ++bt) {
    const double* xb = x + bt * rows * cols;
    double* yb = y + bt * rows * cols;
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < cols; ++j) yb[j * rows + i] = xb[i * cols + j];
  }
}

void softmax(const double* x, double* y, int64_t outer, int64_t len, int64_t inner) {
  const int64_t total = outer * inner;
#pragma omp parallel for schedule(static)
  for (int64_t t = 0; t < total; ++t) {
    const int64_t o = t / inner;
    const int64_t in = t % inner;
    int64_t base = o * len * inner + in;
    softmax_fiber(x + base, y + base, len, inner);
  }
}

void softmax_backward(const double* y, const double* dy, double* dx, int64_t outer, int64_t len,
                      int64_t inner) {
  const int64_t total = outer * inner;
#pragma omp parallel for schedule(static)
  for (int64_t t = 0; t < total; ++t) {
    const int64_t o = t / inner;
    const int64_t in = t % inner;
    int64_t base = o * len * inner + in;
    softmax_bwd_fiber(y + base, dy + base, dx + base, len, inner);
  }
}

void layernorm(const double* x, double* y, int64_t rows, int64_t width, double eps) {
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r) layernorm_row(x + r * width, y + r * width, width, eps);
}

void layernorm_backward(const double* x, const double* dy, double* dx, int64_t rows,
                        int64_t width, double eps) {
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r)
    layernorm_bwd_row(x + r * width, dy + r * width, dx + r * width, width, eps);
}

}  // namespace par

void matmul(const double* a, const double* b, double* c, int64_t batch, int64_t m, int64_t k,
            int64_t n, int64_t a_bs, int64_t b_bs) {
  if (g_parallel)
    par::matmul(a, b, c, batch, m, k, n, a_bs, b_bs);
  else
    serial::matmul(a, b, c, batch, m, k, n, a_bs, b_bs);
}

void matmul_sum_batches(const double* a, const double* b, double* c, int64_t batch, int64_t m,
                        int64_t k, int64_t n, int64_t a_bs, int64_t b_bs) {
  if (g_parallel)
    par::matmul_sum_batches(a, b, c, batch, m, k, n, a_bs, b_bs);
  else
    serial::matmul_sum_batches(a, b, c, batch, m, k, n, a_bs, b_bs);
}

void transpose_last2(const double* x, double* y, int64_t batch, int64_t rows, int64_t cols) {
  if (g_parallel)
    par::transpose_last2(x, y, batch, rows, cols);
  else
    serial::transpose_last2(x, y, batch, rows, cols);
}

void softmax(const double* x, double* y, int64_t outer, int64_t len, int64_t inner) {
  if (g_parallel)
    par::softmax(x, y, outer, len, inner);
  else
    serial::softmax(x, y, outer, len, inner);
}

void softmax_backward(const double* y, const double* dy, double* dx, int64_t outer, int64_t len,
                      int64_t inner) {
  if (g_parallel)
    par::softmax_backward(y, dy, dx, outer, len, inner);
  else
    serial::softmax_backward(y, dy, dx, outer, len, inner);
}

void layernorm(const double* x, double* y, int64_t rows, int64_t width, double eps) {
  if (g_parallel)
    par::layernorm(x, y, rows, width, eps);
  else
    serial::layernorm(x, y, rows, width, eps);
}

void layernorm_backward(const double* x, const double* dy, double* dx, int64_t rows,
                        int64_t width, double eps) {
  if (g_parallel)
    par::layernorm_backward(x, dy, dx, rows, width, eps);
  else
    serial::layernorm_backward(x, dy, dx, rows, width, eps);
}

double block_sum(const double* x, int64_t n) {
  constexpr int64_t kBlock = 4096;
  const int64_t nblocks = (n + kBlock - 1) / kBlock;
  if (nblocks <= 1) {
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  std::vector<double> partial(static_cast<size_t>(nblocks), 0.0);
#pragma omp parallel for schedule(static)
  for (int64_t b = 0; b < nblocks; ++b) {
    const int64_t lo = b * kBlock;
    const int64_t hi = std::min(n, lo + kBlock);
    double s = 0.0;
    for (int64_t i = lo; i < hi; ++i) s += x[i];
    partial[static_cast<size_t>(b)] = s;
  }
  double s = 0.0;
  for (int64_t b = 0; b < nblocks; ++b) s += partial[static_cast<size_t>(b)];
  return s;
}

}  // namespace scfsgl::kernels
