#pragma once

#include <cstdint>

namespace scfsgl::kernels {

// Every kernel exists twice: a plain serial reference under serial:: and an
// OpenMP version under par::. The parallel versions split work so that each
// output element is written by exactly one thread and computed in the same
// inner order as the serial code, so both produce bit-identical results for
// any thread count. The dispatch functions below pick the active variant.

void set_parallel(bool enabled);
bool parallel_enabled();

namespace serial {

// c[b] = a[b or 0] (m x k) * b[b or 0] (k x n); a_bs/b_bs are batch strides
// in elements, 0 broadcasts the operand across batches.
void matmul(const double* a, const double* b, double* c, int64_t batch, int64_t m, int64_t k,
            int64_t n, int64_t a_bs, int64_t b_bs);

// c (m x n) = sum over batches of a[b] (m x k) * b[b] (k x n).
void matmul_sum_batches(const double* a, const double* b, double* c, int64_t batch, int64_t m,
                        int64_t k, int64_t n, int64_t a_bs, int64_t b_bs);

// y (cols x rows) = x^T for row-major x (rows x cols), applied per batch.
void transpose_last2(const double* x, double* y, int64_t batch, int64_t rows, int64_t cols);

// Softmax along a strided fiber: x viewed as (outer, len, inner).
void softmax(const double* x, double* y, int64_t outer, int64_t len, int64_t inner);
// dx from (y, dy) for y = softmax(x), same fiber layout.
void softmax_backward(const double* y, const double* dy, double* dx, int64_t outer, int64_t len,
                      int64_t inner);

// Per-row layer norm over the last axis, no affine parameters.
void layernorm(const double* x, double* y, int64_t rows, int64_t width, double eps);
void layernorm_backward(const double* x, const double* dy, double* dx, int64_t rows,
                        int64_t width, double eps);

}  // namespace serial

namespace par {

void matmul(const double* a, const double* b, double* c, int64_t batch, int64_t m, int64_t k,
            int64_t n, int64_t a_bs, int64_t b_bs);
void matmul_sum_batches(const double* a, const double* b, double* c, int64_t batch, int64_t m,
                        int64_t k, int64_t n, int64_t a_bs, int64_t b_bs);
void transpose_last2(const double* x, double* y, int64_t batch, int64_t rows, int64_t cols);
void softmax(const double* x, double* y, int64_t outer, int64_t len, int64_t inner);
void softmax_backward(const double* y, const double* dy, double* dx, int64_t outer, int64_t len,
                      int64_t inner);
void layernorm(const double* x, double* y, int64_t rows, int64_t width, double eps);
void layernorm_backward(const double* x, const double* dy, double* dx, int64_t rows,
                        int64_t width, double eps);

}  // namespace par

// Dispatchers used by the autodiff ops.
void matmul(const double* a, const double* b, double* c, int64_t batch, int64_t m, int64_t k,
            int64_t n, int64_t a_bs, int64_t b_bs);
void matmul_sum_batches(const double* a, const double* b, double* c, int64_t batch, int64_t m,
                        int64_t k, int64_t n, int64_t a_bs, int64_t b_bs);
void transpose_last2(const double* x, double* y, int64_t batch, int64_t rows, int64_t cols);
void softmax(const double* x, double* y, int64_t outer, int64_t len, int64_t inner);
void softmax_backward(const double* y, const double* dy, double* dx, int64_t outer, int64_t len,
                      int64_t inner);
void layernorm(const double* x, double* y, int64_t rows, int64_t width, double eps);
void layernorm_backward(const double* x, const double* dy, double* dx, int64_t rows,
                        int64_t width, double eps);

// Deterministic sum: fixed-size blocks reduced in block order, so the result
// does not depend on the thread count.
double block_sum(const double* x, int64_t n);

}  // namespace scfsgl::kernels
