// Times the OpenMP kernels against the serial reference and verifies that
// both produce bit-identical outputs while measuring.

#include <chrono>
#include <cstdio>
#include <vector>

#include "scfsgl/kernels.hpp"
#include "scfsgl/tensor.hpp"

using namespace scfsgl;
namespace ks = scfsgl::kernels;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

struct Timing {
  double serial_ms;
  double parallel_ms;
  bool identical;
};

template <class SerialFn, class ParFn>
Timing time_pair(int reps, std::vector<double>& out_s, std::vector<double>& out_p,
                 SerialFn serial_fn, ParFn par_fn) {
  Timing t{};
  auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) serial_fn(out_s.data());
  t.serial_ms = ms_since(t0) / reps;
  t0 = Clock::now();
  for (int i = 0; i < reps; ++i) par_fn(out_p.data());
  t.parallel_ms = ms_since(t0) / reps;
  t.identical = out_s == out_p;
  return t;
}

void report(const char* name, const Timing& t) {
  std::printf("%-28s serial %9.3f ms   omp %9.3f ms   speedup %5.2fx   %s\n", name, t.serial_ms,
              t.parallel_ms, t.serial_ms / t.parallel_ms,
              t.identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
  Rng rng(7);
  const int64_t batch = 16, m = 96, k = 96, n = 96;
  std::vector<double> a(static_cast<size_t>(batch * m * k)), b(static_cast<size_t>(k * n));
  for (auto& x : a) x = rng.normal();
  for (auto& x : b) x = rng.normal();
  std::vector<double> cs(static_cast<size_t>(batch * m * n)), cp(cs.size());

  report("matmul 16x(96x96x96)",
         time_pair(
             20, cs, cp,
             [&](double* c) { ks::serial::matmul(a.data(), b.data(), c, batch, m, k, n, m * k, 0); },
             [&](double* c) { ks::par::matmul(a.data(), b.data(), c, batch, m, k, n, m * k, 0); }));

  const int64_t rows = 4096, width = 256;
  std::vector<double> x(static_cast<size_t>(rows * width));
  for (auto& v : x) v = rng.normal();
  std::vector<double> ys(x.size()), yp(x.size());

  report("softmax 4096x256",
         time_pair(
             50, ys, yp,
             [&](double* y) { ks::serial::softmax(x.data(), y, rows, width, 1); },
             [&](double* y) { ks::par::softmax(x.data(), y, rows, width, 1); }));

  report("layernorm 4096x256",
         time_pair(
             50, ys, yp,
             [&](double* y) { ks::serial::layernorm(x.data(), y, rows, width, 1e-5); },
             [&](double* y) { ks::par::layernorm(x.data(), y, rows, width, 1e-5); }));

  report("transpose 16x(512x512)",
         time_pair(
             20, ys, yp,
             [&](double* y) { ks::serial::transpose_last2(x.data(), y, 16, 256, 256); },
             [&](double* y) { ks::par::transpose_last2(x.data(), y, 16, 256, 256); }));

  return 0;
}
