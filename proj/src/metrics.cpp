#include "scfsgl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace scfsgl {

namespace {
void check_shapes(const Tensor& yhat, const Tensor& y, const char* what) {
  if (!yhat.same_shape(y))
    throw std::invalid_argument(std::string(what) + ": shapes differ: " + yhat.shape_str() +
                                " vs " + y.shape_str());
}
}  // namespace

double mae(const Tensor& yhat, const Tensor& y) {
  check_shapes(yhat, y, "mae");
  double s = 0.0;
  for (int64_t i = 0; i < y.numel(); ++i) s += std::abs(yhat[i] - y[i]);
  return s / static_cast<double>(y.numel());
}

double rmse(const Tensor& yhat, const Tensor& y) {
  check_shapes(yhat, y, "rmse");
  double s = 0.0;
  for (int64_t i = 0; i < y.numel(); ++i) {
    double d = yhat[i] - y[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(y.numel()));
}

double mape(const Tensor& yhat, const Tensor& y, double eps) {
  check_shapes(yhat, y, "mape");
  if (!(eps > 0.0)) throw std::invalid_argument("mape: eps must be > 0");
  double s = 0.0;
  for (int64_t i = 0; i < y.numel(); ++i) s += std::abs(yhat[i] - y[i]) / (std::abs(y[i]) + eps);
  return 100.0 * s / static_cast<double>(y.numel());
}

std::vector<MetricSet> per_horizon_report(const Tensor& predictions, const Tensor& targets,
                                          const std::vector<int64_t>& horizons) {
  check_shapes(predictions, targets, "per_horizon_report");
  if (predictions.ndim() < 2)
    throw std::invalid_argument("per_horizon_report: need (N, beta, ...) tensors");
  const int64_t n = predictions.dim(0);
  const int64_t beta = predictions.dim(1);
  const int64_t inner = predictions.numel() / (n * beta);

  std::vector<int64_t> steps;
  for (int64_t h : horizons) {
    int64_t s = std::min(h, beta);
    if (s >= 1 && std::find(steps.begin(), steps.end(), s) == steps.end()) steps.push_back(s);
  }

  std::vector<MetricSet> out;
  for (int64_t s : steps) {
    Tensor ph({n, s, inner}), th({n, s, inner});
    for (int64_t i = 0; i < n; ++i)
      for (int64_t b = 0; b < s; ++b)
        for (int64_t j = 0; j < inner; ++j) {
          ph.at({i, b, j}) = predictions[(i * beta + b) * inner + j];
          th.at({i, b, j}) = targets[(i * beta + b) * inner + j];
        }
    MetricSet m;
    m.horizon = std::to_string(s * 5) + "min";
    m.mae = mae(ph, th);
    m.rmse = rmse(ph, th);
    m.mape = mape(ph, th);
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace scfsgl
