#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scfsgl/tensor.hpp"

namespace scfsgl {

struct MetricSet {
  std::string horizon;
  double mae = 0.0;
  double rmse = 0.0;
  double mape = 0.0;  // percent
};

constexpr double kMapeEps = 1e-5;

double mae(const Tensor& yhat, const Tensor& y);
double rmse(const Tensor& yhat, const Tensor& y);
double mape(const Tensor& yhat, const Tensor& y, double eps = kMapeEps);

// Metrics on horizon sub-slices of stacked predictions (N, beta, |V|, d):
// the first 3, first 6 and all 12 steps by default (5-minute sampling);
// horizons are clipped to beta and deduplicated.
std::vector<MetricSet> per_horizon_report(const Tensor& predictions, const Tensor& targets,
                                          const std::vector<int64_t>& horizons = {3, 6, 12});

}  // namespace scfsgl
