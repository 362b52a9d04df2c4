#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scfsgl/tensor.hpp"

namespace scfsgl {

// Per-client spatio-temporal graph series: features (T, |V|, d) on a fixed
// weighted topology, with integer step timestamps.
struct STGDataset {
  int64_t node_count = 0;
  int64_t feature_dim = 0;
  Tensor series;     // (T, |V|, d)
  Tensor adjacency;  // (|V|, |V|), entries >= 0
  std::vector<int64_t> timestamps;
  int64_t slots_per_day = 288;

  void validate() const;
};

struct Window {
  Tensor history;  // (gamma, |V|, d)
  Tensor target;   // (beta, |V|, d)
  std::vector<int64_t> history_stamps;
  std::vector<int64_t> target_stamps;
};

// What the generator planted, kept for separability checks.
struct GeneratorGroundTruth {
  Tensor shared_signal;    // (T, |V|, d)
  Tensor specific_signal;  // (T, |V|, d)
  double shared_strength = 0.0;
  double specific_strength = 0.0;
};

struct SyntheticConfig {
  int64_t clients = 5;
  int64_t nodes_per_client = 30;
  int64_t steps = 2000;
  int64_t slots_per_day = 288;
  int64_t feature_dim = 1;
  double shared_strength = 1.0;
  double specific_strength = 1.0;
  double noise_std = 0.1;
  uint64_t seed = 1;
};

// Number of nodes carrying the shared motif; every client's graph embeds the
// same motif on its first kMotifSize nodes.
constexpr int64_t kMotifSize = 8;

std::vector<std::pair<STGDataset, GeneratorGroundTruth>> generate_synthetic(
    const SyntheticConfig& cfg);

// values: rows = timesteps, comma-separated columns = nodes (d = 1).
// adjacency: |V| x |V| comma-separated.
STGDataset load_csv(const std::string& values_path, const std::string& adjacency_path,
                    int64_t slots_per_day);

void write_values_csv(const std::string& path, const STGDataset& ds);
void write_adjacency_csv(const std::string& path, const STGDataset& ds);

std::vector<Window> make_windows(const STGDataset& ds, int64_t gamma, int64_t beta);

struct SplitWindows {
  std::vector<Window> train, val, test;
};

// Contiguous chronological 7:1:2 split; floor for train and val, remainder
// to test. Requires >= 10 windows.
SplitWindows split_windows(std::vector<Window> windows);

struct NormStats {
  std::vector<double> mean;  // per feature
  std::vector<double> std;   // per feature, floored at 1e-8

  Tensor apply(const Tensor& x) const;
  Tensor invert(const Tensor& x) const;
};

NormStats fit_normalize(const std::vector<Window>& train);

// One-hot day-of-week followed by one-hot slot-of-day: (len, 7 + slots).
Tensor encode_time(const std::vector<int64_t>& stamps, int64_t slots_per_day);

}  // namespace scfsgl
