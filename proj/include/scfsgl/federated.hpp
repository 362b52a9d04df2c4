#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scfsgl/codebook.hpp"
#include "scfsgl/dataset.hpp"
#include "scfsgl/metrics.hpp"
#include "scfsgl/model.hpp"
#include "scfsgl/node2vec.hpp"

namespace scfsgl {

enum class Variant { kFull, kNoBook, kNoCs, kNoBookNoCs, kLocalOnly, kFullFedavg };

Variant parse_variant(const std::string& tag);
const char* variant_name(Variant v);

struct VariantFlags {
  bool separation = true;   // false bypasses the masks
  bool codebook = true;     // false drops the query and L_com
  bool communicate = true;  // false means nothing leaves the client
  bool average_params = false;
};
VariantFlags variant_flags(Variant v);

struct FedConfig {
  int64_t rounds = 50;
  int64_t local_epochs = 1;
  double lr = 0.01;
  int64_t patience = 10;
  Variant variant = Variant::kFull;
  int64_t wire_bytes = 4;
  uint64_t seed = 1;
  // 0 = use everything; otherwise an evenly strided deterministic subset.
  int64_t epoch_window_cap = 0;
  int64_t eval_window_cap = 0;

  int64_t codebook_size = 32;
  ModelConfig model;  // gamma/beta/hidden/codebook_dim/lambdas/tau
  double ema_decay = 0.9;

  // Structure extractor.
  double n2v_p = 1.0, n2v_q = 1.0;
  int64_t n2v_walks = 10, n2v_walk_len = 20;
  SkipgramConfig skipgram;
};

struct ClientState {
  int64_t id = 0;
  ModelParams params;
  Tensor delta_local;  // (phi, codebook_dim)
  RoundReference ref;
  SplitWindows splits;  // windows stored normalized
  NormStats norm;
  Tensor se;
  int64_t slots_per_day = 288;
};

struct RoundRecord {
  int64_t round = 0;
  std::vector<LossBreakdown> train;   // per client
  std::vector<double> val_mae, val_rmse, val_mape;
  std::vector<int64_t> bytes_up;      // per client
  std::vector<uint8_t> failed;        // per client, this round
  std::vector<std::string> errors;    // diagnostics for failed clients
  uint64_t delta_checksum = 0;
};

struct ClientTestReport {
  int64_t client = 0;
  std::vector<MetricSet> by_horizon;  // includes an "all" row
};

struct RunResult {
  std::vector<RoundRecord> history;
  std::vector<ClientTestReport> test_reports;
  Tensor delta_global;
  int64_t rounds_run = 0;
  bool early_stopped = false;
};

// Element-wise mean of equal-shaped codebooks.
Tensor aggregate(const std::vector<Tensor>& deltas);

int64_t comm_bytes(const Codebook& book, int64_t wire_precision_bytes);
int64_t comm_bytes(int64_t prototypes, int64_t dim, int64_t wire_precision_bytes);

uint64_t fnv1a64(const double* data, int64_t n);

// Deterministic evenly strided index subset.
std::vector<int64_t> strided_subset(int64_t n, int64_t cap);

struct ClientRoundResult {
  Tensor delta_local;
  LossBreakdown mean_loss;
  bool ok = true;
  std::string error;
};

// One local epoch of SGD on L_local; downloads delta_global when the variant
// communicates, refreshes the EMA reference, returns the updated codebook.
// A non-finite loss aborts this client's round and restores its state.
ClientRoundResult client_update(ClientState& state, const Tensor& delta_global,
                                const FedConfig& cfg);

// Federated orchestration per the configured variant.
class FedRuntime {
 public:
  FedRuntime(FedConfig cfg, std::vector<STGDataset> datasets);

  RunResult run();

  std::vector<ClientState>& clients() { return clients_; }
  const FedConfig& config() const { return cfg_; }
  const Tensor& delta_global() const { return delta_global_; }

 private:
  void evaluate_client(const ClientState& state, const std::vector<Window>& windows,
                       Tensor& preds_out, Tensor& targets_out) const;

  FedConfig cfg_;
  std::vector<ClientState> clients_;
  Tensor delta_global_;
};

// Run directory layout: config, history.csv, summary.csv, server_ckpt,
// client_<k>_ckpt, embeddings_<k>.csv.
void write_history_csv(const std::string& path, const RunResult& result);
void write_summary_csv(const std::string& path, const RunResult& result);
void write_server_checkpoint(const std::string& path, const Tensor& delta_global);
void write_client_checkpoint(const std::string& path, const ClientState& state);
void write_embeddings_csv(const std::string& path, const ClientState& state,
                          const FedConfig& cfg, int64_t sample_cap);

}  // namespace scfsgl
