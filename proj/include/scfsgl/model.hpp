#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "scfsgl/checkpoint.hpp"
#include "scfsgl/graph.hpp"
#include "scfsgl/tensor.hpp"

namespace scfsgl {

struct ModelConfig {
  int64_t nodes = 4;
  int64_t feature_dim = 1;
  int64_t gamma = 12;
  int64_t beta = 12;
  int64_t hidden = 32;      // D
  int64_t layers = 1;       // attention depth L
  int64_t se_dim = 16;      // spatial embedding width
  int64_t time_dim = 295;   // 7 + slots_per_day
  int64_t codebook_dim = 64;
  double tau = 0.5;
  double lambda_com = 1.0;
  double lambda_irm = 1.0;
};

// Named parameter tensors in a stable order; the names are the checkpoint
// and aggregation contract.
class ModelParams {
 public:
  static ModelParams init(const ModelConfig& cfg, uint64_t seed);

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  NamedTensors& tensors() { return tensors_; }
  const NamedTensors& tensors() const { return tensors_; }
  int64_t total_elements() const;

 private:
  NamedTensors tensors_;
  std::map<std::string, size_t> index_;
};

// Cached previous-round branch features (EMA over the last local epoch),
// the mask reference F_{t,r-1}. Empty until the first update.
struct RoundReference {
  Tensor enc_s, enc_t, dec_s, dec_t;
  bool ready = false;
  double decay = 0.9;

  void update(const Tensor& es, const Tensor& et, const Tensor& ds, const Tensor& dt);
};

struct SeparationOutput {
  Tensor f_c, f_o;  // shared / specific features
  Tensor m_c, m_o;  // complementary masks
};

struct QueryTrace {
  Tensor alpha;   // (N, phi)
  Tensor anchor;  // (N, codebook_dim)
  std::vector<int64_t> pos_index, neg_index;
};

struct LossBreakdown {
  double l_mse = 0.0, l_com = 0.0, l_irm = 0.0, l_local = 0.0;
  double lambda_com = 0.0, lambda_irm = 0.0;
};

struct ForwardOptions {
  bool bypass_separation = false;  // w/o CS: M_c = 1, F_o = 0
  bool use_codebook = true;        // w/o Book: no query, l_com = 0
  bool with_loss = true;           // false for inference-only forwards
};

// Node ids of everything a caller may need from one recorded forward pass.
struct ForwardResult {
  int yhat = -1;
  int l_mse = -1, l_com = -1, l_irm = -1, l_local = -1;
  SeparationOutput enc_s, enc_t, dec_s, dec_t;
  QueryTrace q_enc_s, q_enc_t, q_dec_s, q_dec_t;
  // Attention weight node ids, one per layer, for invariant checks.
  std::vector<int> attn_weights;
  // Raw pre-separation branch features, for the EMA reference update.
  Tensor feat_enc_s, feat_enc_t, feat_dec_s, feat_dec_t;

  LossBreakdown breakdown(const Graph& g, double lambda_com, double lambda_irm) const;
};

// Binds every parameter tensor as a trainable graph leaf.
struct ParamBinding {
  std::map<std::string, int> ids;
  static ParamBinding bind(Graph& g, const ModelParams& params);
  int at(const std::string& name) const;
};

struct SteNodes {
  int ste_his = -1, ste_pred = -1;
  int time_his = -1, time_pred = -1;  // pre-concat time components (steps, D)
};

// Spatio-temporal embedding: time encodings and SE each projected to D,
// broadcast-concatenated and mapped back to D.
SteNodes build_ste(Graph& g, const ModelConfig& cfg, const ParamBinding& pb,
                   const Tensor& time_feat_his, const Tensor& time_feat_pred, const Tensor& se);

// Scaled dot-product self-attention over the node axis per step, residual,
// position-wise map. `weights_out` collects the softmax node per layer.
int spatial_attention(Graph& g, const ModelConfig& cfg, const ParamBinding& pb, int x,
                      std::vector<int>* weights_out = nullptr);
// Same machinery over the step axis per node.
int temporal_attention(Graph& g, const ModelConfig& cfg, const ParamBinding& pb, int x,
                       std::vector<int>* weights_out = nullptr);

struct SepNodes {
  int f_c = -1, f_o = -1, m_c = -1, m_o = -1;
};

// M_c = sigmoid(F_prev w + b), M_o = 1 - M_c, F_x = relu((1 + LN(M_x)) .* F_curr).
SepNodes conditional_separate(Graph& g, int f_curr, const Tensor& f_prev, int w, int b,
                              bool bypass);

// Closed-form squared gradient of the squared-error risk in a scalar dummy
// predictor at 1: [mean(2 (yhat - y) .* yhat)]^2.
int irm_penalty(Graph& g, int yhat_branch, int y);

// Full recorded forward pass of the local network on one window.
ForwardResult model_forward(Graph& g, const ModelConfig& cfg, const ParamBinding& pb,
                            int delta_node, const Tensor& history, const Tensor& target,
                            const Tensor& time_feat_his, const Tensor& time_feat_pred,
                            const Tensor& se, const RoundReference& ref,
                            const ForwardOptions& opt);

}  // namespace scfsgl
