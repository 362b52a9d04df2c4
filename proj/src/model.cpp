#include "scfsgl/model.hpp"

#include <cmath>
#include <stdexcept>

#include "scfsgl/codebook.hpp"

namespace scfsgl {

namespace {

class ParamInit {
 public:
  ParamInit(NamedTensors& out, std::map<std::string, size_t>& index, uint64_t seed)
      : out_(out), index_(index), rng_(seed) {}

  void weight(const std::string& name, int64_t fan_in, int64_t fan_out) {
    const double range = 1.0 / std::sqrt(static_cast<double>(fan_in));
    push(name, rng_.tensor_uniform({fan_in, fan_out}, -range, range));
  }
  void bias(const std::string& name, int64_t dim) { push(name, Tensor::zeros({dim})); }

 private:
  void push(const std::string& name, Tensor t) {
    index_[name] = out_.size();
    out_.emplace_back(name, std::move(t));
  }
  NamedTensors& out_;
  std::map<std::string, size_t>& index_;
  Rng rng_;
};

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, uint64_t seed) {
  ModelParams p;
  ParamInit mk(p.tensors_, p.index_, seed);
  const int64_t D = cfg.hidden;

  mk.weight("in_proj.W1", cfg.feature_dim, D);
  mk.bias("in_proj.b1", D);
  mk.weight("in_proj.W2", D, D);
  mk.bias("in_proj.b2", D);

  mk.weight("time_proj.W", cfg.time_dim, D);
  mk.bias("time_proj.b", D);
  mk.weight("se_proj.W", cfg.se_dim, D);
  mk.bias("se_proj.b", D);
  mk.weight("ste_fuse.W", 2 * D, D);
  mk.bias("ste_fuse.b", D);

  for (const char* stack : {"attn_s", "attn_t"})
    for (int64_t l = 0; l < cfg.layers; ++l) {
      const std::string base = std::string(stack) + "." + std::to_string(l) + ".";
      for (const char* wn : {"Wq", "Wk", "Wv", "Wo"}) mk.weight(base + wn, D, D);
      for (const char* bn : {"bq", "bk", "bv", "bo"}) mk.bias(base + bn, D);
    }

  for (const char* branch : {"enc_s", "enc_t", "dec_s", "dec_t"}) {
    mk.weight(std::string("sep.") + branch + ".W", D, D);
    mk.bias(std::string("sep.") + branch + ".b", D);
  }

  mk.weight("fuse.W", 4 * D, D);
  mk.bias("fuse.b", D);

  mk.weight("query_s.W", D, cfg.codebook_dim);
  mk.weight("query_t.W", D, cfg.codebook_dim);
  mk.bias("query.b", cfg.codebook_dim);

  mk.weight("head.W1", 4 * D, D);
  mk.bias("head.b1", D);
  mk.weight("head.W2", D, cfg.feature_dim);
  mk.bias("head.b2", cfg.feature_dim);

  mk.weight("irm_s.W", D, cfg.feature_dim);
  mk.bias("irm_s.b", cfg.feature_dim);
  mk.weight("irm_t.W", D, cfg.feature_dim);
  mk.bias("irm_t.b", cfg.feature_dim);
  return p;
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("no such parameter: " + name);
  return tensors_[it->second].second;
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("no such parameter: " + name);
  return tensors_[it->second].second;
}

int64_t ModelParams::total_elements() const {
  int64_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.numel();
  return n;
}

void RoundReference::update(const Tensor& es, const Tensor& et, const Tensor& ds,
                            const Tensor& dt) {
  auto blend = [&](Tensor& ema, const Tensor& x) {
    if (!ready) {
      ema = x;
      return;
    }
    for (int64_t i = 0; i < ema.numel(); ++i) ema[i] = decay * ema[i] + (1.0 - decay) * x[i];
  };
  blend(enc_s, es);
  blend(enc_t, et);
  blend(dec_s, ds);
  blend(dec_t, dt);
  ready = true;
}

ParamBinding ParamBinding::bind(Graph& g, const ModelParams& params) {
  ParamBinding pb;
  for (const auto& [name, t] : params.tensors()) pb.ids[name] = g.leaf(t, true);
  return pb;
}

int ParamBinding::at(const std::string& name) const {
  auto it = ids.find(name);
  if (it == ids.end()) throw std::invalid_argument("unbound parameter: " + name);
  return it->second;
}

namespace {

int linear(Graph& g, const ParamBinding& pb, int x, const std::string& w,
           const std::string& b) {
  return g.add(g.matmul(x, pb.at(w)), pb.at(b));
}

// Self-attention over axis 1 of (B, N, D) with residual and output map.
int attention_core(Graph& g, int64_t hidden, const ParamBinding& pb, const std::string& base,
                   int x, std::vector<int>* weights_out) {
  int q = linear(g, pb, x, base + "Wq", base + "bq");
  int k = linear(g, pb, x, base + "Wk", base + "bk");
  int v = linear(g, pb, x, base + "Wv", base + "bv");
  int scores = g.scale(g.matmul(q, g.transpose_last2(k)),
                       1.0 / std::sqrt(static_cast<double>(hidden)));
  int w = g.softmax(scores, 2);
  if (weights_out) weights_out->push_back(w);
  int mixed = g.matmul(w, v);
  int res = g.add(x, mixed);
  return linear(g, pb, res, base + "Wo", base + "bo");
}

}  // namespace

SteNodes build_ste(Graph& g, const ModelConfig& cfg, const ParamBinding& pb,
                   const Tensor& time_feat_his, const Tensor& time_feat_pred, const Tensor& se) {
  if (se.ndim() != 2 || se.dim(1) != cfg.se_dim)
    throw std::invalid_argument("build_ste: SE must be (|V|, " + std::to_string(cfg.se_dim) +
                                "), got " + se.shape_str());
  if (se.dim(0) != cfg.nodes)
    throw std::invalid_argument("build_ste: SE has " + std::to_string(se.dim(0)) +
                                " nodes, dataset has " + std::to_string(cfg.nodes));
  const int64_t D = cfg.hidden, V = cfg.nodes;

  int se_proj = linear(g, pb, g.constant(se), "se_proj.W", "se_proj.b");  // (V, D)
  int se3 = g.reshape(se_proj, {1, V, D});

  SteNodes out;
  auto one_side = [&](const Tensor& time_feat, int64_t steps, int& time_node) {
    int tproj = linear(g, pb, g.constant(time_feat), "time_proj.W", "time_proj.b");  // (steps, D)
    time_node = tproj;
    int t3 = g.add(g.reshape(tproj, {steps, 1, D}), g.constant(Tensor::zeros({steps, V, D})));
    int s3 = g.add(se3, g.constant(Tensor::zeros({steps, V, D})));
    return linear(g, pb, g.concat({t3, s3}, 2), "ste_fuse.W", "ste_fuse.b");
  };
  out.ste_his = one_side(time_feat_his, cfg.gamma, out.time_his);
  out.ste_pred = one_side(time_feat_pred, cfg.beta, out.time_pred);
  return out;
}

int spatial_attention(Graph& g, const ModelConfig& cfg, const ParamBinding& pb, int x,
                      std::vector<int>* weights_out) {
  int cur = x;
  for (int64_t l = 0; l < cfg.layers; ++l)
    cur = attention_core(g, cfg.hidden, pb, "attn_s." + std::to_string(l) + ".", cur,
                         weights_out);
  return cur;
}

int temporal_attention(Graph& g, const ModelConfig& cfg, const ParamBinding& pb, int x,
                       std::vector<int>* weights_out) {
  int cur = g.swap_axes01(x);  // (V, steps, D): attend over steps per node
  for (int64_t l = 0; l < cfg.layers; ++l)
    cur = attention_core(g, cfg.hidden, pb, "attn_t." + std::to_string(l) + ".", cur,
                         weights_out);
  return g.swap_axes01(cur);
}

SepNodes conditional_separate(Graph& g, int f_curr, const Tensor& f_prev, int w, int b,
                              bool bypass) {
  SepNodes out;
  if (bypass) {
    out.m_c = g.constant(Tensor::full(g.value(f_curr).shape(), 1.0));
    out.m_o = g.constant(Tensor::zeros(g.value(f_curr).shape()));
    out.f_c = g.relu(f_curr);
    out.f_o = g.constant(Tensor::zeros(g.value(f_curr).shape()));
    return out;
  }
  if (f_prev.shape() != g.value(f_curr).shape())
    throw std::invalid_argument("conditional_separate: reference shape " + f_prev.shape_str() +
                                " != features " + g.value(f_curr).shape_str());
  int ref = g.constant(f_prev);
  out.m_c = g.sigmoid(g.add(g.matmul(ref, w), b));
  out.m_o = g.sub(g.scalar(1.0), out.m_c);
  int one = g.scalar(1.0);
  out.f_c = g.relu(g.mul(g.add(one, g.layer_norm(out.m_c)), f_curr));
  out.f_o = g.relu(g.mul(g.add(one, g.layer_norm(out.m_o)), f_curr));
  return out;
}

int irm_penalty(Graph& g, int yhat_branch, int y) {
  if (g.value(yhat_branch).shape() != g.value(y).shape())
    throw std::invalid_argument("irm_penalty: shapes differ: " +
                                g.value(yhat_branch).shape_str() + " vs " +
                                g.value(y).shape_str());
  int risk_grad = g.scale(g.mean_all(g.mul(g.sub(yhat_branch, y), yhat_branch)), 2.0);
  return g.square(risk_grad);
}

namespace {

// In-graph codebook query + Eq. 9 pair selection + InfoNCE branch loss.
// Returns the scalar loss node; fills the trace with recorded values.
int branch_codebook_loss(Graph& g, const ModelConfig& cfg, const ParamBinding& pb,
                         int delta_node, int f_c, const std::string& wq_name, QueryTrace& trace) {
  const Tensor& f = g.value(f_c);
  const int64_t N = f.numel() / cfg.hidden;
  const int64_t phi = g.value(delta_node).dim(0);
  int flat = g.reshape(f_c, {N, cfg.hidden});
  int anchor = g.add(g.matmul(flat, pb.at(wq_name)), pb.at("query.b"));  // (N, dcb)
  int scores = g.matmul(anchor, g.transpose_last2(delta_node));          // (N, phi)
  int alpha = g.softmax(scores, 1);

  // Data-dependent top-2 selection, recorded as constant one-hot gathers.
  const Tensor& a = g.value(alpha);
  Tensor pos_hot({N, phi}), neg_hot({N, phi});
  trace.pos_index.resize(static_cast<size_t>(N));
  trace.neg_index.resize(static_cast<size_t>(N));
  for (int64_t r = 0; r < N; ++r) {
    int64_t best, second;
    top2_indices(a.data() + r * phi, phi, best, second);
    pos_hot.at({r, best}) = 1.0;
    neg_hot.at({r, second}) = 1.0;
    trace.pos_index[static_cast<size_t>(r)] = best;
    trace.neg_index[static_cast<size_t>(r)] = second;
  }
  int pos_hot_c = g.constant(std::move(pos_hot));
  int neg_hot_c = g.constant(std::move(neg_hot));
  int alpha_pos = g.reshape(g.sum_axis(g.mul(alpha, pos_hot_c), 1), {N, 1});
  int alpha_neg = g.reshape(g.sum_axis(g.mul(alpha, neg_hot_c), 1), {N, 1});
  int pos = g.mul(g.matmul(pos_hot_c, delta_node), alpha_pos);
  int neg = g.mul(g.matmul(neg_hot_c, delta_node), alpha_neg);

  int cp = g.cosine_sim(anchor, pos);
  int cn = g.cosine_sim(anchor, neg);
  int z = g.scale(g.sub(cn, cp), 1.0 / cfg.tau);
  int loss = g.mean_all(g.log(g.add(g.exp(z), g.scalar(1.0))));

  trace.alpha = g.value(alpha);
  trace.anchor = g.value(anchor);
  return loss;
}

}  // namespace

ForwardResult model_forward(Graph& g, const ModelConfig& cfg, const ParamBinding& pb,
                            int delta_node, const Tensor& history, const Tensor& target,
                            const Tensor& time_feat_his, const Tensor& time_feat_pred,
                            const Tensor& se, const RoundReference& ref,
                            const ForwardOptions& opt) {
  const int64_t V = cfg.nodes, D = cfg.hidden;
  if (history.ndim() != 3 || history.dim(0) != cfg.gamma || history.dim(1) != V ||
      history.dim(2) != cfg.feature_dim)
    throw std::invalid_argument("model_forward: history shape " + history.shape_str() +
                                " does not match the model configuration");

  ForwardResult out;
  int x = g.constant(history);
  int h1 = g.relu(linear(g, pb, x, "in_proj.W1", "in_proj.b1"));
  int h = linear(g, pb, h1, "in_proj.W2", "in_proj.b2");  // (gamma, V, D)

  SteNodes ste = build_ste(g, cfg, pb, time_feat_his, time_feat_pred, se);

  // Encoder branches.
  int s_feat = spatial_attention(g, cfg, pb, h, &out.attn_weights);
  int t_feat = temporal_attention(g, cfg, pb, ste.ste_his, &out.attn_weights);
  out.feat_enc_s = g.value(s_feat);
  out.feat_enc_t = g.value(t_feat);

  SepNodes sep_s =
      conditional_separate(g, s_feat, ref.ready ? ref.enc_s : g.value(s_feat),
                           pb.at("sep.enc_s.W"), pb.at("sep.enc_s.b"), opt.bypass_separation);
  SepNodes sep_t =
      conditional_separate(g, t_feat, ref.ready ? ref.enc_t : g.value(t_feat),
                           pb.at("sep.enc_t.W"), pb.at("sep.enc_t.b"), opt.bypass_separation);

  // R_t: the four separated tensors concatenated and mapped back to D.
  int fused = g.concat({g.concat({sep_t.f_o, sep_t.f_c}, 2), g.concat({sep_s.f_o, sep_s.f_c}, 2)},
                       2);
  int r = linear(g, pb, fused, "fuse.W", "fuse.b");  // (gamma, V, D)

  // Decoder branches.
  int s2_feat = spatial_attention(g, cfg, pb, r, &out.attn_weights);
  int t2_feat = temporal_attention(g, cfg, pb, ste.ste_pred, &out.attn_weights);
  out.feat_dec_s = g.value(s2_feat);
  out.feat_dec_t = g.value(t2_feat);

  SepNodes sep_s2 =
      conditional_separate(g, s2_feat, ref.ready ? ref.dec_s : g.value(s2_feat),
                           pb.at("sep.dec_s.W"), pb.at("sep.dec_s.b"), opt.bypass_separation);
  SepNodes sep_t2 =
      conditional_separate(g, t2_feat, ref.ready ? ref.dec_t : g.value(t2_feat),
                           pb.at("sep.dec_t.W"), pb.at("sep.dec_t.b"), opt.bypass_separation);

  // The spatial decoder path carries gamma steps; average over the history
  // axis and broadcast across the beta prediction steps before fusion.
  auto to_pred_steps = [&](int node) {
    int mean = g.reshape(g.mean_axis(node, 0), {1, V, D});
    return g.add(mean, g.constant(Tensor::zeros({cfg.beta, V, D})));
  };
  int s2_c = to_pred_steps(sep_s2.f_c);
  int s2_o = to_pred_steps(sep_s2.f_o);

  int head_in = g.concat({sep_t2.f_o, sep_t2.f_c, s2_o, s2_c}, 2);  // (beta, V, 4D)
  int p1 = g.relu(linear(g, pb, head_in, "head.W1", "head.b1"));
  out.yhat = linear(g, pb, p1, "head.W2", "head.b2");  // (beta, V, d)

  auto grab = [&](const SepNodes& s) {
    return SeparationOutput{g.value(s.f_c), g.value(s.f_o), g.value(s.m_c), g.value(s.m_o)};
  };
  out.enc_s = grab(sep_s);
  out.enc_t = grab(sep_t);
  out.dec_s = grab(sep_s2);
  out.dec_t = grab(sep_t2);

  if (!opt.with_loss) return out;

  int y = g.constant(target);
  out.l_mse = g.mean_all(g.square(g.sub(out.yhat, y)));

  if (opt.use_codebook) {
    if (delta_node < 0) throw std::invalid_argument("model_forward: codebook node required");
    int com = branch_codebook_loss(g, cfg, pb, delta_node, sep_s.f_c, "query_s.W", out.q_enc_s);
    com = g.add(com,
                branch_codebook_loss(g, cfg, pb, delta_node, sep_t.f_c, "query_t.W", out.q_enc_t));
    com = g.add(com, branch_codebook_loss(g, cfg, pb, delta_node, sep_s2.f_c, "query_s.W",
                                          out.q_dec_s));
    com = g.add(com, branch_codebook_loss(g, cfg, pb, delta_node, sep_t2.f_c, "query_t.W",
                                          out.q_dec_t));
    out.l_com = com;
  } else {
    out.l_com = g.constant(Tensor::scalar(0.0));
  }

  int yhat_s = linear(g, pb, s2_c, "irm_s.W", "irm_s.b");
  int yhat_t = linear(g, pb, sep_t2.f_c, "irm_t.W", "irm_t.b");
  out.l_irm = g.add(irm_penalty(g, yhat_s, y), irm_penalty(g, yhat_t, y));

  out.l_local = g.add(out.l_mse, g.add(g.scale(out.l_com, cfg.lambda_com),
                                       g.scale(out.l_irm, cfg.lambda_irm)));
  return out;
}

LossBreakdown ForwardResult::breakdown(const Graph& g, double lambda_com,
                                       double lambda_irm) const {
  LossBreakdown b;
  b.l_mse = g.value(l_mse)[0];
  b.l_com = g.value(l_com)[0];
  b.l_irm = g.value(l_irm)[0];
  b.l_local = g.value(l_local)[0];
  b.lambda_com = lambda_com;
  b.lambda_irm = lambda_irm;
  return b;
}

}  // namespace scfsgl
