#include "scfsgl/federated.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "scfsgl/checkpoint.hpp"

namespace scfsgl {

Variant parse_variant(const std::string& tag) {
  if (tag == "full") return Variant::kFull;
  if (tag == "no_book") return Variant::kNoBook;
  if (tag == "no_cs") return Variant::kNoCs;
  if (tag == "no_book_no_cs") return Variant::kNoBookNoCs;
  if (tag == "local_only") return Variant::kLocalOnly;
  if (tag == "full_fedavg") return Variant::kFullFedavg;
  throw std::invalid_argument("unknown variant tag: '" + tag +
                              "' (expected full | no_book | no_cs | no_book_no_cs | local_only "
                              "| full_fedavg)");
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoBook: return "no_book";
    case Variant::kNoCs: return "no_cs";
    case Variant::kNoBookNoCs: return "no_book_no_cs";
    case Variant::kLocalOnly: return "local_only";
    case Variant::kFullFedavg: return "full_fedavg";
  }
  return "?";
}

VariantFlags variant_flags(Variant v) {
  VariantFlags f;
  switch (v) {
    case Variant::kFull:
      break;
    case Variant::kNoBook:
      f.codebook = false;
      f.communicate = false;
      break;
    case Variant::kNoCs:
      f.separation = false;
      break;
    case Variant::kNoBookNoCs:
      f.codebook = false;
      f.communicate = false;
      f.separation = false;
      break;
    case Variant::kLocalOnly:
      f.communicate = false;
      break;
    case Variant::kFullFedavg:
      f.average_params = true;
      break;
  }
  return f;
}

Tensor aggregate(const std::vector<Tensor>& deltas) {
  if (deltas.empty()) throw std::invalid_argument("aggregate: no codebooks");
  for (size_t k = 1; k < deltas.size(); ++k)
    if (deltas[k].shape() != deltas[0].shape())
      throw std::invalid_argument("aggregate: client " + std::to_string(k) + " codebook shape " +
                                  deltas[k].shape_str() + " != " + deltas[0].shape_str());
  Tensor out = Tensor::zeros(deltas[0].shape());
  for (const Tensor& d : deltas)
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += d[i];
  const double inv = 1.0 / static_cast<double>(deltas.size());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= inv;
  return out;
}

int64_t comm_bytes(int64_t prototypes, int64_t dim, int64_t wire_precision_bytes) {
  return prototypes * dim * wire_precision_bytes;
}

int64_t comm_bytes(const Codebook& book, int64_t wire_precision_bytes) {
  return comm_bytes(book.prototypes(), book.dim(), wire_precision_bytes);
}

uint64_t fnv1a64(const double* data, int64_t n) {
  uint64_t h = 0xcbf29ce484222325ull;
  const unsigned char* bytes = reinterpret_cast<const unsigned char*>(data);
  for (int64_t i = 0; i < n * 8; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::vector<int64_t> strided_subset(int64_t n, int64_t cap) {
  std::vector<int64_t> idx;
  if (cap <= 0 || cap >= n) {
    idx.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    return idx;
  }
  idx.reserve(static_cast<size_t>(cap));
  for (int64_t j = 0; j < cap; ++j) idx.push_back(j * n / cap);
  return idx;
}

namespace {

uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

ModelConfig client_model_config(const FedConfig& cfg, int64_t nodes, int64_t feature_dim,
                                int64_t slots_per_day) {
  ModelConfig m = cfg.model;
  m.nodes = nodes;
  m.feature_dim = feature_dim;
  m.time_dim = 7 + slots_per_day;
  m.se_dim = cfg.skipgram.dim;
  return m;
}

void sgd_step(ModelParams& params, const ParamBinding& pb, const GradientMap& grads, double lr) {
  for (auto& [name, tensor] : params.tensors()) {
    const Tensor& g = grads.at(pb.at(name));
    for (int64_t i = 0; i < tensor.numel(); ++i) tensor[i] -= lr * g[i];
  }
}

}  // namespace

ClientRoundResult client_update(ClientState& state, const Tensor& delta_global,
                                const FedConfig& cfg) {
  const VariantFlags flags = variant_flags(cfg.variant);
  ClientRoundResult result;

  // Snapshot for rollback when this client's round aborts.
  const ModelParams params_before = state.params;
  const Tensor delta_before = state.delta_local;
  const RoundReference ref_before = state.ref;

  double sum_mse = 0, sum_com = 0, sum_irm = 0, sum_local = 0;
  int64_t n_losses = 0;

  try {
    if (flags.communicate) {
      if (state.delta_local.numel() > 0 && delta_global.shape() != state.delta_local.shape())
        throw std::invalid_argument("client_update: global codebook shape " +
                                    delta_global.shape_str() + " does not match local " +
                                    state.delta_local.shape_str());
      state.delta_local = delta_global;
    }

    const ModelConfig mcfg = client_model_config(
        cfg, state.splits.train[0].history.dim(1), state.splits.train[0].history.dim(2),
        state.slots_per_day);
    ForwardOptions opt;
    opt.bypass_separation = !flags.separation;
    opt.use_codebook = flags.codebook;

    const auto idx =
        strided_subset(static_cast<int64_t>(state.splits.train.size()), cfg.epoch_window_cap);

    for (int64_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
      RoundReference fresh;
      fresh.decay = cfg.ema_decay;
      for (int64_t wi : idx) {
        const Window& w = state.splits.train[static_cast<size_t>(wi)];
        Graph g;
        ParamBinding pb = ParamBinding::bind(g, state.params);
        int delta_node = flags.codebook ? g.leaf(state.delta_local, true) : -1;
        Tensor tf_his = encode_time(w.history_stamps, state.slots_per_day);
        Tensor tf_pred = encode_time(w.target_stamps, state.slots_per_day);
        ForwardResult fr = model_forward(g, mcfg, pb, delta_node, w.history, w.target, tf_his,
                                         tf_pred, state.se, state.ref, opt);
        const double loss = g.value(fr.l_local)[0];
        if (!std::isfinite(loss))
          throw std::runtime_error("non-finite local loss at train window " +
                                   std::to_string(wi));
        sum_mse += g.value(fr.l_mse)[0];
        sum_com += g.value(fr.l_com)[0];
        sum_irm += g.value(fr.l_irm)[0];
        sum_local += loss;
        ++n_losses;

        GradientMap grads = g.backward(fr.l_local);
        sgd_step(state.params, pb, grads, cfg.lr);
        if (delta_node >= 0) {
          const Tensor& dg = grads.at(delta_node);
          for (int64_t i = 0; i < state.delta_local.numel(); ++i)
            state.delta_local[i] -= cfg.lr * dg[i];
        }
        fresh.update(fr.feat_enc_s, fr.feat_enc_t, fr.feat_dec_s, fr.feat_dec_t);
      }
      if (fresh.ready) state.ref = fresh;
    }
  } catch (const std::exception& e) {
    state.params = params_before;
    state.delta_local = delta_before;
    state.ref = ref_before;
    result.ok = false;
    result.error = e.what();
    result.delta_local = state.delta_local;
    return result;
  }

  result.delta_local = state.delta_local;
  if (n_losses > 0) {
    result.mean_loss.l_mse = sum_mse / static_cast<double>(n_losses);
    result.mean_loss.l_com = sum_com / static_cast<double>(n_losses);
    result.mean_loss.l_irm = sum_irm / static_cast<double>(n_losses);
    result.mean_loss.l_local = sum_local / static_cast<double>(n_losses);
  }
  result.mean_loss.lambda_com = cfg.model.lambda_com;
  result.mean_loss.lambda_irm = cfg.model.lambda_irm;
  return result;
}

FedRuntime::FedRuntime(FedConfig cfg, std::vector<STGDataset> datasets) : cfg_(std::move(cfg)) {
  if (datasets.empty()) throw std::invalid_argument("fed: no client datasets");
  if (cfg_.rounds < 1 || !(cfg_.lr >= 0.0)) throw std::invalid_argument("fed: bad rounds/lr");

  delta_global_ =
      init_codebook(cfg_.codebook_size, cfg_.model.codebook_dim, derive_seed(cfg_.seed, 1))
          .delta;

  clients_.resize(datasets.size());
  std::vector<std::string> errors(datasets.size());
#pragma omp parallel for schedule(static)
  for (int64_t k = 0; k < static_cast<int64_t>(datasets.size()); ++k) {
    try {
      const STGDataset& ds = datasets[static_cast<size_t>(k)];
      ds.validate();
      ClientState& st = clients_[static_cast<size_t>(k)];
      st.id = k;
      st.slots_per_day = ds.slots_per_day;

      WalkCorpus corpus =
          biased_walks(ds.adjacency, cfg_.n2v_p, cfg_.n2v_q, cfg_.n2v_walks, cfg_.n2v_walk_len,
                       derive_seed(cfg_.seed, 100 + static_cast<uint64_t>(k)));
      SkipgramConfig sg = cfg_.skipgram;
      sg.seed = derive_seed(cfg_.seed, 200 + static_cast<uint64_t>(k));
      st.se = skipgram_train(corpus, sg);

      st.splits = split_windows(make_windows(ds, cfg_.model.gamma, cfg_.model.beta));
      st.norm = fit_normalize(st.splits.train);
      for (auto* part : {&st.splits.train, &st.splits.val, &st.splits.test})
        for (Window& w : *part) {
          w.history = st.norm.apply(w.history);
          w.target = st.norm.apply(w.target);
        }

      const ModelConfig mcfg =
          client_model_config(cfg_, ds.node_count, ds.feature_dim, ds.slots_per_day);
      st.params = ModelParams::init(mcfg, derive_seed(cfg_.seed, 300 + static_cast<uint64_t>(k)));
      st.delta_local = delta_global_;
      st.ref.decay = cfg_.ema_decay;
    } catch (const std::exception& e) {
      errors[static_cast<size_t>(k)] = e.what();
    }
  }
  for (size_t k = 0; k < errors.size(); ++k)
    if (!errors[k].empty())
      throw std::runtime_error("fed: client " + std::to_string(k) + " setup failed: " + errors[k]);
}

void FedRuntime::evaluate_client(const ClientState& state, const std::vector<Window>& windows,
                                 Tensor& preds_out, Tensor& targets_out) const {
  const VariantFlags flags = variant_flags(cfg_.variant);
  const auto idx = strided_subset(static_cast<int64_t>(windows.size()), cfg_.eval_window_cap);
  const ModelConfig mcfg = client_model_config(cfg_, windows[0].history.dim(1),
                                               windows[0].history.dim(2), state.slots_per_day);
  const int64_t n = static_cast<int64_t>(idx.size());
  const int64_t inner = mcfg.beta * mcfg.nodes * mcfg.feature_dim;
  preds_out = Tensor({n, mcfg.beta, mcfg.nodes, mcfg.feature_dim});
  targets_out = Tensor({n, mcfg.beta, mcfg.nodes, mcfg.feature_dim});

  ForwardOptions opt;
  opt.bypass_separation = !flags.separation;
  opt.use_codebook = false;  // prediction path does not touch the codebook
  opt.with_loss = false;

  for (int64_t j = 0; j < n; ++j) {
    const Window& w = windows[static_cast<size_t>(idx[static_cast<size_t>(j)])];
    Graph g;
    ParamBinding pb = ParamBinding::bind(g, state.params);
    Tensor tf_his = encode_time(w.history_stamps, state.slots_per_day);
    Tensor tf_pred = encode_time(w.target_stamps, state.slots_per_day);
    ForwardResult fr = model_forward(g, mcfg, pb, -1, w.history, w.target, tf_his, tf_pred,
                                     state.se, state.ref, opt);
    Tensor pred = state.norm.invert(g.value(fr.yhat));
    Tensor target = state.norm.invert(w.target);
    std::copy(pred.data(), pred.data() + inner, preds_out.data() + j * inner);
    std::copy(target.data(), target.data() + inner, targets_out.data() + j * inner);
  }
}

RunResult FedRuntime::run() {
  const VariantFlags flags = variant_flags(cfg_.variant);
  const int64_t K = static_cast<int64_t>(clients_.size());
  RunResult result;

  double best_val_mae = std::numeric_limits<double>::infinity();
  int64_t rounds_without_improvement = 0;

  const int64_t param_elements = clients_[0].params.total_elements();
  const int64_t book_bytes =
      comm_bytes(cfg_.codebook_size, cfg_.model.codebook_dim, cfg_.wire_bytes);

  for (int64_t round = 1; round <= cfg_.rounds; ++round) {
    RoundRecord rec;
    rec.round = round;
    rec.train.resize(static_cast<size_t>(K));
    rec.val_mae.resize(static_cast<size_t>(K));
    rec.val_rmse.resize(static_cast<size_t>(K));
    rec.val_mape.resize(static_cast<size_t>(K));
    rec.bytes_up.assign(static_cast<size_t>(K), 0);
    rec.failed.assign(static_cast<size_t>(K), 0);
    rec.errors.assign(static_cast<size_t>(K), "");

    std::vector<ClientRoundResult> updates(static_cast<size_t>(K));
#pragma omp parallel for schedule(static)
    for (int64_t k = 0; k < K; ++k)
      updates[static_cast<size_t>(k)] = client_update(clients_[static_cast<size_t>(k)],
                                                      delta_global_, cfg_);

    std::vector<Tensor> deltas;
    std::vector<int64_t> ok_clients;
    for (int64_t k = 0; k < K; ++k) {
      const auto& up = updates[static_cast<size_t>(k)];
      rec.train[static_cast<size_t>(k)] = up.mean_loss;
      if (up.ok) {
        ok_clients.push_back(k);
        if (flags.communicate) {
          deltas.push_back(up.delta_local);
          rec.bytes_up[static_cast<size_t>(k)] =
              flags.average_params ? (param_elements + cfg_.codebook_size * cfg_.model.codebook_dim) *
                                         cfg_.wire_bytes
                                   : book_bytes;
        }
      } else {
        rec.failed[static_cast<size_t>(k)] = 1;
        rec.errors[static_cast<size_t>(k)] = up.error;
      }
    }

    if (flags.communicate && !deltas.empty()) delta_global_ = aggregate(deltas);

    if (flags.average_params && !ok_clients.empty()) {
      ModelParams mean = clients_[static_cast<size_t>(ok_clients[0])].params;
      for (auto& [name, tensor] : mean.tensors()) {
        for (size_t j = 1; j < ok_clients.size(); ++j) {
          const Tensor& other =
              clients_[static_cast<size_t>(ok_clients[j])].params.at(name);
          for (int64_t i = 0; i < tensor.numel(); ++i) tensor[i] += other[i];
        }
        const double inv = 1.0 / static_cast<double>(ok_clients.size());
        for (int64_t i = 0; i < tensor.numel(); ++i) tensor[i] *= inv;
      }
      for (auto& client : clients_) client.params = mean;
    }

    if (flags.communicate) {
      rec.delta_checksum = fnv1a64(delta_global_.data(), delta_global_.numel());
    } else if (flags.codebook) {
      uint64_t h = 0xcbf29ce484222325ull;
      for (const auto& client : clients_)
        h ^= fnv1a64(client.delta_local.data(), client.delta_local.numel());
      rec.delta_checksum = h;
    }

    // Per-client validation in denormalized units.
    std::vector<Tensor> preds(static_cast<size_t>(K)), targets(static_cast<size_t>(K));
    std::vector<std::string> eval_errors(static_cast<size_t>(K));
#pragma omp parallel for schedule(static)
    for (int64_t k = 0; k < K; ++k) {
      try {
        evaluate_client(clients_[static_cast<size_t>(k)],
                        clients_[static_cast<size_t>(k)].splits.val,
                        preds[static_cast<size_t>(k)], targets[static_cast<size_t>(k)]);
      } catch (const std::exception& e) {
        eval_errors[static_cast<size_t>(k)] = e.what();
      }
    }
    for (size_t k = 0; k < eval_errors.size(); ++k)
      if (!eval_errors[k].empty())
        throw std::runtime_error("fed: client " + std::to_string(k) +
                                 " validation failed: " + eval_errors[k]);
    double mean_mae = 0.0;
    for (int64_t k = 0; k < K; ++k) {
      rec.val_mae[static_cast<size_t>(k)] = mae(preds[static_cast<size_t>(k)], targets[static_cast<size_t>(k)]);
      rec.val_rmse[static_cast<size_t>(k)] = rmse(preds[static_cast<size_t>(k)], targets[static_cast<size_t>(k)]);
      rec.val_mape[static_cast<size_t>(k)] = mape(preds[static_cast<size_t>(k)], targets[static_cast<size_t>(k)]);
      mean_mae += rec.val_mae[static_cast<size_t>(k)];
    }
    mean_mae /= static_cast<double>(K);

    result.history.push_back(std::move(rec));
    result.rounds_run = round;

    if (mean_mae < best_val_mae) {
      best_val_mae = mean_mae;
      rounds_without_improvement = 0;
    } else {
      ++rounds_without_improvement;
      if (rounds_without_improvement >= cfg_.patience) {
        result.early_stopped = true;
        break;
      }
    }
  }

  // Final per-client test metrics, overall and per horizon.
  result.test_reports.resize(static_cast<size_t>(K));
  std::vector<std::string> test_errors(static_cast<size_t>(K));
#pragma omp parallel for schedule(static)
  for (int64_t k = 0; k < K; ++k) {
    try {
      Tensor preds, targets;
      evaluate_client(clients_[static_cast<size_t>(k)],
                      clients_[static_cast<size_t>(k)].splits.test, preds, targets);
      ClientTestReport& report = result.test_reports[static_cast<size_t>(k)];
      report.client = k;
      report.by_horizon = per_horizon_report(preds, targets);
      MetricSet all;
      all.horizon = "all";
      all.mae = mae(preds, targets);
      all.rmse = rmse(preds, targets);
      all.mape = mape(preds, targets);
      report.by_horizon.push_back(std::move(all));
    } catch (const std::exception& e) {
      test_errors[static_cast<size_t>(k)] = e.what();
    }
  }
  for (size_t k = 0; k < test_errors.size(); ++k)
    if (!test_errors[k].empty())
      throw std::runtime_error("fed: client " + std::to_string(k) +
                               " test evaluation failed: " + test_errors[k]);

  result.delta_global = delta_global_;
  return result;
}

void write_history_csv(const std::string& path, const RunResult& result) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  const size_t K = result.history.empty() ? 0 : result.history[0].val_mae.size();
  f << "round";
  for (size_t k = 0; k < K; ++k) {
    f << ",train_mse_" << k << ",train_com_" << k << ",train_irm_" << k << ",train_local_" << k
      << ",val_mae_" << k << ",val_rmse_" << k << ",val_mape_" << k << ",bytes_" << k
      << ",failed_" << k;
  }
  f << ",codebook_checksum\n";
  for (const RoundRecord& r : result.history) {
    f << r.round;
    for (size_t k = 0; k < K; ++k) {
      f << "," << fmt_double(r.train[k].l_mse) << "," << fmt_double(r.train[k].l_com) << ","
        << fmt_double(r.train[k].l_irm) << "," << fmt_double(r.train[k].l_local) << ","
        << fmt_double(r.val_mae[k]) << "," << fmt_double(r.val_rmse[k]) << ","
        << fmt_double(r.val_mape[k]) << "," << r.bytes_up[k] << ","
        << static_cast<int>(r.failed[k]);
    }
    f << "," << r.delta_checksum << "\n";
  }
}

void write_summary_csv(const std::string& path, const RunResult& result) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << "client,horizon,mae,rmse,mape\n";
  for (const ClientTestReport& report : result.test_reports)
    for (const MetricSet& m : report.by_horizon)
      f << report.client << "," << m.horizon << "," << fmt_double(m.mae) << ","
        << fmt_double(m.rmse) << "," << fmt_double(m.mape) << "\n";
}

void write_server_checkpoint(const std::string& path, const Tensor& delta_global) {
  NamedTensors ts;
  ts.emplace_back("delta", delta_global);
  write_checkpoint_file(path, ts);
}

void write_client_checkpoint(const std::string& path, const ClientState& state) {
  NamedTensors ts = state.params.tensors();
  if (state.delta_local.numel() > 0) ts.emplace_back("delta", state.delta_local);
  ts.emplace_back("SE", state.se);
  write_checkpoint_file(path, ts);
}

void write_embeddings_csv(const std::string& path, const ClientState& state,
                          const FedConfig& cfg, int64_t sample_cap) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  const auto& windows = state.splits.test;
  const auto idx = strided_subset(static_cast<int64_t>(windows.size()), sample_cap);
  const VariantFlags flags = variant_flags(cfg.variant);
  const ModelConfig mcfg = client_model_config(cfg, windows[0].history.dim(1),
                                               windows[0].history.dim(2), state.slots_per_day);
  ForwardOptions opt;
  opt.bypass_separation = !flags.separation;
  opt.use_codebook = false;
  opt.with_loss = false;

  f << "sample,branch";
  const int64_t width = mcfg.gamma * mcfg.nodes * mcfg.hidden;
  for (int64_t i = 0; i < width; ++i) f << ",f" << i;
  f << "\n";
  for (size_t j = 0; j < idx.size(); ++j) {
    const Window& w = windows[static_cast<size_t>(idx[j])];
    Graph g;
    ParamBinding pb = ParamBinding::bind(g, state.params);
    Tensor tf_his = encode_time(w.history_stamps, state.slots_per_day);
    Tensor tf_pred = encode_time(w.target_stamps, state.slots_per_day);
    ForwardResult fr = model_forward(g, mcfg, pb, -1, w.history, w.target, tf_his, tf_pred,
                                     state.se, state.ref, opt);
    const std::pair<const char*, const Tensor*> branches[] = {{"Sc", &fr.enc_s.f_c},
                                                              {"So", &fr.enc_s.f_o},
                                                              {"Tc", &fr.enc_t.f_c},
                                                              {"To", &fr.enc_t.f_o}};
    for (const auto& [label, tensor] : branches) {
      f << j << "," << label;
      for (int64_t i = 0; i < tensor->numel(); ++i) f << "," << fmt_double((*tensor)[i]);
      f << "\n";
    }
  }
}

}  // namespace scfsgl
