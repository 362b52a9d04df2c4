#include "scfsgl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "scfsgl/checkpoint.hpp"

namespace scfsgl {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kStdFloor = 1e-8;
}  // namespace

void STGDataset::validate() const {
  if (node_count <= 0 || feature_dim <= 0) throw std::invalid_argument("dataset: empty");
  if (adjacency.ndim() != 2 || adjacency.dim(0) != node_count || adjacency.dim(1) != node_count)
    throw std::invalid_argument("dataset: adjacency must be " + std::to_string(node_count) + "x" +
                                std::to_string(node_count) + ", got " + adjacency.shape_str());
  if (series.ndim() != 3 || series.dim(0) != static_cast<int64_t>(timestamps.size()) ||
      series.dim(1) != node_count || series.dim(2) != feature_dim)
    throw std::invalid_argument("dataset: series shape " + series.shape_str() +
                                " inconsistent with timestamps/nodes/features");
  for (int64_t i = 0; i < adjacency.numel(); ++i)
    if (adjacency[i] < 0.0) throw std::invalid_argument("dataset: negative adjacency entry");
}

std::vector<std::pair<STGDataset, GeneratorGroundTruth>> generate_synthetic(
    const SyntheticConfig& cfg) {
  if (cfg.clients <= 0 || cfg.nodes_per_client <= 0 || cfg.steps <= 0 || cfg.slots_per_day <= 0 ||
      cfg.feature_dim <= 0)
    throw std::invalid_argument("generate_synthetic: all counts must be positive");
  if (cfg.shared_strength < 0 || cfg.specific_strength < 0 || cfg.noise_std < 0)
    throw std::invalid_argument("generate_synthetic: strengths must be >= 0");
  if (cfg.nodes_per_client < kMotifSize)
    throw std::invalid_argument("generate_synthetic: nodes_per_client " +
                                std::to_string(cfg.nodes_per_client) + " < motif size " +
                                std::to_string(kMotifSize));

  Rng root(cfg.seed);
  const int64_t V = cfg.nodes_per_client;
  const int64_t T = cfg.steps;
  const int64_t d = cfg.feature_dim;

  // Common motif: a ring over the first kMotifSize nodes plus two chords,
  // identical weights in every client's graph.
  Rng motif_rng = root.fork(1);
  Tensor motif({kMotifSize, kMotifSize});
  auto motif_edge = [&](int64_t i, int64_t j, double w) {
    motif.at({i, j}) = w;
    motif.at({j, i}) = w;
  };
  for (int64_t i = 0; i < kMotifSize; ++i)
    motif_edge(i, (i + 1) % kMotifSize, motif_rng.uniform(0.5, 1.0));
  motif_edge(0, kMotifSize / 2, motif_rng.uniform(0.5, 1.0));
  motif_edge(1, kMotifSize / 2 + 1, motif_rng.uniform(0.5, 1.0));

  // Shared loading: two diffusion steps of a point source over the motif.
  std::vector<double> loading(static_cast<size_t>(kMotifSize), 0.0);
  loading[0] = 1.0;
  for (int round = 0; round < 2; ++round) {
    std::vector<double> next = loading;
    for (int64_t i = 0; i < kMotifSize; ++i) {
      double deg = 0.0;
      for (int64_t j = 0; j < kMotifSize; ++j) deg += motif.at({i, j});
      for (int64_t j = 0; j < kMotifSize; ++j)
        if (motif.at({i, j}) > 0) next[static_cast<size_t>(j)] += loading[static_cast<size_t>(i)] * motif.at({i, j}) / deg;
    }
    loading = std::move(next);
  }
  double lmax = 0.0;
  for (double v : loading) lmax = std::max(lmax, v);
  for (double& v : loading) v /= lmax;

  // Shared daily waveform, identical phase and shape across clients.
  Rng wave_rng = root.fork(2);
  std::vector<double> phase1(static_cast<size_t>(d)), phase2(static_cast<size_t>(d));
  for (int64_t f = 0; f < d; ++f) {
    phase1[static_cast<size_t>(f)] = wave_rng.uniform(0, 2 * kPi);
    phase2[static_cast<size_t>(f)] = wave_rng.uniform(0, 2 * kPi);
  }
  auto shared_wave = [&](int64_t t, int64_t f) {
    const double x = 2 * kPi * static_cast<double>(t) / static_cast<double>(cfg.slots_per_day);
    return std::sin(x + phase1[static_cast<size_t>(f)]) +
           0.5 * std::sin(2 * x + phase2[static_cast<size_t>(f)]);
  };

  std::vector<std::pair<STGDataset, GeneratorGroundTruth>> out;
  out.reserve(static_cast<size_t>(cfg.clients));
  for (int64_t k = 0; k < cfg.clients; ++k) {
    Rng crng = root.fork(100 + static_cast<uint64_t>(k));

    // Random geometric graph with the motif embedded on the first nodes.
    std::vector<double> px(static_cast<size_t>(V)), py(static_cast<size_t>(V));
    for (int64_t i = 0; i < V; ++i) {
      px[static_cast<size_t>(i)] = crng.uniform();
      py[static_cast<size_t>(i)] = crng.uniform();
    }
    const double radius = 0.35;
    Tensor adj({V, V});
    for (int64_t i = 0; i < V; ++i)
      for (int64_t j = i + 1; j < V; ++j) {
        double dx = px[static_cast<size_t>(i)] - px[static_cast<size_t>(j)];
        double dy = py[static_cast<size_t>(i)] - py[static_cast<size_t>(j)];
        double dist = std::sqrt(dx * dx + dy * dy);
        if (dist < radius) {
          double w = std::exp(-(dist * dist) / (radius * radius));
          adj.at({i, j}) = w;
          adj.at({j, i}) = w;
        }
      }
    for (int64_t i = 0; i < kMotifSize; ++i)
      for (int64_t j = 0; j < kMotifSize; ++j)
        adj.at({i, j}) = std::max(adj.at({i, j}), motif.at({i, j}));
    // Attach any isolated node to its nearest neighbor.
    for (int64_t i = 0; i < V; ++i) {
      double deg = 0.0;
      for (int64_t j = 0; j < V; ++j) deg += adj.at({i, j});
      if (deg > 0.0) continue;
      int64_t best = i == 0 ? 1 : 0;
      double bestd = 1e18;
      for (int64_t j = 0; j < V; ++j) {
        if (j == i) continue;
        double dx = px[static_cast<size_t>(i)] - px[static_cast<size_t>(j)];
        double dy = py[static_cast<size_t>(i)] - py[static_cast<size_t>(j)];
        double dist = dx * dx + dy * dy;
        if (dist < bestd) {
          bestd = dist;
          best = j;
        }
      }
      adj.at({i, best}) = 0.5;
      adj.at({best, i}) = 0.5;
    }

    // Client-specific temporal factor: unique period and spatial loading.
    const int64_t divisor = 3 + static_cast<int64_t>(crng.integer(8));
    const double period = static_cast<double>(cfg.slots_per_day) / static_cast<double>(divisor);
    const double sphase = crng.uniform(0, 2 * kPi);
    std::vector<double> uload(static_cast<size_t>(V));
    double unorm = 0.0;
    for (int64_t i = 0; i < V; ++i) {
      uload[static_cast<size_t>(i)] = std::abs(crng.normal());
      unorm = std::max(unorm, uload[static_cast<size_t>(i)]);
    }
    for (double& v : uload) v /= unorm;

    Tensor shared({T, V, d}), specific({T, V, d}), series({T, V, d});
    for (int64_t t = 0; t < T; ++t)
      for (int64_t v = 0; v < V; ++v)
        for (int64_t f = 0; f < d; ++f) {
          const double load = v < kMotifSize ? loading[static_cast<size_t>(v)] : 0.0;
          const double sh = cfg.shared_strength * shared_wave(t, f) * load;
          const double sp = cfg.specific_strength *
                            std::sin(2 * kPi * static_cast<double>(t) / period + sphase) *
                            uload[static_cast<size_t>(v)];
          shared.at({t, v, f}) = sh;
          specific.at({t, v, f}) = sp;
          series.at({t, v, f}) = sh + sp + cfg.noise_std * crng.normal();
        }

    STGDataset ds;
    ds.node_count = V;
    ds.feature_dim = d;
    ds.series = std::move(series);
    ds.adjacency = std::move(adj);
    ds.timestamps.resize(static_cast<size_t>(T));
    for (int64_t t = 0; t < T; ++t) ds.timestamps[static_cast<size_t>(t)] = t;
    ds.slots_per_day = cfg.slots_per_day;
    ds.validate();

    GeneratorGroundTruth gt;
    gt.shared_signal = std::move(shared);
    gt.specific_signal = std::move(specific);
    gt.shared_strength = cfg.shared_strength;
    gt.specific_strength = cfg.specific_strength;
    out.emplace_back(std::move(ds), std::move(gt));
  }
  return out;
}

namespace {
std::vector<std::vector<double>> parse_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    size_t start = 0;
    int64_t col = 0;
    while (true) {
      size_t comma = line.find(',', start);
      std::string cell = line.substr(start, comma == std::string::npos ? std::string::npos
                                                                       : comma - start);
      ++col;
      try {
        row.push_back(parse_double(cell));
      } catch (const std::exception&) {
        throw std::runtime_error(path + ": non-numeric cell at row " + std::to_string(lineno) +
                                 ", column " + std::to_string(col) + ": '" + cell + "'");
      }
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}
}  // namespace

STGDataset load_csv(const std::string& values_path, const std::string& adjacency_path,
                    int64_t slots_per_day) {
  auto values = parse_csv(values_path);
  if (values.empty()) throw std::runtime_error(values_path + ": empty values file");
  const size_t ncols = values[0].size();
  for (size_t r = 0; r < values.size(); ++r)
    if (values[r].size() != ncols)
      throw std::runtime_error(values_path + ": ragged row " + std::to_string(r + 1) + " has " +
                               std::to_string(values[r].size()) + " cells, expected " +
                               std::to_string(ncols));

  auto adjrows = parse_csv(adjacency_path);
  const size_t V = adjrows.size();
  if (V != ncols)
    throw std::runtime_error(adjacency_path + ": adjacency is " + std::to_string(V) +
                             " rows but values have " + std::to_string(ncols) + " columns");
  for (size_t r = 0; r < V; ++r)
    if (adjrows[r].size() != V)
      throw std::runtime_error(adjacency_path + ": non-square adjacency at row " +
                               std::to_string(r + 1));

  STGDataset ds;
  ds.node_count = static_cast<int64_t>(V);
  ds.feature_dim = 1;
  ds.slots_per_day = slots_per_day;
  const int64_t T = static_cast<int64_t>(values.size());
  ds.series = Tensor({T, ds.node_count, 1});
  for (int64_t t = 0; t < T; ++t)
    for (int64_t v = 0; v < ds.node_count; ++v)
      ds.series.at({t, v, 0}) = values[static_cast<size_t>(t)][static_cast<size_t>(v)];
  ds.adjacency = Tensor({ds.node_count, ds.node_count});
  for (int64_t i = 0; i < ds.node_count; ++i)
    for (int64_t j = 0; j < ds.node_count; ++j)
      ds.adjacency.at({i, j}) = adjrows[static_cast<size_t>(i)][static_cast<size_t>(j)];
  ds.timestamps.resize(static_cast<size_t>(T));
  for (int64_t t = 0; t < T; ++t) ds.timestamps[static_cast<size_t>(t)] = t;
  ds.validate();
  return ds;
}

void write_values_csv(const std::string& path, const STGDataset& ds) {
  if (ds.feature_dim != 1)
    throw std::invalid_argument("write_values_csv: only d=1 series are representable");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  const int64_t T = ds.series.dim(0);
  for (int64_t t = 0; t < T; ++t) {
    for (int64_t v = 0; v < ds.node_count; ++v) {
      if (v) f << ",";
      f << fmt_double(ds.series.at({t, v, 0}));
    }
    f << "\n";
  }
}

void write_adjacency_csv(const std::string& path, const STGDataset& ds) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  for (int64_t i = 0; i < ds.node_count; ++i) {
    for (int64_t j = 0; j < ds.node_count; ++j) {
      if (j) f << ",";
      f << fmt_double(ds.adjacency.at({i, j}));
    }
    f << "\n";
  }
}

std::vector<Window> make_windows(const STGDataset& ds, int64_t gamma, int64_t beta) {
  if (gamma < 1 || beta < 1) throw std::invalid_argument("window: gamma and beta must be >= 1");
  const int64_t T = ds.series.dim(0);
  if (T < gamma + beta)
    throw std::invalid_argument("window: series length " + std::to_string(T) +
                                " < gamma + beta = " + std::to_string(gamma + beta));
  const int64_t V = ds.node_count, d = ds.feature_dim;
  const int64_t count = T - gamma - beta + 1;
  std::vector<Window> out;
  out.reserve(static_cast<size_t>(count));
  const int64_t step_sz = V * d;
  for (int64_t s = 0; s < count; ++s) {
    Window w;
    w.history = Tensor({gamma, V, d});
    w.target = Tensor({beta, V, d});
    std::copy(ds.series.data() + s * step_sz, ds.series.data() + (s + gamma) * step_sz,
              w.history.data());
    std::copy(ds.series.data() + (s + gamma) * step_sz,
              ds.series.data() + (s + gamma + beta) * step_sz, w.target.data());
    w.history_stamps.assign(ds.timestamps.begin() + s, ds.timestamps.begin() + s + gamma);
    w.target_stamps.assign(ds.timestamps.begin() + s + gamma,
                           ds.timestamps.begin() + s + gamma + beta);
    out.push_back(std::move(w));
  }
  return out;
}

SplitWindows split_windows(std::vector<Window> windows) {
  const int64_t n = static_cast<int64_t>(windows.size());
  if (n < 10) throw std::invalid_argument("split: need >= 10 windows, got " + std::to_string(n));
  const int64_t ntrain = n * 7 / 10;
  const int64_t nval = n / 10;
  SplitWindows s;
  s.train.assign(std::make_move_iterator(windows.begin()),
                 std::make_move_iterator(windows.begin() + ntrain));
  s.val.assign(std::make_move_iterator(windows.begin() + ntrain),
               std::make_move_iterator(windows.begin() + ntrain + nval));
  s.test.assign(std::make_move_iterator(windows.begin() + ntrain + nval),
                std::make_move_iterator(windows.end()));
  return s;
}

NormStats fit_normalize(const std::vector<Window>& train) {
  if (train.empty()) throw std::invalid_argument("fit_normalize: no training windows");
  const int64_t d = train[0].history.dim(2);
  std::vector<double> sum(static_cast<size_t>(d), 0.0), sumsq(static_cast<size_t>(d), 0.0);
  int64_t count = 0;
  auto feed = [&](const Tensor& t) {
    const int64_t rows = t.numel() / d;
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t f = 0; f < d; ++f) {
        double v = t[r * d + f];
        sum[static_cast<size_t>(f)] += v;
        sumsq[static_cast<size_t>(f)] += v * v;
      }
    count += rows;
  };
  for (const Window& w : train) {
    feed(w.history);
    feed(w.target);
  }
  NormStats ns;
  ns.mean.resize(static_cast<size_t>(d));
  ns.std.resize(static_cast<size_t>(d));
  for (int64_t f = 0; f < d; ++f) {
    double m = sum[static_cast<size_t>(f)] / static_cast<double>(count);
    double var = sumsq[static_cast<size_t>(f)] / static_cast<double>(count) - m * m;
    ns.mean[static_cast<size_t>(f)] = m;
    ns.std[static_cast<size_t>(f)] = std::max(std::sqrt(std::max(var, 0.0)), kStdFloor);
  }
  return ns;
}

Tensor NormStats::apply(const Tensor& x) const {
  const int64_t d = static_cast<int64_t>(mean.size());
  Tensor out{x.shape()};
  const int64_t rows = x.numel() / d;
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t f = 0; f < d; ++f)
      out[r * d + f] = (x[r * d + f] - mean[static_cast<size_t>(f)]) / std[static_cast<size_t>(f)];
  return out;
}

Tensor NormStats::invert(const Tensor& x) const {
  const int64_t d = static_cast<int64_t>(mean.size());
  Tensor out{x.shape()};
  const int64_t rows = x.numel() / d;
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t f = 0; f < d; ++f)
      out[r * d + f] = x[r * d + f] * std[static_cast<size_t>(f)] + mean[static_cast<size_t>(f)];
  return out;
}

Tensor encode_time(const std::vector<int64_t>& stamps, int64_t slots_per_day) {
  if (slots_per_day < 1) throw std::invalid_argument("encode_time: slots_per_day must be >= 1");
  const int64_t len = static_cast<int64_t>(stamps.size());
  const int64_t width = 7 + slots_per_day;
  Tensor out({len, width});
  const int64_t week = 7 * slots_per_day;
  for (int64_t i = 0; i < len; ++i) {
    int64_t s = stamps[static_cast<size_t>(i)];
    if (s < 0) throw std::invalid_argument("encode_time: negative stamp");
    const int64_t day = (s % week) / slots_per_day;
    const int64_t slot = s % slots_per_day;
    out.at({i, day}) = 1.0;
    out.at({i, 7 + slot}) = 1.0;
  }
  return out;
}

}  // namespace scfsgl
