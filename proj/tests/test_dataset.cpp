#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "scfsgl/dataset.hpp"

using namespace scfsgl;

namespace {

std::vector<double> node_mean_series(const Tensor& series) {
  const int64_t T = series.dim(0), rest = series.numel() / series.dim(0);
  std::vector<double> out(static_cast<size_t>(T));
  for (int64_t t = 0; t < T; ++t) {
    double s = 0.0;
    for (int64_t i = 0; i < rest; ++i) s += series[t * rest + i];
    out[static_cast<size_t>(t)] = s / static_cast<double>(rest);
  }
  return out;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const size_t n = a.size();
  double ma = 0, mb = 0;
  for (size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0, saa = 0, sbb = 0;
  for (size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb + 1e-30);
}

double mean_cross_client_corr(const std::vector<std::pair<STGDataset, GeneratorGroundTruth>>& ds) {
  double total = 0.0;
  int pairs = 0;
  for (size_t i = 0; i < ds.size(); ++i)
    for (size_t j = i + 1; j < ds.size(); ++j) {
      total += pearson(node_mean_series(ds[i].first.series), node_mean_series(ds[j].first.series));
      ++pairs;
    }
  return total / pairs;
}

SyntheticConfig small_cfg() {
  SyntheticConfig cfg;
  cfg.clients = 5;
  cfg.nodes_per_client = 12;
  cfg.steps = 400;
  cfg.slots_per_day = 48;
  cfg.noise_std = 0.05;
  cfg.seed = 9;
  return cfg;
}

}  // namespace

TEST_CASE("shared-only clients are strongly correlated") {
  auto cfg = small_cfg();
  cfg.specific_strength = 0.0;
  auto ds = generate_synthetic(cfg);
  CHECK(mean_cross_client_corr(ds) > 0.9);
}

TEST_CASE("planted factors are separable") {
  auto cfg = small_cfg();
  cfg.specific_strength = 0.0;
  double corr_shared_only = mean_cross_client_corr(generate_synthetic(cfg));
  cfg.specific_strength = 1.0;
  cfg.shared_strength = 0.0;
  double corr_specific_only = mean_cross_client_corr(generate_synthetic(cfg));
  CHECK(corr_shared_only > corr_specific_only);
}

TEST_CASE("ground truth decomposes the series") {
  auto cfg = small_cfg();
  cfg.noise_std = 0.0;
  auto ds = generate_synthetic(cfg);
  for (auto& [data, gt] : ds)
    for (int64_t i = 0; i < data.series.numel(); ++i)
      CHECK(data.series[i] == gt.shared_signal[i] + gt.specific_signal[i]);
}

TEST_CASE("all strengths zero gives an all-zero series") {
  auto cfg = small_cfg();
  cfg.shared_strength = 0.0;
  cfg.specific_strength = 0.0;
  cfg.noise_std = 0.0;
  for (auto& [data, gt] : generate_synthetic(cfg))
    for (int64_t i = 0; i < data.series.numel(); ++i) CHECK(data.series[i] == 0.0);
}

TEST_CASE("same seed reproduces bit-identical datasets") {
  auto a = generate_synthetic(small_cfg());
  auto b = generate_synthetic(small_cfg());
  REQUIRE(a.size() == b.size());
  for (size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].first.series.vec() == b[k].first.series.vec());
    CHECK(a[k].first.adjacency.vec() == b[k].first.adjacency.vec());
  }
}

TEST_CASE("too-small clients are rejected") {
  auto cfg = small_cfg();
  cfg.nodes_per_client = kMotifSize - 1;
  CHECK_THROWS_AS((void)generate_synthetic(cfg), std::invalid_argument);
}

namespace {
STGDataset tiny_dataset(int64_t T, int64_t V = 2) {
  STGDataset ds;
  ds.node_count = V;
  ds.feature_dim = 1;
  ds.series = Tensor({T, V, 1});
  for (int64_t i = 0; i < ds.series.numel(); ++i) ds.series[i] = static_cast<double>(i);
  ds.adjacency = Tensor::full({V, V}, 1.0);
  ds.timestamps.resize(static_cast<size_t>(T));
  for (int64_t t = 0; t < T; ++t) ds.timestamps[static_cast<size_t>(t)] = t;
  ds.slots_per_day = 4;
  return ds;
}
}  // namespace

TEST_CASE("window counts and stamps") {
  SUBCASE("T=10, gamma=3, beta=2 gives 6 windows") {
    CHECK(make_windows(tiny_dataset(10), 3, 2).size() == 6);
  }
  SUBCASE("T=gamma+beta gives exactly one window") {
    CHECK(make_windows(tiny_dataset(5), 3, 2).size() == 1);
  }
  SUBCASE("first window's target starts at step gamma") {
    auto ws = make_windows(tiny_dataset(10), 3, 2);
    CHECK(ws[0].target_stamps[0] == 3);
    CHECK(ws[0].history_stamps[0] == 0);
  }
  SUBCASE("short series rejected") {
    CHECK_THROWS_AS((void)make_windows(tiny_dataset(4), 3, 2), std::invalid_argument);
  }
  SUBCASE("count formula holds over random triples") {
    Rng rng(41);
    for (int trial = 0; trial < 40; ++trial) {
      int64_t gamma = 1 + static_cast<int64_t>(rng.integer(6));
      int64_t beta = 1 + static_cast<int64_t>(rng.integer(6));
      int64_t T = gamma + beta + static_cast<int64_t>(rng.integer(30));
      CHECK(static_cast<int64_t>(make_windows(tiny_dataset(T), gamma, beta).size()) ==
            T - gamma - beta + 1);
    }
  }
}

TEST_CASE("chronological 7:1:2 split") {
  auto split_of = [&](int64_t T) {
    return split_windows(make_windows(tiny_dataset(T + 2), 1, 2));  // exactly T windows
  };
  SUBCASE("100 windows give 70/10/20") {
    auto s = split_of(100);
    CHECK(s.train.size() == 70);
    CHECK(s.val.size() == 10);
    CHECK(s.test.size() == 20);
  }
  SUBCASE("10 windows give 7/1/2") {
    auto s = split_of(10);
    CHECK(s.train.size() == 7);
    CHECK(s.val.size() == 1);
    CHECK(s.test.size() == 2);
  }
  SUBCASE("13 windows give 9/1/3") {
    auto s = split_of(13);
    CHECK(s.train.size() == 9);
    CHECK(s.val.size() == 1);
    CHECK(s.test.size() == 3);
  }
  SUBCASE("fewer than 10 windows rejected") {
    CHECK_THROWS_AS((void)split_of(9), std::invalid_argument);
  }
  SUBCASE("order is preserved across the boundary") {
    auto s = split_of(37);
    CHECK(s.train.back().history_stamps[0] < s.val.front().history_stamps[0]);
    CHECK(s.val.back().history_stamps[0] < s.test.front().history_stamps[0]);
  }
}

TEST_CASE("normalization") {
  SUBCASE("constant series maps to zeros with the floored std") {
    STGDataset ds = tiny_dataset(20);
    for (int64_t i = 0; i < ds.series.numel(); ++i) ds.series[i] = 5.0;
    auto ws = make_windows(ds, 2, 2);
    NormStats ns = fit_normalize(ws);
    Tensor z = ns.apply(ws[0].history);
    for (int64_t i = 0; i < z.numel(); ++i) CHECK(z[i] == 0.0);
  }
  SUBCASE("invert(apply(x)) = x within 1e-10") {
    Rng rng(42);
    STGDataset ds = tiny_dataset(30);
    for (int64_t i = 0; i < ds.series.numel(); ++i) ds.series[i] = rng.normal(3.0, 7.0);
    auto ws = make_windows(ds, 3, 2);
    NormStats ns = fit_normalize(ws);
    Tensor rt = ns.invert(ns.apply(ws[5].history));
    for (int64_t i = 0; i < rt.numel(); ++i)
      CHECK(std::abs(rt[i] - ws[5].history[i]) <= 1e-10);
  }
  SUBCASE("stats come from the training windows alone") {
    STGDataset ds = tiny_dataset(40);
    auto split = split_windows(make_windows(ds, 2, 2));
    NormStats from_train = fit_normalize(split.train);
    // Feeding val/test as well changes the stats; the contract is train-only.
    std::vector<Window> all = split.train;
    all.insert(all.end(), split.test.begin(), split.test.end());
    NormStats from_all = fit_normalize(all);
    CHECK(from_train.mean[0] != from_all.mean[0]);
  }
}

TEST_CASE("time encoding") {
  SUBCASE("stamp 0 lights day 0 and slot 0") {
    Tensor e = encode_time({0}, 288);
    CHECK(e.at({0, 0}) == 1.0);
    CHECK(e.at({0, 7}) == 1.0);
  }
  SUBCASE("stamp 288 lights day 1 and slot 0") {
    Tensor e = encode_time({288}, 288);
    CHECK(e.at({0, 1}) == 1.0);
    CHECK(e.at({0, 7}) == 1.0);
  }
  SUBCASE("every row sums to exactly 2") {
    Rng rng(43);
    std::vector<int64_t> stamps;
    for (int i = 0; i < 50; ++i) stamps.push_back(static_cast<int64_t>(rng.integer(100000)));
    Tensor e = encode_time(stamps, 288);
    for (int64_t r = 0; r < e.dim(0); ++r) {
      double s = 0.0;
      for (int64_t c = 0; c < e.dim(1); ++c) s += e.at({r, c});
      CHECK(s == 2.0);
    }
  }
}

TEST_CASE("csv round trip and errors") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "scfsgl_csv_test";
  fs::create_directories(dir);
  auto values = (dir / "values.csv").string();
  auto adjacency = (dir / "adj.csv").string();

  SUBCASE("write then load reproduces values exactly") {
    auto cfg = small_cfg();
    cfg.clients = 1;
    auto ds = generate_synthetic(cfg)[0].first;
    write_values_csv(values, ds);
    write_adjacency_csv(adjacency, ds);
    STGDataset back = load_csv(values, adjacency, cfg.slots_per_day);
    CHECK(back.series.vec() == ds.series.vec());
    CHECK(back.adjacency.vec() == ds.adjacency.vec());
  }
  SUBCASE("ragged rows are rejected with the position") {
    std::FILE* f = std::fopen(values.c_str(), "w");
    std::fputs("1,2\n3\n", f);
    std::fclose(f);
    f = std::fopen(adjacency.c_str(), "w");
    std::fputs("0,1\n1,0\n", f);
    std::fclose(f);
    CHECK_THROWS_WITH_AS((void)load_csv(values, adjacency, 4),
                         doctest::Contains("ragged row 2"), std::runtime_error);
  }
  SUBCASE("non-numeric cells are rejected with row and column") {
    std::FILE* f = std::fopen(values.c_str(), "w");
    std::fputs("1,2\n3,oops\n", f);
    std::fclose(f);
    f = std::fopen(adjacency.c_str(), "w");
    std::fputs("0,1\n1,0\n", f);
    std::fclose(f);
    try {
      (void)load_csv(values, adjacency, 4);
      FAIL("expected throw");
    } catch (const std::runtime_error& e) {
      std::string msg = e.what();
      CHECK(msg.find("row 2") != std::string::npos);
      CHECK(msg.find("column 2") != std::string::npos);
    }
  }
  SUBCASE("non-square adjacency is rejected") {
    std::FILE* f = std::fopen(values.c_str(), "w");
    std::fputs("1,2\n3,4\n", f);
    std::fclose(f);
    f = std::fopen(adjacency.c_str(), "w");
    std::fputs("0,1,2\n1,0,2\n2,2,0\n", f);
    std::fclose(f);
    CHECK_THROWS((void)load_csv(values, adjacency, 4));
  }
}
