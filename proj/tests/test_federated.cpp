#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "scfsgl/checkpoint.hpp"
#include "scfsgl/federated.hpp"

using namespace scfsgl;

namespace {

SyntheticConfig toy_data_cfg(int64_t clients) {
  SyntheticConfig d;
  d.clients = clients;
  d.nodes_per_client = 10;
  d.steps = 70;
  d.slots_per_day = 8;
  d.noise_std = 0.05;
  d.seed = 5;
  return d;
}

FedConfig toy_fed_cfg() {
  FedConfig cfg;
  cfg.rounds = 3;
  cfg.lr = 0.01;
  cfg.patience = 10;
  cfg.codebook_size = 4;
  cfg.model.gamma = 3;
  cfg.model.beta = 2;
  cfg.model.hidden = 8;
  cfg.model.layers = 1;
  cfg.model.codebook_dim = 8;
  cfg.epoch_window_cap = 8;
  cfg.eval_window_cap = 4;
  cfg.skipgram.dim = 4;
  cfg.skipgram.epochs = 1;
  cfg.n2v_walks = 2;
  cfg.n2v_walk_len = 8;
  cfg.seed = 3;
  return cfg;
}

std::vector<STGDataset> toy_datasets(int64_t clients) {
  std::vector<STGDataset> out;
  for (auto& [ds, gt] : generate_synthetic(toy_data_cfg(clients))) out.push_back(std::move(ds));
  return out;
}

}  // namespace

TEST_CASE("aggregate") {
  SUBCASE("hand case") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 2}, {3, 4, 5, 6});
    Tensor m = aggregate({a, b});
    CHECK(m.vec() == std::vector<double>{2, 3, 4, 5});
  }
  SUBCASE("single client is the identity") {
    Tensor a({2}, {7, 9});
    CHECK(aggregate({a}).vec() == a.vec());
  }
  SUBCASE("matches an element-loop oracle within 1e-15") {
    Rng rng(71);
    std::vector<Tensor> deltas;
    for (int k = 0; k < 5; ++k) deltas.push_back(rng.tensor_normal({3, 4}, 0, 1));
    Tensor m = aggregate(deltas);
    for (int64_t i = 0; i < 12; ++i) {
      double s = 0;
      for (const Tensor& d : deltas) s += d[i];
      CHECK(std::abs(m[i] - s / 5.0) <= 1e-15);
    }
  }
  SUBCASE("permutation invariant in client order") {
    Rng rng(72);
    Tensor a = rng.tensor_normal({2, 3}, 0, 1), b = rng.tensor_normal({2, 3}, 0, 1),
           c = rng.tensor_normal({2, 3}, 0, 1);
    CHECK(aggregate({a, b, c}).vec() == aggregate({c, a, b}).vec());
  }
  SUBCASE("shape mismatch names the offending client") {
    Tensor a({2, 2});
    Tensor b({2, 3});
    CHECK_THROWS_WITH_AS((void)aggregate({a, a, b}), doctest::Contains("client 2"),
                         std::invalid_argument);
  }
}

TEST_CASE("comm_bytes") {
  CHECK(comm_bytes(32, 64, 4) == 8192);
  CHECK(comm_bytes(1, 1, 8) == 8);
  CHECK(comm_bytes(64, 64, 4) == 2 * comm_bytes(32, 64, 4));
}

TEST_CASE("variant parsing") {
  CHECK(parse_variant("full") == Variant::kFull);
  CHECK(parse_variant("no_book_no_cs") == Variant::kNoBookNoCs);
  CHECK_THROWS_AS((void)parse_variant("bogus"), std::invalid_argument);
  CHECK(variant_flags(Variant::kNoCs).separation == false);
  CHECK(variant_flags(Variant::kNoCs).communicate == true);
  CHECK(variant_flags(Variant::kLocalOnly).communicate == false);
  CHECK(variant_flags(Variant::kLocalOnly).codebook == true);
}

TEST_CASE("client_update basics") {
  FedConfig cfg = toy_fed_cfg();
  FedRuntime rt(cfg, toy_datasets(1));
  SUBCASE("zero learning rate returns the downloaded codebook bit-exactly") {
    FedConfig frozen = cfg;
    frozen.lr = 0.0;
    ClientRoundResult res = client_update(rt.clients()[0], rt.delta_global(), frozen);
    REQUIRE(res.ok);
    CHECK(res.delta_local.vec() == rt.delta_global().vec());
  }
  SUBCASE("one update changes the local codebook when lambda_com > 0") {
    ClientRoundResult res = client_update(rt.clients()[0], rt.delta_global(), cfg);
    REQUIRE(res.ok);
    CHECK(res.delta_local.vec() != rt.delta_global().vec());
    CHECK(res.mean_loss.l_com > 0.0);
  }
}

TEST_CASE("run_rounds") {
  SUBCASE("history length equals R without early stop") {
    FedRuntime rt(toy_fed_cfg(), toy_datasets(2));
    RunResult res = rt.run();
    CHECK(res.history.size() == 3);
    CHECK(res.rounds_run == 3);
    CHECK_FALSE(res.early_stopped);
    for (const auto& rec : res.history)
      for (uint8_t failure : rec.failed) CHECK(failure == 0);
  }
  SUBCASE("patience 1 with a frozen model stops after round 2") {
    FedConfig cfg = toy_fed_cfg();
    cfg.lr = 0.0;
    cfg.patience = 1;
    cfg.rounds = 10;
    FedRuntime rt(cfg, toy_datasets(2));
    RunResult res = rt.run();
    CHECK(res.rounds_run == 2);
    CHECK(res.early_stopped);
  }
  SUBCASE("same seed gives an identical checksum sequence") {
    FedConfig cfg = toy_fed_cfg();
    auto data = toy_datasets(2);
    RunResult a = FedRuntime(cfg, data).run();
    RunResult b = FedRuntime(cfg, data).run();
    REQUIRE(a.history.size() == b.history.size());
    for (size_t r = 0; r < a.history.size(); ++r) {
      CHECK(a.history[r].delta_checksum == b.history[r].delta_checksum);
      CHECK(a.history[r].val_mae == b.history[r].val_mae);
    }
  }
  SUBCASE("client aborts are recorded, not fatal") {
    FedConfig cfg = toy_fed_cfg();
    cfg.lr = 1e10;  // explodes after the first round's update
    cfg.rounds = 3;
    FedRuntime rt(cfg, toy_datasets(2));
    RunResult res = rt.run();
    CHECK(res.history.size() == 3);
    bool any_failed = false;
    for (const auto& rec : res.history)
      for (size_t k = 0; k < rec.failed.size(); ++k)
        if (rec.failed[k]) {
          any_failed = true;
          CHECK(rec.errors[k].find("non-finite") != std::string::npos);
        }
    CHECK(any_failed);
  }
}

TEST_CASE("ablation variants") {
  SUBCASE("no_book uploads zero bytes") {
    FedConfig cfg = toy_fed_cfg();
    cfg.variant = Variant::kNoBook;
    cfg.rounds = 2;
    FedRuntime rt(cfg, toy_datasets(2));
    RunResult res = rt.run();
    for (const auto& rec : res.history)
      for (int64_t b : rec.bytes_up) CHECK(b == 0);
  }
  SUBCASE("no_cs still communicates the codebook") {
    FedConfig cfg = toy_fed_cfg();
    cfg.variant = Variant::kNoCs;
    cfg.rounds = 2;
    FedRuntime rt(cfg, toy_datasets(2));
    RunResult res = rt.run();
    for (const auto& rec : res.history)
      for (int64_t b : rec.bytes_up) CHECK(b == comm_bytes(4, 8, 4));
  }
  SUBCASE("full_fedavg payload covers all parameters") {
    FedConfig cfg = toy_fed_cfg();
    cfg.variant = Variant::kFullFedavg;
    cfg.rounds = 1;
    FedRuntime rt(cfg, toy_datasets(2));
    const int64_t params = rt.clients()[0].params.total_elements();
    RunResult res = rt.run();
    CHECK(res.history[0].bytes_up[0] == (params + 4 * 8) * 4);
  }
  SUBCASE("identical clients make full_fedavg match local_only bit-exactly") {
    auto one = toy_datasets(1);
    std::vector<STGDataset> both{one[0], one[0]};

    auto make_symmetric = [&](Variant v) {
      FedConfig cfg = toy_fed_cfg();
      cfg.variant = v;
      cfg.rounds = 3;
      FedRuntime rt(cfg, both);
      rt.clients()[1].params = rt.clients()[0].params;
      rt.clients()[1].se = rt.clients()[0].se;
      return rt.run();
    };
    RunResult avg = make_symmetric(Variant::kFullFedavg);
    RunResult local = make_symmetric(Variant::kLocalOnly);
    REQUIRE(avg.history.size() == local.history.size());
    for (size_t r = 0; r < avg.history.size(); ++r) {
      CHECK(avg.history[r].val_mae == local.history[r].val_mae);
      CHECK(avg.history[r].val_rmse == local.history[r].val_rmse);
      for (size_t k = 0; k < 2; ++k)
        CHECK(avg.history[r].train[k].l_local == local.history[r].train[k].l_local);
    }
    for (size_t k = 0; k < 2; ++k)
      CHECK(avg.test_reports[k].by_horizon.back().mae ==
            local.test_reports[k].by_horizon.back().mae);
  }
}

TEST_CASE("privacy: server checkpoint holds only the codebook") {
  namespace fs = std::filesystem;
  FedConfig cfg = toy_fed_cfg();
  cfg.rounds = 1;
  FedRuntime rt(cfg, toy_datasets(2));
  RunResult res = rt.run();
  fs::path dir = fs::temp_directory_path() / "scfsgl_fed_test";
  fs::create_directories(dir);
  std::string server = (dir / "server_ckpt").string();
  write_server_checkpoint(server, res.delta_global);
  NamedTensors ts = read_checkpoint_file(server);
  REQUIRE(ts.size() == 1);
  CHECK(ts[0].first == "delta");
  CHECK(ts[0].second.shape() == std::vector<int64_t>{4, 8});
}

TEST_CASE("history and outputs are byte-stable") {
  namespace fs = std::filesystem;
  FedConfig cfg = toy_fed_cfg();
  cfg.rounds = 2;
  auto data = toy_datasets(2);
  fs::path dir = fs::temp_directory_path() / "scfsgl_fed_test";
  fs::create_directories(dir);

  auto run_and_dump = [&](const std::string& tag) {
    FedRuntime rt(cfg, data);
    RunResult res = rt.run();
    std::string hist = (dir / ("history_" + tag + ".csv")).string();
    std::string summ = (dir / ("summary_" + tag + ".csv")).string();
    std::string emb = (dir / ("emb_" + tag + ".csv")).string();
    write_history_csv(hist, res);
    write_summary_csv(summ, res);
    write_embeddings_csv(emb, rt.clients()[0], cfg, 3);
    return std::tuple{hist, summ, emb};
  };
  auto [h1, s1, e1] = run_and_dump("a");
  auto [h2, s2, e2] = run_and_dump("b");
  auto slurp = [](const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  CHECK(slurp(h1) == slurp(h2));
  CHECK(slurp(s1) == slurp(s2));
  CHECK(slurp(e1) == slurp(e2));
  CHECK(slurp(h1).find("codebook_checksum") != std::string::npos);

  // Embedding rows: 4 per sample, labels restricted to the four branches.
  std::string emb = slurp(e1);
  size_t rows = 0;
  for (char c : emb)
    if (c == '\n') ++rows;
  CHECK(rows == 1 + 4 * 3);
  for (const char* label : {",Sc,", ",So,", ",Tc,", ",To,"})
    CHECK(emb.find(label) != std::string::npos);
}
