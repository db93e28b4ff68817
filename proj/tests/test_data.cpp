#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "deferkit/agents.hpp"
#include "deferkit/data.hpp"
#include "deferkit/errors.hpp"
#include "deferkit/training.hpp"

using namespace deferkit;

namespace {

std::filesystem::path write_temp_csv(const std::string& name, const std::string& body) {
  auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream out(path);
  out << body;
  return path;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("gen_blobs: far-separated clusters are linearly solvable") {
  Dataset ds = gen_blobs(3, 2, 300, 100.0, 5);
  ExpertPanel panel(std::vector<ExpertSpec>{});
  panel.sample_outputs(ds, 1);
  CostModel cm = CostModel::classification_default(3, 0, {});
  ScoreModel h = ScoreModel::linear(2, 3, 7);
  TrainConfig cfg;
  cfg.epochs = 12;
  cfg.batch_size = 32;
  cfg.learning_rate = 0.05;
  cfg.eta = 0.0;
  cfg.seed = 2;
  cfg.track_def_loss = false;
  train_baseline_class(h, ds, panel, cm, 1.0, cfg);
  std::size_t hits = 0;
  for (std::size_t i : ds.test_idx)
    if (h(ds.row(i)).argmax_lowest_tie() + 1 == static_cast<std::size_t>(ds.labels[i])) ++hits;
  CHECK(static_cast<double>(hits) / ds.test_idx.size() >= 0.99);
}

TEST_CASE("gen_blobs: empty dataset is rejected") {
  CHECK_THROWS_AS(gen_blobs(2, 2, 0, 1.0, 0), ConfigError);
  CHECK_THROWS_AS(gen_blobs(1, 2, 10, 1.0, 0), ConfigError);
}

TEST_CASE("generators are deterministic by seed") {
  Dataset a = gen_blobs(3, 2, 120, 2.0, 42, Normalize::minmax);
  Dataset b = gen_blobs(3, 2, 120, 2.0, 42, Normalize::minmax);
  CHECK(a.features == b.features);
  CHECK(a.labels == b.labels);
  CHECK(a.train_idx == b.train_idx);
  CHECK(a.test_idx == b.test_idx);

  Dataset c = gen_linear_reg(3, 80, 0.2, 9);
  Dataset d = gen_linear_reg(3, 80, 0.2, 9);
  CHECK(c.features == d.features);
  CHECK(c.targets == d.targets);
}

TEST_CASE("gen_linear_reg: noiseless data recovers the ground truth by least squares") {
  Dataset ds = gen_linear_reg(2, 200, 0.0, 31);
  // normal equations on the train split
  double xtx[2][2] = {{0, 0}, {0, 0}};
  double xty[2] = {0, 0};
  for (std::size_t i : ds.train_idx) {
    for (std::size_t a = 0; a < 2; ++a) {
      xty[a] += ds.features.at2(i, a) * ds.targets.at2(i, 0);
      for (std::size_t b = 0; b < 2; ++b)
        xtx[a][b] += ds.features.at2(i, a) * ds.features.at2(i, b);
    }
  }
  double det = xtx[0][0] * xtx[1][1] - xtx[0][1] * xtx[1][0];
  double w0 = (xty[0] * xtx[1][1] - xty[1] * xtx[0][1]) / det;
  double w1 = (xty[1] * xtx[0][0] - xty[0] * xtx[1][0]) / det;
  REQUIRE(ds.truth_w.has_value());
  CHECK(std::abs(w0 - (*ds.truth_w)[0]) < 1e-6);
  CHECK(std::abs(w1 - (*ds.truth_w)[1]) < 1e-6);
}

TEST_CASE("gen_linear_reg: two distinct 1-D points interpolate exactly") {
  Dataset ds = gen_linear_reg(1, 2, 0.0, 3);
  REQUIRE(ds.truth_w.has_value());
  for (std::size_t i = 0; i < 2; ++i)
    CHECK(ds.targets.at2(i, 0) ==
          doctest::Approx((*ds.truth_w)[0] * ds.features.at2(i, 0)).epsilon(1e-12));
}

TEST_CASE("load_csv: exact parse of a hand-written file") {
  auto path = write_temp_csv("deferkit_ok.csv",
                             "a,b,target\n1,2,3\n4,5,6\n7,8,9\n");
  Dataset ds = load_csv(path, "target", Normalize::none, 0.5, 0, false);
  REQUIRE(ds.n() == 3);
  REQUIRE(ds.dim() == 2);
  CHECK(ds.features.at2(0, 0) == 1.0);
  CHECK(ds.features.at2(1, 1) == 5.0);
  CHECK(ds.targets.at2(2, 0) == 9.0);
  std::filesystem::remove(path);
}

TEST_CASE("load_csv: zscore round-trips to the raw values") {
  auto path = write_temp_csv("deferkit_z.csv",
                             "a,b,target\n1,10,0\n2,20,0\n3,30,0\n4,40,1\n5,50,1\n6,60,1\n");
  Dataset ds = load_csv(path, "target", Normalize::zscore, 0.5, 1, false);
  std::vector<std::vector<double>> raw{{1, 10}, {2, 20}, {3, 30}, {4, 40}, {5, 50}, {6, 60}};
  for (std::size_t i = 0; i < ds.n(); ++i)
    for (std::size_t c = 0; c < 2; ++c)
      CHECK(std::abs(ds.norm.invert(ds.features.at2(i, c), c) - raw[i][c]) < 1e-12);
  std::filesystem::remove(path);
}

TEST_CASE("load_csv: error paths carry line numbers") {
  SUBCASE("ragged row") {
    auto path = write_temp_csv("deferkit_ragged.csv", "a,b,t\n1,2,3\n4,5\n");
    try {
      load_csv(path, "t", Normalize::none);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find(":3") != std::string::npos);
    }
    std::filesystem::remove(path);
  }
  SUBCASE("non-numeric cell") {
    auto path = write_temp_csv("deferkit_nan.csv", "a,t\n1,2\nxyz,4\n");
    try {
      load_csv(path, "t", Normalize::none);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      std::string msg = e.what();
      CHECK(msg.find(":3") != std::string::npos);
      CHECK(msg.find("non-numeric") != std::string::npos);
    }
    std::filesystem::remove(path);
  }
  SUBCASE("missing target column") {
    auto path = write_temp_csv("deferkit_col.csv", "a,b\n1,2\n");
    CHECK_THROWS_AS(load_csv(path, "t", Normalize::none), ParseError);
    std::filesystem::remove(path);
  }
}

TEST_CASE("splits are disjoint and normalization uses train statistics only") {
  Dataset ds = gen_blobs(2, 3, 250, 2.0, 77, Normalize::zscore);
  for (std::size_t i : ds.train_idx)
    CHECK_FALSE(std::binary_search(ds.test_idx.begin(), ds.test_idx.end(), i));
  CHECK(ds.train_idx.size() + ds.test_idx.size() == ds.n());

  // recompute raw-train statistics from the inverted features; they must
  // reproduce the stored normalization record
  for (std::size_t c = 0; c < ds.dim(); ++c) {
    double mean = 0.0;
    for (std::size_t i : ds.train_idx) mean += ds.norm.invert(ds.features.at2(i, c), c);
    mean /= ds.train_idx.size();
    double var = 0.0;
    for (std::size_t i : ds.train_idx) {
      double d = ds.norm.invert(ds.features.at2(i, c), c) - mean;
      var += d * d;
    }
    var /= ds.train_idx.size();
    CHECK(mean == doctest::Approx(ds.norm.offset[c]).epsilon(1e-9));
    CHECK(1.0 / std::sqrt(var) == doctest::Approx(ds.norm.scale[c]).epsilon(1e-9));
    // and the normalized train split is standardized
    double nmean = 0.0, nvar = 0.0;
    for (std::size_t i : ds.train_idx) nmean += ds.features.at2(i, c);
    nmean /= ds.train_idx.size();
    for (std::size_t i : ds.train_idx) {
      double d = ds.features.at2(i, c) - nmean;
      nvar += d * d;
    }
    nvar /= ds.train_idx.size();
    CHECK(std::abs(nmean) < 1e-9);
    CHECK(nvar == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("minmax normalization maps the train split into [0,1]") {
  Dataset ds = gen_blobs(3, 2, 200, 3.0, 13, Normalize::minmax);
  for (std::size_t c = 0; c < ds.dim(); ++c) {
    double lo = 1e18, hi = -1e18;
    for (std::size_t i : ds.train_idx) {
      lo = std::min(lo, ds.features.at2(i, c));
      hi = std::max(hi, ds.features.at2(i, c));
    }
    CHECK(lo == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(hi == doctest::Approx(1.0).epsilon(1e-12));
  }
}

}  // TEST_SUITE
