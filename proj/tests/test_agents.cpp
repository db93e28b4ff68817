#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "deferkit/agents.hpp"
#include "deferkit/attacks.hpp"
#include "deferkit/data.hpp"
#include "deferkit/errors.hpp"
#include "deferkit/surrogates.hpp"

using namespace deferkit;

namespace {

Dataset tiny_class_dataset(std::size_t n, std::size_t k, std::uint64_t seed) {
  return gen_blobs(k, 2, n, 3.0, seed);
}

Dataset tiny_reg_dataset(std::size_t n, std::uint64_t seed) {
  return gen_linear_reg(2, n, 0.0, seed);
}

}  // namespace

TEST_SUITE("agents") {

TEST_CASE("oracle expert with p=1 reproduces the labels") {
  Dataset ds = tiny_class_dataset(200, 3, 1);
  ExpertSpec spec;
  spec.kind = ExpertSpec::Kind::class_specialist;
  spec.p = 1.0;  // all classes assigned
  ExpertPanel panel({spec});
  panel.sample_outputs(ds, 99);
  for (std::size_t i = 0; i < ds.n(); ++i) CHECK(panel.label_of(i, 0) == ds.labels[i]);
}

TEST_CASE("p=0 expert is at chance level over a large sample") {
  Dataset ds = tiny_class_dataset(10000, 10, 2);
  ExpertSpec spec;
  spec.kind = ExpertSpec::Kind::class_bernoulli;
  spec.p = 0.0;
  ExpertPanel panel({spec});
  panel.sample_outputs(ds, 7);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.n(); ++i)
    if (panel.label_of(i, 0) == ds.labels[i]) ++hits;
  double acc = static_cast<double>(hits) / static_cast<double>(ds.n());
  CHECK(std::abs(acc - 0.1) < 0.02);
}

TEST_CASE("noiseless regression expert reproduces the targets") {
  Dataset ds = tiny_reg_dataset(100, 3);
  ExpertSpec spec;
  spec.kind = ExpertSpec::Kind::reg_noisy;
  spec.sigma = 0.0;
  ExpertPanel panel({spec});
  panel.sample_outputs(ds, 5);
  for (std::size_t i = 0; i < ds.n(); ++i)
    CHECK(panel.output_of(i, 0)[0] == ds.targets.at2(i, 0));
}

TEST_CASE("expert cache determinism: identical seeds give identical matrices") {
  Dataset ds = tiny_class_dataset(300, 4, 4);
  ExpertSpec a;
  a.kind = ExpertSpec::Kind::class_specialist;
  a.classes = {1, 2};
  a.p = 0.8;
  ExpertSpec b;
  b.kind = ExpertSpec::Kind::class_bernoulli;
  b.p = 0.6;
  ExpertPanel p1({a, b}), p2({a, b});
  p1.sample_outputs(ds, 2024);
  p2.sample_outputs(ds, 2024);
  for (std::size_t i = 0; i < ds.n(); ++i)
    for (std::size_t e = 0; e < 2; ++e) CHECK(p1.label_of(i, e) == p2.label_of(i, e));
}

TEST_CASE("expert kind incompatible with the task is rejected") {
  Dataset ds = tiny_class_dataset(10, 2, 5);
  ExpertSpec spec;
  spec.kind = ExpertSpec::Kind::reg_noisy;
  ExpertPanel panel({spec});
  CHECK_THROWS_AS(panel.sample_outputs(ds, 1), ConfigError);
}

TEST_CASE("cost_class: prediction actions") {
  CostModel cm = CostModel::classification_default(3, 1, {0.0});
  std::vector<int> m{2};
  CHECK(cm.cost_class(2, m, 2, 3) == 0.0);  // correct prediction, free
  CHECK(cm.cost_class(1, m, 2, 3) == 1.0);  // recovers the 0-1 indicator
}

TEST_CASE("cost_class: deferral with a consultation fee") {
  CostModel cm = CostModel::classification_default(3, 1, {0.05}, ClampPolicy::none);
  std::vector<int> m{2};
  CHECK(cm.cost_class(4, m, 2, 3) == doctest::Approx(0.05));   // expert right: fee only
  CHECK(cm.cost_class(4, m, 1, 3) == doctest::Approx(1.05));   // expert wrong: alpha + fee
  CHECK_THROWS_AS(cm.cost_class(5, m, 1, 3), ContractError);   // out of range
}

TEST_CASE("strict clamp rejects alpha+beta > 1 at configuration time") {
  CHECK_THROWS_AS(CostModel::classification_default(3, 1, {0.05}, ClampPolicy::strict),
                  ConfigError);
  // satisfiable under strict: alpha scaled down
  CostModel ok({1, 1, 1, 0.95}, {0, 0, 0, 0.05}, BaseLoss::squared, ClampPolicy::strict, 3);
  std::vector<int> m{1};
  CHECK(ok.cost_class(4, m, 2, 3) <= 1.0);
}

TEST_CASE("classification costs stay in [0,1] under the strict policy") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    double beta = 0.5 * unit(rng);
    double alpha = (1.0 - beta) * unit(rng);
    CostModel cm({1, 1, alpha}, {0, 0, beta}, BaseLoss::squared, ClampPolicy::strict, 2);
    for (int y = 1; y <= 2; ++y)
      for (int mj = 1; mj <= 2; ++mj) {
        std::vector<int> m{mj};
        double c = cm.cost_class(3, m, y, 2);
        CHECK(c >= 0.0);
        CHECK(c <= 1.0);
      }
  }
}

TEST_CASE("cost_reg: predictor and expert branches") {
  CostModel cm = CostModel::regression_default(1, {0.04});
  Tensor t = Tensor::scalar(1.5);
  SUBCASE("exact prediction with no fee costs nothing") {
    CHECK(cm.cost_reg(1, Tensor::scalar(1.5), {Tensor::scalar(0.0)}, t) == 0.0);
  }
  SUBCASE("squared loss plus fee") {
    // m_1 = t + 2 -> squared error 4, fee 0.04
    CHECK(cm.cost_reg(2, Tensor::scalar(0.0), {Tensor::scalar(3.5)}, t) ==
          doctest::Approx(4.04));
  }
  SUBCASE("alpha=0 degenerates to the fee") {
    CostModel flat({0.0, 0.0}, {0.0, 0.25}, BaseLoss::squared, ClampPolicy::none, 1);
    CHECK(flat.cost_reg(2, Tensor::scalar(0.0), {Tensor::scalar(100.0)}, t) ==
          doctest::Approx(0.25));
  }
}

TEST_CASE("cost_reg_pred_adv: gamma=0 equals the clean cost exactly") {
  CostModel cm = CostModel::regression_default(1, {0.04});
  ScoreModel f = ScoreModel::linear(1, 1, 3);
  Tensor x = Tensor::vector({0.7});
  Tensor t = Tensor::scalar(0.2);
  PerturbationBall ball(NormOrder::linf, 0.0);
  AttackPlan plan = AttackPlan::standard(0.0, 1);
  double adv = cost_reg_pred_adv(cm, f, x, t, ball, plan);
  double clean = cm.cost_reg(1, f(x), {Tensor::scalar(0.0)}, t);
  CHECK(adv == clean);
}

TEST_CASE("cost_reg_pred_adv: 1-D linear predictor matches endpoint enumeration") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    ScoreModel f = ScoreModel::linear(1, 1, rng());
    double w = f.flat_params()[0], b = f.flat_params()[1];
    double x0 = unit(rng), t0 = unit(rng), gamma = 0.5;
    CostModel cm = CostModel::regression_default(1, {0.0});
    PerturbationBall ball(NormOrder::linf, gamma);
    AttackPlan plan = AttackPlan::standard(gamma, 5);
    double adv = cost_reg_pred_adv(cm, f, Tensor::vector({x0}), Tensor::scalar(t0), ball, plan);
    double lo = w * (x0 - gamma) + b - t0;
    double hi = w * (x0 + gamma) + b - t0;
    double expect = std::max(lo * lo, hi * hi);
    CHECK(adv == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("cost_reg_pred_adv is weakly increasing in gamma") {
  std::mt19937_64 rng(33);
  std::normal_distribution<double> unit(0.0, 1.0);
  CostModel cm = CostModel::regression_default(1, {0.0});
  for (int trial = 0; trial < 50; ++trial) {
    ScoreModel f = ScoreModel::linear(2, 1, rng());
    Tensor x = Tensor::vector({unit(rng), unit(rng)});
    Tensor t = Tensor::scalar(unit(rng));
    double prev = -1.0;
    for (double gamma : {0.0, 0.1, 0.25, 0.5, 1.0}) {
      PerturbationBall ball(NormOrder::linf, gamma);
      AttackPlan plan = AttackPlan::standard(gamma, 4);
      double v = cost_reg_pred_adv(cm, f, x, t, ball, plan);
      CHECK(v >= prev - 1e-12);
      prev = v;
    }
  }
}

TEST_CASE("tau_weights") {
  CHECK(tau_weights({1, 2, 3}) == std::vector<double>{5, 4, 3});
  CHECK(tau_weights({0, 0, 0}) == std::vector<double>{0, 0, 0});
  CHECK(tau_weights({0.7, 0, 0}) == std::vector<double>{0, 0.7, 0.7});
}

TEST_CASE("shifted-cost sum reduces to the per-branch deferral loss exhaustively") {
  // K <= 3, J <= 2, default alpha=1 beta=0 for predictions
  for (std::size_t k = 2; k <= 3; ++k) {
    for (std::size_t j = 1; j <= 2; ++j) {
      std::vector<double> fees(j, 0.0);
      CostModel cm = CostModel::classification_default(k, j, fees);
      std::vector<int> m(j, 1);
      auto advance = [&]() {
        for (std::size_t e = 0; e < j; ++e) {
          if (m[e] < static_cast<int>(k)) {
            ++m[e];
            return true;
          }
          m[e] = 1;
        }
        return false;
      };
      do {
        for (int y = 1; y <= static_cast<int>(k); ++y) {
          for (std::size_t dec = 1; dec <= k + j; ++dec) {
            double direct;
            if (dec <= k)
              direct = static_cast<int>(dec) != y ? 1.0 : 0.0;
            else
              direct = cm.cost_class(dec, m, y, k);
            std::vector<double> mu = shifted_costs_class(cm, m, y, k);
            double sum = 0.0;
            for (std::size_t a = 1; a <= k + j; ++a)
              sum += mu[a - 1] * (a == dec ? 1.0 : 0.0);
            CHECK(sum == direct);
          }
        }
      } while (advance());
    }
  }
}

TEST_CASE("cache export CSV shape") {
  Dataset ds = tiny_class_dataset(5, 2, 6);
  ExpertSpec spec;
  spec.kind = ExpertSpec::Kind::class_bernoulli;
  spec.p = 1.0;
  ExpertPanel panel({spec});
  panel.sample_outputs(ds, 1);
  auto path = std::filesystem::temp_directory_path() / "deferkit_cache_test.csv";
  panel.export_cache_csv(path, "# config_hash=deadbeef");
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "# config_hash=deadbeef");
  std::getline(in, line);
  CHECK(line == "example_id,expert_id,output");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 5);
  std::filesystem::remove(path);
}

}  // TEST_SUITE
