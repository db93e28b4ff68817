#include <doctest.h>

#include <random>

#include "deferkit/errors.hpp"
#include "deferkit/oracle.hpp"

using namespace deferkit;
using deferkit::oracle::DiscreteInstance;

TEST_SUITE("oracle") {

TEST_CASE("bayes_conditional_risk: enumeration cases") {
  DiscreteInstance inst;
  inst.points.push_back(Tensor::vector({0.0}));
  inst.cond_costs.push_back({0.3, 0.7, 0.1});
  auto got = oracle::bayes_conditional_risk(inst, 0);
  CHECK(got.value == 0.1);
  CHECK(got.argmin_action == 3);

  DiscreteInstance ties;
  ties.points.push_back(Tensor::vector({0.0}));
  ties.cond_costs.push_back({0.4, 0.4, 0.4});
  auto tie = oracle::bayes_conditional_risk(ties, 0);
  CHECK(tie.value == 0.4);
  CHECK(tie.argmin_action == 1);  // lowest index wins

  DiscreteInstance single;
  single.points.push_back(Tensor::vector({0.0}));
  single.cond_costs.push_back({0.9});
  auto one = oracle::bayes_conditional_risk(single, 0);
  CHECK(one.value == 0.9);
  CHECK(one.argmin_action == 1);
}

TEST_CASE("exact_reachability basics") {
  ScoreModel threshold = ScoreModel::linear(1, 2, 0);
  threshold.set_flat_params(Tensor::vector({1.0, 0.0, 0.0, 0.0}));  // scores [x, 0]

  SUBCASE("gamma=0 is the singleton decision at x") {
    PerturbationBall ball(NormOrder::linf, 0.0);
    auto reach = oracle::exact_reachability(threshold, Tensor::vector({0.5}), ball);
    CHECK(reach == std::set<std::size_t>{1});
  }
  SUBCASE("a ball straddling the threshold reaches both outcomes") {
    PerturbationBall ball(NormOrder::linf, 0.4);
    auto reach = oracle::exact_reachability(threshold, Tensor::vector({0.1}), ball, 1001);
    CHECK(reach == std::set<std::size_t>{1, 2});
  }
  SUBCASE("constant policies are singletons for any gamma") {
    ScoreModel constant = ScoreModel::constant_scores(2, Tensor::vector({0.1, 0.9, 0.3}));
    PerturbationBall ball(NormOrder::linf, 5.0);
    auto reach = oracle::exact_reachability(constant, Tensor::vector({0.0, 0.0}), ball, 101);
    CHECK(reach == std::set<std::size_t>{2});
  }
  SUBCASE("dimension > 2 is unsupported") {
    ScoreModel m = ScoreModel::linear(3, 2, 1);
    PerturbationBall ball(NormOrder::linf, 0.1);
    CHECK_THROWS_AS(oracle::exact_reachability(m, Tensor::vector({0, 0, 0}), ball),
                    ContractError);
  }
  SUBCASE("reachable sets are nested as gamma grows") {
    std::mt19937_64 rng(15);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
      ScoreModel lin = ScoreModel::linear(1, 4, rng());
      Tensor x = Tensor::vector({unit(rng)});
      std::set<std::size_t> prev;
      for (double gamma : {0.0, 0.2, 0.5, 1.0}) {
        PerturbationBall ball(NormOrder::linf, gamma);
        auto reach = oracle::exact_reachability(lin, x, ball, 801);
        for (std::size_t j : prev) CHECK(reach.count(j) == 1);
        prev = reach;
      }
    }
  }
}

TEST_CASE("exhaustive_true_loss_check passes on small instances") {
  for (std::size_t k = 1; k <= 3; ++k) {
    for (std::size_t j = 0; j <= 2; ++j) {
      if (k + j < 2) continue;
      std::vector<double> alphas(k + j, 1.0), betas(k + j, 0.0);
      auto res = oracle::exhaustive_true_loss_check(k, j, alphas, betas);
      CHECK(res.pass);
    }
  }
  // fee-laden configuration
  auto fees = oracle::exhaustive_true_loss_check(2, 1, {1.0, 1.0, 0.6}, {0.0, 0.0, 0.3});
  CHECK(fees.pass);
}

TEST_CASE("exhaustive_true_loss_check fails under a deliberate mu corruption") {
  auto res = oracle::exhaustive_true_loss_check(2, 1, {1, 1, 1}, {0, 0, 0}, 0.01);
  CHECK_FALSE(res.pass);
  CHECK_FALSE(res.witness.empty());
}

TEST_CASE("calibration_gap_check cases") {
  SurrogateParams params(1.0, 1.0, 0.0);
  PerturbationBall ball(NormOrder::linf, 0.25);

  SUBCASE("a Bayes-optimal constant policy has zero true gap") {
    DiscreteInstance inst;
    inst.points.push_back(Tensor::vector({0.3}));
    inst.cond_costs.push_back({0.5, 0.1, 0.8});
    Tensor bias({3});
    bias[1] = 2.0;  // constant policy deciding action 2 = argmin cost
    ScoreModel policy = ScoreModel::constant_scores(1, bias);
    auto gaps = oracle::calibration_gap_check(inst, 0, policy, params, ball, 301);
    CHECK(gaps.true_gap == doctest::Approx(0.0));
    CHECK(gaps.inequality_holds);
  }
  SUBCASE("the worst constant policy on costs (0,1) has true gap 1") {
    DiscreteInstance inst;
    inst.points.push_back(Tensor::vector({0.0}));
    inst.cond_costs.push_back({0.0, 1.0});
    Tensor bias({2});
    bias[1] = 2.0;  // always picks the expensive action
    ScoreModel policy = ScoreModel::constant_scores(1, bias);
    auto gaps = oracle::calibration_gap_check(inst, 0, policy, params, ball, 301);
    CHECK(gaps.true_gap == doctest::Approx(1.0));
    CHECK(gaps.inequality_holds);
  }
  SUBCASE("random linear policies satisfy the inequality") {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> sym(0.0, 1.0);
    for (int trial = 0; trial < 40; ++trial) {
      DiscreteInstance inst;
      inst.points.push_back(Tensor::vector({sym(rng)}));
      std::size_t actions = 2 + rng() % 3;
      std::vector<double> costs(actions);
      for (double& c : costs) c = unit(rng);
      inst.cond_costs.push_back(costs);
      ScoreModel lin = ScoreModel::linear(1, actions, rng());
      auto gaps = oracle::calibration_gap_check(inst, 0, lin, params, ball, 401);
      CHECK(gaps.inequality_holds);
    }
  }
}

TEST_CASE("verification suite passes end to end") {
  auto report = oracle::run_verification_suite(0);
  for (const auto& check : report.checks) {
    INFO(check.name, ": ", check.witness);
    CHECK(check.pass);
  }
  CHECK(report.all_pass());
  std::string json_text = report.to_json_string();
  CHECK(json_text.find("\"all_pass\": true") != std::string::npos);
}

}  // TEST_SUITE
