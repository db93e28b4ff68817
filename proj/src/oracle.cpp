#include "deferkit/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <json.hpp>

#include "deferkit/errors.hpp"

namespace deferkit::oracle {

namespace {

// Independent copies of the transform formulas (see module note above).
double psi_u_here(double v, double u) {
  if (u == 1.0) return std::log(1.0 + v);
  return (std::pow(1.0 + v, 1.0 - u) - 1.0) / (1.0 - u);
}

double psi_rho_here(double v, double rho) {
  return std::min(std::max(0.0, 1.0 - v / rho), 1.0);
}

double phi_rho_u_here(const Tensor& s, std::size_t target1, double rho, double u) {
  double acc = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k)
    if (k != target1 - 1) acc += psi_rho_here(s[target1 - 1] - s[k], rho);
  return psi_u_here(acc, u);
}

std::size_t decide(const ScoreModel& policy, const Tensor& x) {
  return policy(x).argmax_lowest_tie() + 1;
}

std::vector<Tensor> grid_points(const Tensor& x, const PerturbationBall& ball,
                                std::size_t res) {
  std::vector<Tensor> pts;
  if (x.size() == 1) {
    pts.reserve(res);
    for (std::size_t i = 0; i < res; ++i) {
      double f = res == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / (res - 1);
      Tensor p = x;
      p[0] += ball.gamma * f;
      pts.push_back(project(p, x, ball));
    }
  } else {
    std::size_t side = std::max<std::size_t>(
        2, static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(res)))));
    for (std::size_t i = 0; i < side; ++i)
      for (std::size_t k = 0; k < side; ++k) {
        double fi = -1.0 + 2.0 * static_cast<double>(i) / (side - 1);
        double fk = -1.0 + 2.0 * static_cast<double>(k) / (side - 1);
        Tensor p = x;
        p[0] += ball.gamma * fi;
        p[1] += ball.gamma * fk;
        if (ball.p == NormOrder::l2 && fi * fi + fk * fk > 1.0) continue;
        pts.push_back(project(p, x, ball));
      }
  }
  return pts;
}

}  // namespace

BayesRisk bayes_conditional_risk(const DiscreteInstance& inst, std::size_t point_index) {
  const std::vector<double>& costs = inst.cond_costs.at(point_index);
  if (costs.empty()) throw ContractError("bayes_conditional_risk: no actions");
  BayesRisk out;
  out.value = costs[0];
  out.argmin_action = 1;
  for (std::size_t j = 1; j < costs.size(); ++j) {
    if (costs[j] < out.value) {
      out.value = costs[j];
      out.argmin_action = j + 1;
    }
  }
  return out;
}

std::set<std::size_t> exact_reachability(const ScoreModel& policy, const Tensor& x,
                                         const PerturbationBall& ball,
                                         std::size_t grid_resolution) {
  if (x.size() > 2)
    throw ContractError("exact_reachability: dense grids support dimension <= 2 only");
  std::set<std::size_t> reachable;
  if (ball.gamma == 0.0) {
    reachable.insert(decide(policy, x));
    return reachable;
  }
  for (const Tensor& p : grid_points(x, ball, grid_resolution))
    reachable.insert(decide(policy, p));
  return reachable;
}

CheckResult exhaustive_true_loss_check(std::size_t num_classes, std::size_t num_experts,
                                       const std::vector<double>& alphas,
                                       const std::vector<double>& betas,
                                       double mu_perturbation) {
  CheckResult res;
  res.name = "shifted-cost-equivalence-K" + std::to_string(num_classes) + "-J" +
             std::to_string(num_experts);
  std::size_t actions = num_classes + num_experts;
  if (alphas.size() != actions || betas.size() != actions)
    throw ContractError("exhaustive_true_loss_check: one (alpha,beta) per action");

  // iterate expert output tuples m in Y^J
  std::vector<int> m(num_experts, 1);
  auto advance = [&]() {
    for (std::size_t e = 0; e < num_experts; ++e) {
      if (m[e] < static_cast<int>(num_classes)) {
        ++m[e];
        return true;
      }
      m[e] = 1;
    }
    return false;
  };

  do {
    for (int y = 1; y <= static_cast<int>(num_classes); ++y) {
      for (std::size_t dec = 1; dec <= actions; ++dec) {
        // direct per-branch loss
        double direct;
        if (dec <= num_classes) {
          direct = alphas[dec - 1] * (static_cast<int>(dec) != y ? 1.0 : 0.0) + betas[dec - 1];
        } else {
          int mj = m[dec - num_classes - 1];
          direct = alphas[dec - 1] * (mj != y ? 1.0 : 0.0) + betas[dec - 1];
        }
        // shifted-cost sum over indicators
        double shifted = 0.0;
        for (std::size_t j = 1; j <= actions; ++j) {
          if (j != dec) continue;
          double mu;
          if (j <= num_classes)
            mu = alphas[j - 1] * (static_cast<int>(j) != y ? 1.0 : 0.0) + betas[j - 1];
          else
            mu = alphas[j - 1] * (m[j - num_classes - 1] != y ? 1.0 : 0.0) + betas[j - 1];
          shifted += mu + mu_perturbation;
        }
        if (shifted != direct) {
          res.pass = false;
          std::ostringstream w;
          w << "decision=" << dec << " y=" << y << " m=(";
          for (std::size_t e = 0; e < num_experts; ++e) w << (e ? "," : "") << m[e];
          w << ") direct=" << direct << " shifted=" << shifted;
          res.witness = w.str();
          return res;
        }
      }
    }
  } while (num_experts > 0 && advance());

  res.pass = true;
  res.witness = "all tuples agree";
  return res;
}

CalibrationGaps calibration_gap_check(const DiscreteInstance& inst, std::size_t point_index,
                                      const ScoreModel& policy, const SurrogateParams& params,
                                      const PerturbationBall& ball,
                                      std::size_t grid_resolution, double tol) {
  const Tensor& x = inst.points.at(point_index);
  const std::vector<double>& mu = inst.cond_costs.at(point_index);
  std::size_t actions = mu.size();
  double mu_min = *std::min_element(mu.begin(), mu.end());
  double mu_total = 0.0;
  for (double v : mu) mu_total += v;

  // true conditional risk via exact reachability
  std::set<std::size_t> reachable = exact_reachability(policy, x, ball, grid_resolution);
  double true_risk = 0.0;
  for (std::size_t j : reachable) true_risk += mu.at(j - 1);

  CalibrationGaps gaps;
  gaps.true_gap = true_risk - mu_min;

  // surrogate conditional risk of the policy: grid sup per outcome
  std::vector<Tensor> grid = grid_points(x, ball, grid_resolution);
  if (grid.empty()) grid.push_back(x);
  auto surrogate_risk_of_scores = [&](const Tensor& s) {
    double risk = 0.0;
    for (std::size_t j = 1; j <= actions; ++j)
      risk += (mu_total - mu[j - 1]) * phi_rho_u_here(s, j, params.rho, params.u);
    return risk;
  };
  double policy_risk = 0.0;
  double weight_total = 0.0, weight_max = 0.0;
  for (std::size_t j = 1; j <= actions; ++j) {
    double sup = 0.0;
    for (const Tensor& p : grid)
      sup = std::max(sup, phi_rho_u_here(policy(p), j, params.rho, params.u));
    policy_risk += (mu_total - mu[j - 1]) * sup;
    weight_total += mu_total - mu[j - 1];
    weight_max = std::max(weight_max, mu_total - mu[j - 1]);
  }

  // exact zero-one Bayes conditional risk with the same per-outcome weights;
  // Psi^u(1) times it lower-bounds the surrogate infimum
  double zero_one_bayes = weight_total - weight_max;
  double psi1 = psi_u_scalar(1.0, params.u);
  gaps.surrogate_gap = policy_risk - psi1 * zero_one_bayes;

  // informational: one-hot constant family, theta swept over [0, 2 rho]
  double family_inf = policy_risk;
  for (std::size_t lead = 0; lead < actions; ++lead) {
    for (int step = 0; step <= 20; ++step) {
      double theta = 2.0 * params.rho * static_cast<double>(step) / 20.0;
      Tensor s({actions});
      s[lead] = theta;
      family_inf = std::min(family_inf, surrogate_risk_of_scores(s));
    }
  }
  gaps.family_gap = policy_risk - family_inf;

  gaps.inequality_holds = gaps.true_gap <= gaps.surrogate_gap / psi1 + tol;
  return gaps;
}

bool VerificationReport::all_pass() const {
  for (const CheckResult& c : checks)
    if (!c.pass) return false;
  return true;
}

std::string VerificationReport::to_json_string() const {
  nlohmann::json doc;
  doc["checks"] = nlohmann::json::array();
  for (const CheckResult& c : checks)
    doc["checks"].push_back({{"name", c.name}, {"pass", c.pass}, {"witness", c.witness}});
  doc["all_pass"] = all_pass();
  return doc.dump(2);
}

VerificationReport run_verification_suite(std::uint64_t seed) {
  VerificationReport report;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);

  // shifted-cost equivalence across small instance sizes
  for (std::size_t k = 1; k <= 3; ++k) {
    for (std::size_t j = 0; j <= 2; ++j) {
      if (k + j < 2) continue;
      std::vector<double> alphas(k + j, 1.0), betas(k + j, 0.0);
      report.checks.push_back(exhaustive_true_loss_check(k, j, alphas, betas));
      for (std::size_t a = 0; a < k + j; ++a) {
        alphas[a] = 0.25 + 0.75 * unit(rng);
        betas[a] = a < k ? 0.0 : 0.5 * unit(rng);
      }
      CheckResult fee = exhaustive_true_loss_check(k, j, alphas, betas);
      fee.name += "-fees";
      report.checks.push_back(fee);
    }
  }

  // Bayes conditional risk identity on random instances
  {
    CheckResult c;
    c.name = "bayes-conditional-risk-min-identity";
    c.pass = true;
    for (int trial = 0; trial < 100 && c.pass; ++trial) {
      std::size_t actions = 2 + static_cast<std::size_t>(rng() % 5);
      DiscreteInstance inst;
      inst.points.push_back(Tensor::vector({sym(rng)}));
      std::vector<double> costs(actions);
      for (double& v : costs) v = unit(rng);
      inst.cond_costs.push_back(costs);
      BayesRisk got = bayes_conditional_risk(inst, 0);
      double want = *std::min_element(costs.begin(), costs.end());
      if (got.value != want || costs[got.argmin_action - 1] != want) {
        c.pass = false;
        c.witness = "trial " + std::to_string(trial);
      }
    }
    if (c.pass) c.witness = "100 random instances";
    report.checks.push_back(c);
  }

  // reachability of a locally-constant policy is a singleton
  {
    CheckResult c;
    c.name = "constant-policy-singleton-reachability";
    c.pass = true;
    for (int trial = 0; trial < 20 && c.pass; ++trial) {
      std::size_t actions = 2 + static_cast<std::size_t>(rng() % 4);
      Tensor bias({actions});
      for (double& v : bias.data()) v = sym(rng);
      std::size_t want = bias.argmax_lowest_tie() + 1;
      ScoreModel constant = ScoreModel::constant_scores(1, bias);
      PerturbationBall ball(NormOrder::linf, 0.5);
      auto reach = exact_reachability(constant, Tensor::vector({sym(rng)}), ball, 301);
      if (reach.size() != 1 || *reach.begin() != want) {
        c.pass = false;
        c.witness = "trial " + std::to_string(trial);
      }
    }
    if (c.pass) c.witness = "20 random constant policies";
    report.checks.push_back(c);
  }

  // calibration-gap inequality on random 1-D instances and linear policies
  {
    CheckResult c;
    c.name = "calibration-gap-inequality";
    c.pass = true;
    SurrogateParams params(1.0, 1.0, 0.0);
    PerturbationBall ball(NormOrder::linf, 0.25);
    for (int trial = 0; trial < 100 && c.pass; ++trial) {
      std::size_t actions = 2 + static_cast<std::size_t>(rng() % 3);
      DiscreteInstance inst;
      inst.points.push_back(Tensor::vector({sym(rng)}));
      std::vector<double> costs(actions);
      for (double& v : costs) v = unit(rng);
      inst.cond_costs.push_back(costs);
      ScoreModel lin = ScoreModel::linear(1, actions, rng());
      CalibrationGaps gaps = calibration_gap_check(inst, 0, lin, params, ball, 501);
      if (!gaps.inequality_holds) {
        c.pass = false;
        c.witness = "trial " + std::to_string(trial) + " true_gap=" +
                    std::to_string(gaps.true_gap) + " surrogate_gap=" +
                    std::to_string(gaps.surrogate_gap);
      }
    }
    if (c.pass) c.witness = "100 random draws";
    report.checks.push_back(c);
  }

  return report;
}

}  // namespace deferkit::oracle
