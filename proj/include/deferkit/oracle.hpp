#pragma once

#include <cstddef>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "deferkit/attacks.hpp"
#include "deferkit/model.hpp"
#include "deferkit/params.hpp"
#include "deferkit/tensor.hpp"

namespace deferkit::oracle {

// Finite instance: a handful of inputs with exact per-action conditional
// costs attached. All checks in this module recompute every formula from
// scratch; nothing is shared with the loss implementations on purpose.
struct DiscreteInstance {
  std::vector<Tensor> points;
  std::vector<std::vector<double>> cond_costs;  // per point, per action
};

struct BayesRisk {
  double value = 0.0;
  std::size_t argmin_action = 0;  // 1-based, lowest-index tie-break
};

BayesRisk bayes_conditional_risk(const DiscreteInstance& inst, std::size_t point_index);

// Exhaustive grid enumeration of decisions over the ball; dimension <= 2.
std::set<std::size_t> exact_reachability(const ScoreModel& policy, const Tensor& x,
                                         const PerturbationBall& ball,
                                         std::size_t grid_resolution = 1001);

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string witness;  // first counterexample or a short summary
};

// Enumerates every (decision, y, m) tuple for K <= 3, J <= 2 and compares
// the shifted-cost sum against the direct per-branch deferral loss.
// mu_perturbation deliberately corrupts the shifted costs; nonzero values
// serve as a mutation control that must make the check fail.
CheckResult exhaustive_true_loss_check(std::size_t num_classes, std::size_t num_experts,
                                       const std::vector<double>& alphas,
                                       const std::vector<double>& betas,
                                       double mu_perturbation = 0.0);

struct CalibrationGaps {
  double true_gap = 0.0;
  double surrogate_gap = 0.0;   // policy surrogate risk minus the scaled 0-1 Bayes risk
  double family_gap = 0.0;      // informational: against a constant-score family infimum
  bool inequality_holds = false;
};

// Computes both calibration gaps on a grid and checks
//   true_gap <= surrogate_gap / Psi^u(1) + tol.
// The surrogate infimum is bounded from below by Psi^u(1) times the exact
// zero-one Bayes conditional risk (the margin surrogate dominates
// Psi^u(1) * 1{not argmax} pointwise), which makes the inequality a necessary
// condition the implemented losses must satisfy. The constant-score family
// scan is reported alongside for reference.
CalibrationGaps calibration_gap_check(const DiscreteInstance& inst, std::size_t point_index,
                                      const ScoreModel& policy, const SurrogateParams& params,
                                      const PerturbationBall& ball,
                                      std::size_t grid_resolution = 1001, double tol = 1e-6);

// Named-check report for the verify command.
struct VerificationReport {
  std::vector<CheckResult> checks;
  bool all_pass() const;
  std::string to_json_string() const;
};

VerificationReport run_verification_suite(std::uint64_t seed);

}  // namespace deferkit::oracle
