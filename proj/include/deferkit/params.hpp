#pragma once

#include <cmath>
#include <cstddef>

#include "deferkit/errors.hpp"

namespace deferkit {

// Surrogate family knobs: outer transform index u, margin scale rho and
// smooth penalty weight kappa. certified_kappa gives the smallest weight
// for which the smooth loss upper-bounds the margin surrogate pointwise.
struct SurrogateParams {
  double u = 1.0;
  double rho = 1.0;
  double kappa = 0.0;

  SurrogateParams() = default;
  SurrogateParams(double u_, double rho_, double kappa_) : u(u_), rho(rho_), kappa(kappa_) {
    if (u <= 0) throw ConfigError("SurrogateParams: u must be positive");
    if (rho <= 0) throw ConfigError("SurrogateParams: rho must be positive");
    if (kappa < 0) throw ConfigError("SurrogateParams: kappa must be nonnegative");
  }

  static double certified_kappa(std::size_t action_count, double rho) {
    return std::sqrt(static_cast<double>(action_count - 1)) / rho;
  }
  static SurrogateParams certified(double u, double rho, std::size_t action_count) {
    return SurrogateParams(u, rho, certified_kappa(action_count, rho));
  }
};

// Augmented action space: K class actions plus J deferral actions in
// classification, or J+1 rejector actions (1 = trust the predictor).
struct ActionSpace {
  enum class Kind { classification, regression };
  Kind kind = Kind::classification;
  std::size_t num_classes = 0;  // K (0 for regression)
  std::size_t num_experts = 0;  // J

  static ActionSpace classification(std::size_t k, std::size_t j) {
    ActionSpace a{Kind::classification, k, j};
    if (a.size() < 2) throw ConfigError("ActionSpace: need at least two actions");
    return a;
  }
  static ActionSpace regression(std::size_t j) {
    ActionSpace a{Kind::regression, 0, j};
    if (a.size() < 2) throw ConfigError("ActionSpace: need at least two actions");
    return a;
  }

  std::size_t size() const {
    return kind == Kind::classification ? num_classes + num_experts : num_experts + 1;
  }
};

}  // namespace deferkit
