#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include "deferkit/agents.hpp"
#include "deferkit/model.hpp"
#include "deferkit/params.hpp"
#include "deferkit/tensor.hpp"

namespace deferkit {

enum class NormOrder { l2, linf };

// B_p(x, gamma) with an optional global box clip per feature.
struct PerturbationBall {
  NormOrder p = NormOrder::linf;
  double gamma = 0.0;
  std::optional<double> box_lo;
  std::optional<double> box_hi;

  PerturbationBall() = default;
  PerturbationBall(NormOrder p_, double gamma_) : p(p_), gamma(gamma_) {
    if (gamma < 0) throw ConfigError("PerturbationBall: gamma must be nonnegative");
  }

  bool contains(const Tensor& point, const Tensor& center, double slack = 1e-9) const;
};

// Inner-maximization configuration. T=0 returns the projected init point.
struct AttackPlan {
  enum class Init { center, random_uniform };
  int steps = 10;
  double step_size = 0.0;
  Init init = Init::center;
  int restarts = 1;
  std::uint64_t seed = 0;

  // T=10, step 2.5*gamma/T, center init plus one random restart
  static AttackPlan standard(double gamma, std::uint64_t seed = 0);
  static AttackPlan restart_free(double gamma, int steps, std::uint64_t seed = 0);
};

// Nearest point of the ball: coordinatewise clamp for inf, radial scaling
// for 2, then box clip.
Tensor project(const Tensor& candidate, const Tensor& center, const PerturbationBall& ball);

Tensor random_point_in_ball(const Tensor& center, const PerturbationBall& ball,
                            std::mt19937_64& rng);

// One ascent step: project(cur + step * dir(grad)) with sign direction for
// inf and normalized gradient for 2.
Tensor pgd_step(const Tensor& cur, const Tensor& grad, const Tensor& center,
                const PerturbationBall& ball, double step_size);

struct ObjectiveEval {
  double value = 0.0;
  Tensor grad;
};
using Objective = std::function<ObjectiveEval(const Tensor&)>;
using ValueFn = std::function<double(const Tensor&)>;
using ProbeSink = std::function<void(const Tensor&)>;

struct PgdResult {
  Tensor point;
  double value = 0.0;
};

// Maximizes `obj` over the ball; returns the best evaluated iterate across
// restarts. Deterministic given plan.seed. Every evaluated point is passed
// to `sink` when provided. Aborts with NumericError on non-finite gradients.
PgdResult pgd_ascend(const Objective& obj, const ValueFn& value_only, const Tensor& center,
                     const PerturbationBall& ball, const AttackPlan& plan,
                     const ProbeSink& sink = {});

// ell_inf ball corners for dimension <= 2 (used as extra value probes).
std::vector<Tensor> ball_vertices(const Tensor& center, const PerturbationBall& ball);

struct OutcomeProxySet {
  std::map<std::size_t, Tensor> proxies;          // outcome (1-based) -> x'_j
  std::map<std::size_t, double> objective_values;
  std::vector<Tensor> all_probes;                 // every point evaluated on the way
};

enum class ProxyDirection {
  toward,  // minimize Phi_cls^u(pi(x'), j): drive the decision to j
  worst,   // maximize Phi_cls^{rho,u}(pi(x'), j): the surrogate sup terms
};

OutcomeProxySet outcome_proxies(const ScoreModel& policy, const Tensor& x,
                                const PerturbationBall& ball, const AttackPlan& plan,
                                const SurrogateParams& params, ProxyDirection direction);

struct TargetedResult {
  Tensor point;
  bool success = false;
  double objective = 0.0;
};

// PGD descent on Phi_cls^u(pi(x'), nu); success iff argmax pi(x') == nu.
TargetedResult targeted_attack(const ScoreModel& policy, const Tensor& x, std::size_t nu,
                               const PerturbationBall& ball, const AttackPlan& plan, double u);

// PGD ascent on the clean surrogate deferral loss as a function of x'.
Tensor untargeted_attack_class(const ScoreModel& h, const Tensor& x, int y,
                               const std::vector<int>& expert_labels, const CostModel& cm,
                               double u, const PerturbationBall& ball, const AttackPlan& plan);

Tensor untargeted_attack_reg(const ScoreModel& r, const ScoreModel& f, const Tensor& x,
                             const Tensor& t, const std::vector<Tensor>& expert_outputs,
                             const CostModel& cm, double u, const PerturbationBall& ball,
                             const AttackPlan& plan);

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace deferkit
