#pragma once

#include <vector>

#include "deferkit/agents.hpp"
#include "deferkit/attacks.hpp"
#include "deferkit/autodiff.hpp"
#include "deferkit/model.hpp"
#include "deferkit/params.hpp"
#include "deferkit/tensor.hpp"

namespace deferkit {

// ---- transform families -------------------------------------------------

// log(1+v) for u=1, ((1+v)^{1-u} - 1)/(1-u) otherwise; domain v >= 0
double psi_u(double v, double u);
// piecewise-linear rho-margin clamp min{max(0, 1 - v/rho), 1}
double psi_rho(double v, double rho);

// ---- multiclass surrogates over a score vector (actions are 1-based) ----

// Psi^u( sum_{k != target} exp(s_k - s_target) ), max-shift stabilized
double phi_cls_u(const Tensor& scores, std::size_t target, double u);
// Psi^u( sum_{k != target} Psi_rho(s_target - s_k) )
double phi_cls_rho_u(const Tensor& scores, std::size_t target, const SurrogateParams& params);

// graph builders (target is a 0-based index into the score vector)
ad::Var phi_cls_u_var(const ad::Var& scores, std::size_t target0, double u);

// ---- shifted costs ------------------------------------------------------

// mu_j for every action j in 1..K+J
std::vector<double> shifted_costs_class(const CostModel& cm, const std::vector<int>& expert_labels,
                                        int y, std::size_t num_classes);

// ---- clean deferral losses ----------------------------------------------

// realized cost of the taken action (the shifted cost of `decision`)
double true_def_loss_class(std::size_t decision, int y, const std::vector<int>& expert_labels,
                           const CostModel& cm, std::size_t num_classes);

// Phi^u(s, y) + sum_j (1 - c_j) Phi^u(s, K+j)
double surrogate_def_class(const Tensor& scores, int y, const std::vector<int>& expert_labels,
                           const CostModel& cm, double u);
ad::Var surrogate_def_class_var(const ad::Var& scores, int y,
                                const std::vector<int>& expert_labels, const CostModel& cm,
                                double u, std::size_t num_classes);

double true_def_loss_reg(std::size_t decision, const Tensor& f_out, const Tensor& t,
                         const std::vector<Tensor>& expert_outputs, const CostModel& cm);

// sum_j tau_j Phi^u(r_scores, j) - (J-1) c_1
double surrogate_def_reg(const Tensor& f_out, const Tensor& r_scores, const Tensor& t,
                         const std::vector<Tensor>& expert_outputs, const CostModel& cm,
                         double u);
ad::Var surrogate_def_reg_var(const ad::Var& f_scores, const ad::Var& r_scores, const Tensor& t,
                              const std::vector<Tensor>& expert_outputs, const CostModel& cm,
                              double u);

// ---- adversarial losses (probe-estimated suprema) ------------------------

// Probe-estimated sup over the ball of ||margins(h(x'), j) - margins(h(x), j)||_2.
// Probes: PGD ascent per the plan, the ball center, and (ell_inf, d <= 2) vertices.
double margin_deviation_sup(const ScoreModel& h, const Tensor& x, std::size_t target,
                            const PerturbationBall& ball, const AttackPlan& plan,
                            std::vector<Tensor>* probes_out = nullptr);

// sum over probe-reachable outcomes of mu_j; a lower bound on the exact value
double adv_true_def_loss_class(const ScoreModel& h, const Tensor& x, int y,
                               const std::vector<int>& expert_labels, const CostModel& cm,
                               const PerturbationBall& ball, const AttackPlan& plan);

// sum_j (sum_{i != j} mu_i) sup Phi^{rho,u}(h(x'_j), j)
double adv_surrogate_def_class(const ScoreModel& h, const Tensor& x, int y,
                               const std::vector<int>& expert_labels, const CostModel& cm,
                               const SurrogateParams& params, const PerturbationBall& ball,
                               const AttackPlan& plan);
// same objective evaluated over caller-supplied probe points per outcome
double adv_surrogate_def_class_at(const ScoreModel& h, const Tensor& x, int y,
                                  const std::vector<int>& expert_labels, const CostModel& cm,
                                  const SurrogateParams& params,
                                  const std::vector<std::vector<Tensor>>& probes_per_outcome);

// Phi^u(h(x)/rho, j) + kappa * sup ||margin deviation||_2
double smooth_adv_cls(const ScoreModel& h, const Tensor& x, std::size_t target,
                      const SurrogateParams& params, const PerturbationBall& ball,
                      const AttackPlan& plan);

// weighted sum of smooth_adv_cls over outcomes; the RERM-C objective
double smooth_adv_def_class(const ScoreModel& h, const Tensor& x, int y,
                            const std::vector<int>& expert_labels, const CostModel& cm,
                            const SurrogateParams& params, const PerturbationBall& ball,
                            const AttackPlan& plan);
double smooth_adv_def_class_at(const ScoreModel& h, const Tensor& x, int y,
                               const std::vector<int>& expert_labels, const CostModel& cm,
                               const SurrogateParams& params,
                               const std::vector<std::vector<Tensor>>& probes_per_outcome);

// alpha_1 * sup_{x'} L(f(x'), t) + beta_1, the adversarially-inflated predictor cost
double cost_reg_pred_adv(const CostModel& cm, const ScoreModel& f, const Tensor& x,
                         const Tensor& t, const PerturbationBall& ball, const AttackPlan& plan);

double adv_true_def_loss_reg(const ScoreModel& r, const ScoreModel& f, const Tensor& x,
                             const Tensor& t, const std::vector<Tensor>& expert_outputs,
                             const CostModel& cm, const PerturbationBall& ball,
                             const AttackPlan& plan);

// -(J-1) c~_1 + sum_j (sum_{i != j} c~_i) sup Phi^{rho,u}(r(x'_j), j)
double adv_surrogate_def_reg(const ScoreModel& r, const ScoreModel& f, const Tensor& x,
                             const Tensor& t, const std::vector<Tensor>& expert_outputs,
                             const CostModel& cm, const SurrogateParams& params,
                             const PerturbationBall& ball, const AttackPlan& plan);
double adv_surrogate_def_reg_at(const ScoreModel& r, const ScoreModel& f, const Tensor& x,
                                const Tensor& t, const std::vector<Tensor>& expert_outputs,
                                const CostModel& cm, const SurrogateParams& params,
                                const std::vector<std::vector<Tensor>>& probes_per_outcome,
                                double c1_adv);

// smooth rejector terms at r(x); the RERM-R objective
double smooth_adv_def_reg(const ScoreModel& r, const ScoreModel& f, const Tensor& x,
                          const Tensor& t, const std::vector<Tensor>& expert_outputs,
                          const CostModel& cm, const SurrogateParams& params,
                          const PerturbationBall& ball, const AttackPlan& plan);
double smooth_adv_def_reg_at(const ScoreModel& r, const ScoreModel& f, const Tensor& x,
                             const Tensor& t, const std::vector<Tensor>& expert_outputs,
                             const CostModel& cm, const SurrogateParams& params,
                             const std::vector<std::vector<Tensor>>& probes_per_outcome,
                             double c1_adv);

// ---- graph builders used by the trainers ---------------------------------

ad::Var base_loss_var(BaseLoss kind, const ad::Var& pred, const Tensor& target);

// Smooth classification deferral loss over recorded traces. proxy_scores has
// one entry per action; an invalid Var means "no proxy" (zero penalty).
ad::Var smooth_adv_def_class_from_traces(const Recorded& clean,
                                         const std::vector<ad::Var>& proxy_scores, int y,
                                         const std::vector<int>& expert_labels,
                                         const CostModel& cm, const SurrogateParams& params,
                                         std::size_t num_classes);

// Smooth regression deferral loss. f_adv_scores is f at the worst x'_1 found
// for the predictor cost (invalid Var means "use the clean trace").
ad::Var smooth_adv_def_reg_from_traces(const Recorded& clean_r, const Recorded& clean_f,
                                       const std::vector<ad::Var>& r_proxy_scores,
                                       const ad::Var& f_adv_scores, const Tensor& t,
                                       const std::vector<Tensor>& expert_outputs,
                                       const CostModel& cm, const SurrogateParams& params);

Tensor margins_of(const Tensor& scores, std::size_t target);  // 1-based target

}  // namespace deferkit
