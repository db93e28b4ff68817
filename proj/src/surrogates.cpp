#include "deferkit/surrogates.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace deferkit {

double psi_u(double v, double u) {
  if (u <= 0) throw ConfigError("psi_u: u must be positive");
  return psi_u_scalar(v, u);
}

double psi_rho(double v, double rho) {
  if (rho <= 0) throw ConfigError("psi_rho: rho must be positive");
  return std::clamp(1.0 - v / rho, 0.0, 1.0);
}

double phi_cls_u(const Tensor& scores, std::size_t target, double u) {
  if (target < 1 || target > scores.size())
    throw ContractError("phi_cls_u: target out of range");
  if (!scores.all_finite()) throw NumericError("phi_cls_u: non-finite scores");
  std::size_t j = target - 1;
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < scores.size(); ++k)
    if (k != j) mx = std::max(mx, scores[k]);
  double acc = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k)
    if (k != j) acc += std::exp(scores[k] - mx);
  double z = mx + std::log(acc) - scores[j];
  double a = softplus(z);  // log(1 + sum exp(s_k - s_j))
  return u == 1.0 ? a : std::expm1((1.0 - u) * a) / (1.0 - u);
}

double phi_cls_rho_u(const Tensor& scores, std::size_t target, const SurrogateParams& params) {
  if (target < 1 || target > scores.size())
    throw ContractError("phi_cls_rho_u: target out of range");
  std::size_t j = target - 1;
  double acc = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k)
    if (k != j) acc += psi_rho(scores[j] - scores[k], params.rho);
  return psi_u_scalar(acc, params.u);
}

ad::Var phi_cls_u_var(const ad::Var& scores, std::size_t target0, double u) {
  return ad::psi_u_of_exp(
      ad::sub(ad::lse_excluding(scores, target0), ad::pick(scores, target0)), u);
}

std::vector<double> shifted_costs_class(const CostModel& cm,
                                        const std::vector<int>& expert_labels, int y,
                                        std::size_t num_classes) {
  std::vector<double> mu(cm.action_count());
  for (std::size_t j = 1; j <= cm.action_count(); ++j)
    mu[j - 1] = cm.cost_class(j, expert_labels, y, num_classes);
  return mu;
}

double true_def_loss_class(std::size_t decision, int y, const std::vector<int>& expert_labels,
                           const CostModel& cm, std::size_t num_classes) {
  return cm.cost_class(decision, expert_labels, y, num_classes);
}

double surrogate_def_class(const Tensor& scores, int y, const std::vector<int>& expert_labels,
                           const CostModel& cm, double u) {
  std::size_t k = scores.size() - expert_labels.size();
  double loss = phi_cls_u(scores, static_cast<std::size_t>(y), u);
  for (std::size_t j = 0; j < expert_labels.size(); ++j) {
    double c = cm.cost_class(k + j + 1, expert_labels, y, k);
    loss += (1.0 - c) * phi_cls_u(scores, k + j + 1, u);
  }
  return loss;
}

ad::Var surrogate_def_class_var(const ad::Var& scores, int y,
                                const std::vector<int>& expert_labels, const CostModel& cm,
                                double u, std::size_t num_classes) {
  ad::Var loss = phi_cls_u_var(scores, static_cast<std::size_t>(y) - 1, u);
  for (std::size_t j = 0; j < expert_labels.size(); ++j) {
    double c = cm.cost_class(num_classes + j + 1, expert_labels, y, num_classes);
    ad::Var term = ad::scale(phi_cls_u_var(scores, num_classes + j, u), 1.0 - c);
    loss = ad::add(loss, term);
  }
  return loss;
}

double true_def_loss_reg(std::size_t decision, const Tensor& f_out, const Tensor& t,
                         const std::vector<Tensor>& expert_outputs, const CostModel& cm) {
  return cm.cost_reg(decision, f_out, expert_outputs, t);
}

double surrogate_def_reg(const Tensor& f_out, const Tensor& r_scores, const Tensor& t,
                         const std::vector<Tensor>& expert_outputs, const CostModel& cm,
                         double u) {
  std::size_t actions = expert_outputs.size() + 1;
  if (r_scores.size() != actions)
    throw ContractError("surrogate_def_reg: rejector scores must have length J+1");
  std::vector<double> costs(actions);
  for (std::size_t j = 1; j <= actions; ++j)
    costs[j - 1] = cm.cost_reg(j, f_out, expert_outputs, t);
  std::vector<double> tau = tau_weights(costs);
  double loss = 0.0;
  for (std::size_t j = 1; j <= actions; ++j)
    loss += tau[j - 1] * phi_cls_u(r_scores, j, u);
  double j_count = static_cast<double>(expert_outputs.size());
  return loss - (j_count - 1.0) * costs[0];
}

ad::Var base_loss_var(BaseLoss kind, const ad::Var& pred, const Tensor& target) {
  ad::Var diff = ad::sub(pred, ad::constant(target));
  return kind == BaseLoss::squared ? ad::sum_squares(diff) : ad::sum_abs(diff);
}

ad::Var surrogate_def_reg_var(const ad::Var& f_scores, const ad::Var& r_scores,
                              const Tensor& t, const std::vector<Tensor>& expert_outputs,
                              const CostModel& cm, double u) {
  std::size_t actions = expert_outputs.size() + 1;
  // c_1 is a graph expression through f; expert costs are constants
  ad::Var c1 = ad::add_const(ad::scale(base_loss_var(cm.base_loss(), f_scores, t), cm.alpha(1)),
                             cm.beta(1));
  std::vector<double> expert_costs(actions, 0.0);
  double expert_total = 0.0;
  for (std::size_t j = 2; j <= actions; ++j) {
    expert_costs[j - 1] = cm.cost_reg(j, Tensor::zeros_like(t), expert_outputs, t);
    expert_total += expert_costs[j - 1];
  }
  ad::Var loss;
  for (std::size_t j = 1; j <= actions; ++j) {
    ad::Var phi = phi_cls_u_var(r_scores, j - 1, u);
    ad::Var weighted;
    if (j == 1) {
      weighted = ad::scale(phi, expert_total);  // tau_1 has no c_1 term
    } else {
      double const_part = expert_total - expert_costs[j - 1];
      weighted = ad::add(ad::scale(phi, const_part), ad::mul(c1, phi));
    }
    loss = loss.valid() ? ad::add(loss, weighted) : weighted;
  }
  double j_count = static_cast<double>(expert_outputs.size());
  return ad::add(loss, ad::scale(c1, -(j_count - 1.0)));
}

Tensor margins_of(const Tensor& scores, std::size_t target) {
  if (target < 1 || target > scores.size())
    throw ContractError("margins_of: target out of range");
  Tensor out({scores.size() - 1});
  std::size_t i = 0;
  for (std::size_t k = 0; k < scores.size(); ++k)
    if (k != target - 1) out[i++] = scores[target - 1] - scores[k];
  return out;
}

namespace {

double l2_diff(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

double margin_deviation_sup(const ScoreModel& h, const Tensor& x, std::size_t target,
                            const PerturbationBall& ball, const AttackPlan& plan,
                            std::vector<Tensor>* probes_out) {
  if (ball.gamma == 0.0) return 0.0;
  Tensor clean_margins = margins_of(h(x), target);
  Recorder rec(h);
  auto obj = [&](const Tensor& xp) {
    Recorded r = rec.record(xp);
    ad::Var pen = ad::norm2(
        ad::sub(ad::margins(r.scores, target - 1), ad::constant(clean_margins)));
    ad::backward(pen);
    return ObjectiveEval{pen.value().item(), r.input.grad()};
  };
  auto value_only = [&](const Tensor& xp) {
    return l2_diff(margins_of(h(xp), target), clean_margins);
  };
  AttackPlan seeded = plan;
  seeded.seed = mix_seed(plan.seed, target, 0x517e);
  PgdResult best = pgd_ascend(obj, value_only, x, ball, seeded,
                              [&](const Tensor& p) {
                                if (probes_out) probes_out->push_back(p);
                              });
  double sup = std::max(best.value, 0.0);  // the center attains 0
  for (const Tensor& v : ball_vertices(x, ball)) {
    if (probes_out) probes_out->push_back(v);
    sup = std::max(sup, value_only(v));
  }
  return sup;
}

double adv_true_def_loss_class(const ScoreModel& h, const Tensor& x, int y,
                               const std::vector<int>& expert_labels, const CostModel& cm,
                               const PerturbationBall& ball, const AttackPlan& plan) {
  std::size_t k = h.output_dim() - expert_labels.size();
  std::vector<double> mu = shifted_costs_class(cm, expert_labels, y, k);
  if (ball.gamma == 0.0)
    return mu[h(x).argmax_lowest_tie()];

  SurrogateParams probe_params(1.0, 1.0, 0.0);
  OutcomeProxySet proxies =
      outcome_proxies(h, x, ball, plan, probe_params, ProxyDirection::toward);
  std::set<std::size_t> reachable;
  reachable.insert(h(x).argmax_lowest_tie() + 1);
  for (const Tensor& probe : proxies.all_probes)
    reachable.insert(h(probe).argmax_lowest_tie() + 1);
  double loss = 0.0;
  for (std::size_t j : reachable) loss += mu[j - 1];
  return loss;
}

double adv_surrogate_def_class(const ScoreModel& h, const Tensor& x, int y,
                               const std::vector<int>& expert_labels, const CostModel& cm,
                               const SurrogateParams& params, const PerturbationBall& ball,
                               const AttackPlan& plan) {
  std::size_t k = h.output_dim() - expert_labels.size();
  std::vector<double> mu = shifted_costs_class(cm, expert_labels, y, k);
  double total = 0.0;
  for (double v : mu) total += v;

  Tensor clean = h(x);
  double loss = 0.0;
  if (ball.gamma == 0.0) {
    for (std::size_t j = 1; j <= mu.size(); ++j)
      loss += (total - mu[j - 1]) * phi_cls_rho_u(clean, j, params);
    return loss;
  }
  OutcomeProxySet proxies = outcome_proxies(h, x, ball, plan, params, ProxyDirection::worst);
  for (std::size_t j = 1; j <= mu.size(); ++j) {
    double sup = std::max(proxies.objective_values.at(j), phi_cls_rho_u(clean, j, params));
    loss += (total - mu[j - 1]) * sup;
  }
  return loss;
}

double adv_surrogate_def_class_at(const ScoreModel& h, const Tensor& x, int y,
                                  const std::vector<int>& expert_labels, const CostModel& cm,
                                  const SurrogateParams& params,
                                  const std::vector<std::vector<Tensor>>& probes_per_outcome) {
  std::size_t k = h.output_dim() - expert_labels.size();
  std::vector<double> mu = shifted_costs_class(cm, expert_labels, y, k);
  double total = 0.0;
  for (double v : mu) total += v;
  double loss = 0.0;
  for (std::size_t j = 1; j <= mu.size(); ++j) {
    double sup = phi_cls_rho_u(h(x), j, params);
    for (const Tensor& p : probes_per_outcome.at(j - 1))
      sup = std::max(sup, phi_cls_rho_u(h(p), j, params));
    loss += (total - mu[j - 1]) * sup;
  }
  return loss;
}

double smooth_adv_cls(const ScoreModel& h, const Tensor& x, std::size_t target,
                      const SurrogateParams& params, const PerturbationBall& ball,
                      const AttackPlan& plan) {
  Tensor scaled = h(x);
  for (double& v : scaled.data()) v /= params.rho;
  double clean = phi_cls_u(scaled, target, params.u);
  double pen = (ball.gamma == 0.0 || params.kappa == 0.0)
                   ? 0.0
                   : margin_deviation_sup(h, x, target, ball, plan);
  return clean + params.kappa * pen;
}

double smooth_adv_def_class(const ScoreModel& h, const Tensor& x, int y,
                            const std::vector<int>& expert_labels, const CostModel& cm,
                            const SurrogateParams& params, const PerturbationBall& ball,
                            const AttackPlan& plan) {
  std::size_t k = h.output_dim() - expert_labels.size();
  std::vector<double> mu = shifted_costs_class(cm, expert_labels, y, k);
  double total = 0.0;
  for (double v : mu) total += v;
  double loss = 0.0;
  for (std::size_t j = 1; j <= mu.size(); ++j)
    loss += (total - mu[j - 1]) * smooth_adv_cls(h, x, j, params, ball, plan);
  return loss;
}

double smooth_adv_def_class_at(const ScoreModel& h, const Tensor& x, int y,
                               const std::vector<int>& expert_labels, const CostModel& cm,
                               const SurrogateParams& params,
                               const std::vector<std::vector<Tensor>>& probes_per_outcome) {
  std::size_t k = h.output_dim() - expert_labels.size();
  std::vector<double> mu = shifted_costs_class(cm, expert_labels, y, k);
  double total = 0.0;
  for (double v : mu) total += v;
  Tensor clean = h(x);
  Tensor scaled = clean;
  for (double& v : scaled.data()) v /= params.rho;
  double loss = 0.0;
  for (std::size_t j = 1; j <= mu.size(); ++j) {
    Tensor clean_margins = margins_of(clean, j);
    double pen = 0.0;
    for (const Tensor& p : probes_per_outcome.at(j - 1))
      pen = std::max(pen, l2_diff(margins_of(h(p), j), clean_margins));
    loss += (total - mu[j - 1]) * (phi_cls_u(scaled, j, params.u) + params.kappa * pen);
  }
  return loss;
}

double cost_reg_pred_adv(const CostModel& cm, const ScoreModel& f, const Tensor& x,
                         const Tensor& t, const PerturbationBall& ball,
                         const AttackPlan& plan) {
  double clean = base_loss_value(cm.base_loss(), f(x), t);
  if (ball.gamma == 0.0) return cm.alpha(1) * clean + cm.beta(1);

  Recorder rec(f);
  auto obj = [&](const Tensor& xp) {
    Recorded r = rec.record(xp);
    ad::Var loss = base_loss_var(cm.base_loss(), r.scores, t);
    ad::backward(loss);
    return ObjectiveEval{loss.value().item(), r.input.grad()};
  };
  auto value_only = [&](const Tensor& xp) { return base_loss_value(cm.base_loss(), f(xp), t); };
  AttackPlan seeded = plan;
  seeded.seed = mix_seed(plan.seed, 1, 0xc057);
  double sup = std::max(clean, pgd_ascend(obj, value_only, x, ball, seeded).value);
  for (const Tensor& v : ball_vertices(x, ball)) sup = std::max(sup, value_only(v));
  return cm.alpha(1) * sup + cm.beta(1);
}

namespace {

std::vector<double> adv_reg_costs(const ScoreModel& f, const Tensor& x, const Tensor& t,
                                  const std::vector<Tensor>& expert_outputs,
                                  const CostModel& cm, const PerturbationBall& ball,
                                  const AttackPlan& plan) {
  std::size_t actions = expert_outputs.size() + 1;
  std::vector<double> costs(actions);
  costs[0] = cost_reg_pred_adv(cm, f, x, t, ball, plan);
  for (std::size_t j = 2; j <= actions; ++j)
    costs[j - 1] = cm.cost_reg(j, Tensor::zeros_like(t), expert_outputs, t);
  return costs;
}

}  // namespace

double adv_true_def_loss_reg(const ScoreModel& r, const ScoreModel& f, const Tensor& x,
                             const Tensor& t, const std::vector<Tensor>& expert_outputs,
                             const CostModel& cm, const PerturbationBall& ball,
                             const AttackPlan& plan) {
  std::vector<double> costs = adv_reg_costs(f, x, t, expert_outputs, cm, ball, plan);
  if (ball.gamma == 0.0) return costs[r(x).argmax_lowest_tie()];

  SurrogateParams probe_params(1.0, 1.0, 0.0);
  OutcomeProxySet proxies =
      outcome_proxies(r, x, ball, plan, probe_params, ProxyDirection::toward);
  std::set<std::size_t> reachable;
  reachable.insert(r(x).argmax_lowest_tie() + 1);
  for (const Tensor& probe : proxies.all_probes)
    reachable.insert(r(probe).argmax_lowest_tie() + 1);
  double loss = 0.0;
  for (std::size_t j : reachable) loss += costs[j - 1];
  return loss;
}

double adv_surrogate_def_reg(const ScoreModel& r, const ScoreModel& f, const Tensor& x,
                             const Tensor& t, const std::vector<Tensor>& expert_outputs,
                             const CostModel& cm, const SurrogateParams& params,
                             const PerturbationBall& ball, const AttackPlan& plan) {
  std::vector<double> costs = adv_reg_costs(f, x, t, expert_outputs, cm, ball, plan);
  double total = 0.0;
  for (double c : costs) total += c;
  double j_count = static_cast<double>(expert_outputs.size());

  Tensor clean = r(x);
  double loss = -(j_count - 1.0) * costs[0];
  if (ball.gamma == 0.0) {
    for (std::size_t j = 1; j <= costs.size(); ++j)
      loss += (total - costs[j - 1]) * phi_cls_rho_u(clean, j, params);
    return loss;
  }
  OutcomeProxySet proxies = outcome_proxies(r, x, ball, plan, params, ProxyDirection::worst);
  for (std::size_t j = 1; j <= costs.size(); ++j) {
    double sup = std::max(proxies.objective_values.at(j), phi_cls_rho_u(clean, j, params));
    loss += (total - costs[j - 1]) * sup;
  }
  return loss;
}

double adv_surrogate_def_reg_at(const ScoreModel& r, const ScoreModel& f, const Tensor& x,
                                const Tensor& t, const std::vector<Tensor>& expert_outputs,
                                const CostModel& cm, const SurrogateParams& params,
                                const std::vector<std::vector<Tensor>>& probes_per_outcome,
                                double c1_adv) {
  (void)f;
  std::size_t actions = expert_outputs.size() + 1;
  std::vector<double> costs(actions);
  costs[0] = c1_adv;
  for (std::size_t j = 2; j <= actions; ++j)
    costs[j - 1] = cm.cost_reg(j, Tensor::zeros_like(t), expert_outputs, t);
  double total = 0.0;
  for (double c : costs) total += c;
  double j_count = static_cast<double>(expert_outputs.size());
  double loss = -(j_count - 1.0) * costs[0];
  for (std::size_t j = 1; j <= costs.size(); ++j) {
    double sup = phi_cls_rho_u(r(x), j, params);
    for (const Tensor& p : probes_per_outcome.at(j - 1))
      sup = std::max(sup, phi_cls_rho_u(r(p), j, params));
    loss += (total - costs[j - 1]) * sup;
  }
  return loss;
}

double smooth_adv_def_reg(const ScoreModel& r, const ScoreModel& f, const Tensor& x,
                          const Tensor& t, const std::vector<Tensor>& expert_outputs,
                          const CostModel& cm, const SurrogateParams& params,
                          const PerturbationBall& ball, const AttackPlan& plan) {
  std::vector<double> costs = adv_reg_costs(f, x, t, expert_outputs, cm, ball, plan);
  double total = 0.0;
  for (double c : costs) total += c;
  double j_count = static_cast<double>(expert_outputs.size());
  Tensor scaled = r(x);
  for (double& v : scaled.data()) v /= params.rho;

  double loss = -(j_count - 1.0) * costs[0];
  for (std::size_t j = 1; j <= costs.size(); ++j) {
    double pen = (ball.gamma == 0.0 || params.kappa == 0.0)
                     ? 0.0
                     : margin_deviation_sup(r, x, j, ball, plan);
    loss += (total - costs[j - 1]) * (phi_cls_u(scaled, j, params.u) + params.kappa * pen);
  }
  return loss;
}

double smooth_adv_def_reg_at(const ScoreModel& r, const ScoreModel& f, const Tensor& x,
                             const Tensor& t, const std::vector<Tensor>& expert_outputs,
                             const CostModel& cm, const SurrogateParams& params,
                             const std::vector<std::vector<Tensor>>& probes_per_outcome,
                             double c1_adv) {
  (void)f;
  std::size_t actions = expert_outputs.size() + 1;
  std::vector<double> costs(actions);
  costs[0] = c1_adv;
  for (std::size_t j = 2; j <= actions; ++j)
    costs[j - 1] = cm.cost_reg(j, Tensor::zeros_like(t), expert_outputs, t);
  double total = 0.0;
  for (double c : costs) total += c;
  double j_count = static_cast<double>(expert_outputs.size());
  Tensor clean = r(x);
  Tensor scaled = clean;
  for (double& v : scaled.data()) v /= params.rho;
  double loss = -(j_count - 1.0) * costs[0];
  for (std::size_t j = 1; j <= costs.size(); ++j) {
    Tensor clean_margins = margins_of(clean, j);
    double pen = 0.0;
    for (const Tensor& p : probes_per_outcome.at(j - 1))
      pen = std::max(pen, l2_diff(margins_of(r(p), j), clean_margins));
    loss += (total - costs[j - 1]) * (phi_cls_u(scaled, j, params.u) + params.kappa * pen);
  }
  return loss;
}

ad::Var smooth_adv_def_class_from_traces(const Recorded& clean,
                                         const std::vector<ad::Var>& proxy_scores, int y,
                                         const std::vector<int>& expert_labels,
                                         const CostModel& cm, const SurrogateParams& params,
                                         std::size_t num_classes) {
  std::vector<double> mu = shifted_costs_class(cm, expert_labels, y, num_classes);
  if (proxy_scores.size() != mu.size())
    throw ContractError("smooth_adv_def_class_from_traces: one proxy slot per action");
  double total = 0.0;
  for (double v : mu) total += v;
  ad::Var scaled = params.rho == 1.0 ? clean.scores : ad::scale(clean.scores, 1.0 / params.rho);
  ad::Var loss;
  for (std::size_t j = 0; j < mu.size(); ++j) {
    ad::Var term = phi_cls_u_var(scaled, j, params.u);
    if (proxy_scores[j].valid() && params.kappa != 0.0) {
      ad::Var pen = ad::norm2(
          ad::sub(ad::margins(proxy_scores[j], j), ad::margins(clean.scores, j)));
      term = ad::add(term, ad::scale(pen, params.kappa));
    }
    ad::Var weighted = ad::scale(term, total - mu[j]);
    loss = loss.valid() ? ad::add(loss, weighted) : weighted;
  }
  return loss;
}

ad::Var smooth_adv_def_reg_from_traces(const Recorded& clean_r, const Recorded& clean_f,
                                       const std::vector<ad::Var>& r_proxy_scores,
                                       const ad::Var& f_adv_scores, const Tensor& t,
                                       const std::vector<Tensor>& expert_outputs,
                                       const CostModel& cm, const SurrogateParams& params) {
  std::size_t actions = expert_outputs.size() + 1;
  if (r_proxy_scores.size() != actions)
    throw ContractError("smooth_adv_def_reg_from_traces: one proxy slot per action");
  const ad::Var& f_scores = f_adv_scores.valid() ? f_adv_scores : clean_f.scores;
  ad::Var c1 = ad::add_const(
      ad::scale(base_loss_var(cm.base_loss(), f_scores, t), cm.alpha(1)), cm.beta(1));
  std::vector<double> expert_costs(actions, 0.0);
  double expert_total = 0.0;
  for (std::size_t j = 2; j <= actions; ++j) {
    expert_costs[j - 1] = cm.cost_reg(j, Tensor::zeros_like(t), expert_outputs, t);
    expert_total += expert_costs[j - 1];
  }

  ad::Var scaled =
      params.rho == 1.0 ? clean_r.scores : ad::scale(clean_r.scores, 1.0 / params.rho);
  ad::Var loss;
  for (std::size_t j = 1; j <= actions; ++j) {
    ad::Var term = phi_cls_u_var(scaled, j - 1, params.u);
    if (r_proxy_scores[j - 1].valid() && params.kappa != 0.0) {
      ad::Var pen = ad::norm2(
          ad::sub(ad::margins(r_proxy_scores[j - 1], j - 1), ad::margins(clean_r.scores, j - 1)));
      term = ad::add(term, ad::scale(pen, params.kappa));
    }
    ad::Var weighted;
    if (j == 1) {
      weighted = ad::scale(term, expert_total);
    } else {
      double const_part = expert_total - expert_costs[j - 1];
      weighted = ad::add(ad::scale(term, const_part), ad::mul(c1, term));
    }
    loss = loss.valid() ? ad::add(loss, weighted) : weighted;
  }
  double j_count = static_cast<double>(expert_outputs.size());
  return ad::add(loss, ad::scale(c1, -(j_count - 1.0)));
}

}  // namespace deferkit
