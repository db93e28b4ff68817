#include "deferkit/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "deferkit/surrogates.hpp"

namespace deferkit {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto splitmix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  };
  return splitmix(splitmix(seed ^ splitmix(a)) ^ splitmix(b + 0x1234abcdull));
}

bool PerturbationBall::contains(const Tensor& point, const Tensor& center,
                                double slack) const {
  if (!point.same_shape(center)) return false;
  Tensor delta = point;
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] -= center[i];
  double nrm = p == NormOrder::linf ? linf_norm(delta) : l2_norm(delta);
  if (nrm > gamma + slack) return false;
  if (box_lo || box_hi) {
    for (double v : point.data()) {
      if (box_lo && v < *box_lo) return false;
      if (box_hi && v > *box_hi) return false;
    }
  }
  return true;
}

AttackPlan AttackPlan::standard(double gamma, std::uint64_t seed) {
  AttackPlan plan;
  plan.steps = 10;
  plan.step_size = gamma > 0 ? 2.5 * gamma / plan.steps : 1.0;
  plan.init = Init::center;
  plan.restarts = 1;
  plan.seed = seed;
  return plan;
}

AttackPlan AttackPlan::restart_free(double gamma, int steps, std::uint64_t seed) {
  AttackPlan plan;
  plan.steps = steps;
  plan.step_size = gamma > 0 && steps > 0 ? 2.5 * gamma / steps : 1.0;
  plan.init = Init::center;
  plan.restarts = 0;
  plan.seed = seed;
  return plan;
}

Tensor project(const Tensor& candidate, const Tensor& center, const PerturbationBall& ball) {
  if (!candidate.same_shape(center)) throw ContractError("project: shape mismatch");
  Tensor out = candidate;
  if (ball.p == NormOrder::linf) {
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = std::clamp(out[i], center[i] - ball.gamma, center[i] + ball.gamma);
  } else {
    Tensor delta = candidate;
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] -= center[i];
    double nrm = l2_norm(delta);
    if (nrm > ball.gamma) {
      double s = nrm > 0 ? ball.gamma / nrm : 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = center[i] + delta[i] * s;
    }
  }
  if (ball.box_lo || ball.box_hi) {
    for (double& v : out.data()) {
      if (ball.box_lo) v = std::max(v, *ball.box_lo);
      if (ball.box_hi) v = std::min(v, *ball.box_hi);
    }
  }
  return out;
}

Tensor random_point_in_ball(const Tensor& center, const PerturbationBall& ball,
                            std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Tensor out = center;
  for (double& v : out.data()) v += ball.gamma * unit(rng);
  return project(out, center, ball);
}

Tensor pgd_step(const Tensor& cur, const Tensor& grad, const Tensor& center,
                const PerturbationBall& ball, double step_size) {
  Tensor next = cur;
  if (ball.p == NormOrder::linf) {
    for (std::size_t i = 0; i < next.size(); ++i) {
      double g = grad[i];
      double dir = g > 0 ? 1.0 : (g < 0 ? -1.0 : 0.0);
      next[i] += step_size * dir;
    }
  } else {
    // normalized when the gradient is large, raw below norm 1 so iterates
    // can settle at interior maximizers
    double nrm = std::max(l2_norm(grad), 1.0);
    for (std::size_t i = 0; i < next.size(); ++i)
      next[i] += step_size * grad[i] / nrm;
  }
  return project(next, center, ball);
}

PgdResult pgd_ascend(const Objective& obj, const ValueFn& value_only, const Tensor& center,
                     const PerturbationBall& ball, const AttackPlan& plan,
                     const ProbeSink& sink) {
  PgdResult best;
  bool have_best = false;
  auto consider = [&](const Tensor& point, double value) {
    if (sink) sink(point);
    if (!have_best || value > best.value) {
      best.point = point;
      best.value = value;
      have_best = true;
    }
  };

  int runs = 1 + std::max(0, plan.restarts);
  std::mt19937_64 rng(mix_seed(plan.seed, 0x9d0));
  for (int run = 0; run < runs; ++run) {
    Tensor cur;
    if (run == 0 && plan.init == AttackPlan::Init::center)
      cur = project(center, center, ball);
    else
      cur = random_point_in_ball(center, ball, rng);

    if (plan.steps <= 0) {
      consider(cur, value_only(cur));
      continue;
    }
    ObjectiveEval e = obj(cur);
    if (!e.grad.all_finite() || !std::isfinite(e.value))
      throw NumericError("pgd_ascend: non-finite evaluation at iteration 0");
    consider(cur, e.value);
    for (int t = 1; t <= plan.steps; ++t) {
      cur = pgd_step(cur, e.grad, center, ball, plan.step_size);
      if (t < plan.steps) {
        e = obj(cur);
        if (!e.grad.all_finite() || !std::isfinite(e.value))
          throw NumericError("pgd_ascend: non-finite evaluation at iteration " +
                             std::to_string(t));
        consider(cur, e.value);
      } else {
        consider(cur, value_only(cur));
      }
    }
  }
  return best;
}

std::vector<Tensor> ball_vertices(const Tensor& center, const PerturbationBall& ball) {
  std::vector<Tensor> out;
  if (ball.p != NormOrder::linf || ball.gamma <= 0 || center.size() > 2) return out;
  std::size_t d = center.size();
  for (std::size_t mask = 0; mask < (1u << d); ++mask) {
    Tensor v = center;
    for (std::size_t i = 0; i < d; ++i)
      v[i] += ((mask >> i) & 1u) ? ball.gamma : -ball.gamma;
    out.push_back(project(v, center, ball));
  }
  return out;
}

OutcomeProxySet outcome_proxies(const ScoreModel& policy, const Tensor& x,
                                const PerturbationBall& ball, const AttackPlan& plan,
                                const SurrogateParams& params, ProxyDirection direction) {
  OutcomeProxySet set;
  Recorder rec(policy);
  std::size_t actions = policy.output_dim();
  std::vector<Tensor> vertices = ball_vertices(x, ball);

  for (std::size_t j = 1; j <= actions; ++j) {
    auto build = [&](const Tensor& xp) -> std::pair<double, Tensor> {
      Recorded r = rec.record(xp);
      ad::Var obj;
      if (direction == ProxyDirection::toward)
        obj = ad::neg(phi_cls_u_var(r.scores, j - 1, params.u));
      else
        obj = ad::phi_rho_u(r.scores, j - 1, params.rho, params.u);
      ad::backward(obj);
      return {obj.value().item(), r.input.grad()};
    };
    auto value_of = [&](const Tensor& xp) {
      Tensor s = policy(xp);
      if (direction == ProxyDirection::toward)
        return -phi_cls_u(s, j, params.u);
      return phi_cls_rho_u(s, j, params);
    };

    AttackPlan seeded = plan;
    seeded.seed = mix_seed(plan.seed, j, static_cast<std::uint64_t>(direction));
    PgdResult best = pgd_ascend(
        [&](const Tensor& p) {
          auto [v, g] = build(p);
          return ObjectiveEval{v, g};
        },
        value_of, x, ball, seeded,
        [&](const Tensor& p) { set.all_probes.push_back(p); });

    for (const Tensor& v : vertices) {
      set.all_probes.push_back(v);
      double val = value_of(v);
      if (val > best.value) best = {v, val};
    }
    set.proxies[j] = best.point;
    set.objective_values[j] = best.value;
  }
  return set;
}

TargetedResult targeted_attack(const ScoreModel& policy, const Tensor& x, std::size_t nu,
                               const PerturbationBall& ball, const AttackPlan& plan,
                               double u) {
  if (nu < 1 || nu > policy.output_dim())
    throw ConfigError("targeted_attack: target action out of range");
  Recorder rec(policy);
  auto obj = [&](const Tensor& xp) {
    Recorded r = rec.record(xp);
    ad::Var loss = ad::neg(phi_cls_u_var(r.scores, nu - 1, u));
    ad::backward(loss);
    return ObjectiveEval{loss.value().item(), r.input.grad()};
  };
  auto value_only = [&](const Tensor& xp) { return -phi_cls_u(policy(xp), nu, u); };

  PgdResult best = pgd_ascend(obj, value_only, x, ball, plan);
  for (const Tensor& v : ball_vertices(x, ball)) {
    double val = value_only(v);
    if (val > best.value) best = {v, val};
  }
  TargetedResult res;
  res.point = best.point;
  res.objective = -best.value;
  res.success = policy(best.point).argmax_lowest_tie() + 1 == nu;
  return res;
}

Tensor untargeted_attack_class(const ScoreModel& h, const Tensor& x, int y,
                               const std::vector<int>& expert_labels, const CostModel& cm,
                               double u, const PerturbationBall& ball,
                               const AttackPlan& plan) {
  Recorder rec(h);
  std::size_t k = h.output_dim() - expert_labels.size();
  auto obj = [&](const Tensor& xp) {
    Recorded r = rec.record(xp);
    ad::Var loss = surrogate_def_class_var(r.scores, y, expert_labels, cm, u, k);
    ad::backward(loss);
    return ObjectiveEval{loss.value().item(), r.input.grad()};
  };
  auto value_only = [&](const Tensor& xp) {
    return surrogate_def_class(h(xp), y, expert_labels, cm, u);
  };
  return pgd_ascend(obj, value_only, x, ball, plan).point;
}

Tensor untargeted_attack_reg(const ScoreModel& r, const ScoreModel& f, const Tensor& x,
                             const Tensor& t, const std::vector<Tensor>& expert_outputs,
                             const CostModel& cm, double u, const PerturbationBall& ball,
                             const AttackPlan& plan) {
  Recorder rec_r(r);
  Recorder rec_f(f);
  auto obj = [&](const Tensor& xp) {
    Recorded rr = rec_r.record(xp);
    Recorded rf = rec_f.record(xp);
    ad::Var loss = surrogate_def_reg_var(rf.scores, rr.scores, t, expert_outputs, cm, u);
    ad::backward(loss);
    Tensor g = rr.input.grad();
    const Tensor& gf = rf.input.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gf[i];
    return ObjectiveEval{loss.value().item(), g};
  };
  auto value_only = [&](const Tensor& xp) {
    return surrogate_def_reg(f(xp), r(xp), t, expert_outputs, cm, u);
  };
  return pgd_ascend(obj, value_only, x, ball, plan).point;
}

}  // namespace deferkit
