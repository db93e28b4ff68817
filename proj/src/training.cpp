#include "deferkit/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "deferkit/surrogates.hpp"

namespace deferkit {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("TrainConfig: epochs must be nonnegative");
  if (batch_size == 0) throw ConfigError("TrainConfig: batch_size must be positive");
  if (learning_rate <= 0) throw ConfigError("TrainConfig: learning_rate must be positive");
  if (eta < 0) throw ConfigError("TrainConfig: eta must be nonnegative");
}

AdamOptimizer::AdamOptimizer(std::size_t dim, double learning_rate)
    : m_({dim}), v_({dim}), lr_(learning_rate) {}

void AdamOptimizer::step(Tensor& params, const Tensor& grad) {
  if (!params.same_shape(m_) || !grad.same_shape(m_))
    throw ContractError("AdamOptimizer: dimension mismatch");
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    double mhat = m_[i] / bc1;
    double vhat = v_[i] / bc2;
    params[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
  }
}

namespace {

struct ProbeCandidate {
  double value = 0.0;
  ad::Var scores;  // invalid == ball center (zero penalty)
};

// Inner maximization of the margin-deviation penalty for one outcome.
// The center run reuses the clean trace: its penalty is identically zero
// and its gradient backward sweeps the already-recorded graph, so with a
// restart-free center-init plan the run costs exactly T forwards and T
// backwards through the score network.
ProbeCandidate ascend_margin_penalty(Recorder& rec, const Recorded& clean, std::size_t j0,
                                     const Tensor& x, const PerturbationBall& ball,
                                     const AttackPlan& plan, std::mt19937_64& rng,
                                     PassCounter* counter) {
  auto pen_expr = [&](const ad::Var& scores) {
    return ad::norm2(ad::sub(ad::margins(scores, j0), ad::margins(clean.scores, j0)));
  };

  ProbeCandidate best;  // the center attains penalty 0
  int runs = 1 + std::max(0, plan.restarts);
  for (int run = 0; run < runs; ++run) {
    Tensor cur_pt;
    Recorded cur_rec;
    ad::Var cur_pen;
    if (run == 0 && plan.init == AttackPlan::Init::center) {
      cur_pt = project(x, x, ball);
      cur_rec = clean;
      cur_pen = pen_expr(clean.scores);  // value 0 by construction
    } else {
      cur_pt = random_point_in_ball(x, ball, rng);
      cur_rec = rec.record(cur_pt);
      cur_pen = pen_expr(cur_rec.scores);
      if (cur_pen.value().item() > best.value)
        best = {cur_pen.value().item(), cur_rec.scores};
    }
    for (int t = 1; t <= plan.steps; ++t) {
      ad::backward(cur_pen, counter);
      Tensor g = cur_rec.input.grad();
      cur_pt = pgd_step(cur_pt, g, x, ball, plan.step_size);
      cur_rec = rec.record(cur_pt);
      cur_pen = pen_expr(cur_rec.scores);
      double v = cur_pen.value().item();
      if (!std::isfinite(v))
        throw NumericError("ascend_margin_penalty: non-finite penalty at step " +
                           std::to_string(t));
      if (v > best.value) best = {v, cur_rec.scores};
    }
  }
  return best;
}

// Inner maximization of the predictor base loss for the adversarial cost
// c~_1; same loop shape, running on the predictor network.
ProbeCandidate ascend_predictor_loss(Recorder& rec_f, const Recorded& clean_f,
                                     const Tensor& t, BaseLoss base, const Tensor& x,
                                     const PerturbationBall& ball, const AttackPlan& plan,
                                     std::mt19937_64& rng) {
  ProbeCandidate best;
  best.value = base_loss_var(base, clean_f.scores, t).value().item();
  int runs = 1 + std::max(0, plan.restarts);
  for (int run = 0; run < runs; ++run) {
    Tensor cur_pt;
    Recorded cur_rec;
    ad::Var cur_loss;
    if (run == 0 && plan.init == AttackPlan::Init::center) {
      cur_pt = project(x, x, ball);
      cur_rec = clean_f;
      cur_loss = base_loss_var(base, clean_f.scores, t);
    } else {
      cur_pt = random_point_in_ball(x, ball, rng);
      cur_rec = rec_f.record(cur_pt);
      cur_loss = base_loss_var(base, cur_rec.scores, t);
      if (cur_loss.value().item() > best.value) best = {cur_loss.value().item(), cur_rec.scores};
    }
    for (int step = 1; step <= plan.steps; ++step) {
      ad::backward(cur_loss);
      Tensor g = cur_rec.input.grad();
      cur_pt = pgd_step(cur_pt, g, x, ball, plan.step_size);
      cur_rec = rec_f.record(cur_pt);
      cur_loss = base_loss_var(base, cur_rec.scores, t);
      double v = cur_loss.value().item();
      if (!std::isfinite(v))
        throw NumericError("ascend_predictor_loss: non-finite loss at step " +
                           std::to_string(step));
      if (v > best.value) best = {v, cur_rec.scores};
    }
  }
  return best;
}

std::vector<std::size_t> shuffled_train_indices(const Dataset& ds, std::uint64_t seed,
                                                int epoch) {
  std::vector<std::size_t> idx = ds.train_idx;
  std::mt19937_64 rng(mix_seed(seed, 0xe90c, static_cast<std::uint64_t>(epoch)));
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

double system_accuracy_class(const ScoreModel& h, const Dataset& ds, const ExpertPanel& panel,
                             const std::vector<std::size_t>& idx) {
  if (idx.empty()) return 0.0;
  std::size_t k = ds.num_classes;
  std::size_t correct = 0;
  for (std::size_t i : idx) {
    std::size_t action = h(ds.row(i)).argmax_lowest_tie() + 1;
    int y = ds.labels[i];
    if (action <= k) {
      if (static_cast<int>(action) == y) ++correct;
    } else if (panel.label_of(i, action - k - 1) == y) {
      ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

double system_rmse_reg(const ScoreModel& r, const ScoreModel& f, const Dataset& ds,
                       const ExpertPanel& panel, const std::vector<std::size_t>& idx) {
  if (idx.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i : idx) {
    Tensor x = ds.row(i);
    std::size_t action = r(x).argmax_lowest_tie() + 1;
    Tensor out = action == 1 ? f(x) : panel.output_of(i, action - 2);
    Tensor t = ds.target_row(i);
    for (std::size_t c = 0; c < t.size(); ++c) {
      double d = out[c] - t[c];
      acc += d * d;
    }
  }
  return std::sqrt(acc / static_cast<double>(idx.size()));
}

struct ClassLossSetup {
  const Dataset& ds;
  const ExpertPanel& panel;
  const CostModel& cm;
  SurrogateParams params;
  PerturbationBall ball;
  AttackPlan plan;
  bool adversarial = true;
};

// Per-example smooth loss; proxies regenerated against current parameters.
ad::Var example_loss_class(Recorder& rec, const ClassLossSetup& s, std::size_t i,
                           int epoch, PassCounter* counter) {
  Tensor x = s.ds.row(i);
  Recorded clean = rec.record(x);
  std::size_t actions = clean.scores.value().size();
  std::vector<ad::Var> proxies(actions);
  if (s.adversarial && s.ball.gamma > 0 && s.plan.steps > 0) {
    for (std::size_t j = 0; j < actions; ++j) {
      std::mt19937_64 rng(mix_seed(s.plan.seed, mix_seed(i, j), static_cast<std::uint64_t>(epoch)));
      ProbeCandidate best =
          ascend_margin_penalty(rec, clean, j, x, s.ball, s.plan, rng, counter);
      proxies[j] = best.scores;
    }
  }
  return smooth_adv_def_class_from_traces(clean, proxies, s.ds.labels[i],
                                          s.panel.labels_for(i), s.cm, s.params,
                                          s.ds.num_classes);
}

struct RegLossSetup {
  const Dataset& ds;
  const ExpertPanel& panel;
  const CostModel& cm;
  SurrogateParams params;
  PerturbationBall ball;
  AttackPlan plan;
  bool adversarial = true;
};

ad::Var example_loss_reg(Recorder& rec_r, Recorder& rec_f, const RegLossSetup& s,
                         std::size_t i, int epoch, PassCounter* counter) {
  Tensor x = s.ds.row(i);
  Tensor t = s.ds.target_row(i);
  Recorded clean_r = rec_r.record(x);
  Recorded clean_f = rec_f.record(x);
  std::size_t actions = clean_r.scores.value().size();
  std::vector<ad::Var> proxies(actions);
  ad::Var f_adv;
  if (s.adversarial && s.ball.gamma > 0 && s.plan.steps > 0) {
    for (std::size_t j = 0; j < actions; ++j) {
      std::mt19937_64 rng(mix_seed(s.plan.seed, mix_seed(i, j), static_cast<std::uint64_t>(epoch)));
      proxies[j] = ascend_margin_penalty(rec_r, clean_r, j, x, s.ball, s.plan, rng, counter).scores;
    }
    std::mt19937_64 rng(mix_seed(s.plan.seed, mix_seed(i, 0xf00d), static_cast<std::uint64_t>(epoch)));
    f_adv = ascend_predictor_loss(rec_f, clean_f, t, s.cm.base_loss(), x, s.ball, s.plan, rng)
                .scores;
  }
  return smooth_adv_def_reg_from_traces(clean_r, clean_f, proxies, f_adv, t,
                                        s.panel.outputs_for(i), s.cm, s.params);
}

ad::Var l2_regularizer(const Recorder& rec) {
  ad::Var acc;
  for (const ad::Var& leaf : rec.param_leaves()) {
    ad::Var term = ad::sum_squares(leaf);
    acc = acc.valid() ? ad::add(acc, term) : term;
  }
  return acc;
}

}  // namespace

double batch_objective_class(const ScoreModel& h, const Dataset& ds, const ExpertPanel& panel,
                             const CostModel& cm, const SurrogateParams& params,
                             const PerturbationBall& ball, const AttackPlan& plan,
                             const std::vector<std::size_t>& batch) {
  Recorder rec(h);
  ClassLossSetup setup{ds, panel, cm, params, ball, plan, ball.gamma > 0};
  double acc = 0.0;
  for (std::size_t i : batch)
    acc += example_loss_class(rec, setup, i, 0, nullptr).value().item();
  return acc / static_cast<double>(batch.size());
}

namespace {

// Shared epoch driver for the classification objectives.
TrainHistory run_class_training(ScoreModel& h, const Dataset& ds, const ExpertPanel& panel,
                                const CostModel& cm, const SurrogateParams& params,
                                const PerturbationBall& ball, const AttackPlan& plan,
                                const TrainConfig& cfg, bool adversarial,
                                PassCounter* counter) {
  cfg.validate();
  TrainHistory history;
  AdamOptimizer opt(h.param_count(), cfg.learning_rate);
  PerturbationBall def_ball = ball;
  AttackPlan def_plan = plan;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (counter) counter->reset();
    Tensor snapshot = h.flat_params();
    std::vector<std::size_t> order = shuffled_train_indices(ds, cfg.seed, epoch);
    double objective_sum = 0.0;
    std::size_t batches = 0;
    bool failed = false;

    for (std::size_t start = 0; start < order.size() && !failed; start += cfg.batch_size) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<std::size_t> batch(order.begin() + start, order.begin() + end);
      Recorder rec(h, counter);
      ClassLossSetup setup{ds, panel, cm, params, ball, plan, adversarial};
      ad::Var loss;
      for (std::size_t i : batch) {
        ad::Var term = example_loss_class(rec, setup, i, epoch, counter);
        loss = loss.valid() ? ad::add(loss, term) : term;
      }
      loss = ad::scale(loss, 1.0 / static_cast<double>(batch.size()));
      if (cfg.eta > 0 && cfg.regularizer == TrainConfig::Regularizer::l2_params)
        loss = ad::add(loss, ad::scale(l2_regularizer(rec), cfg.eta));

      double value = loss.value().item();
      ad::backward(loss, counter, static_cast<std::int64_t>(batch.size()));
      Tensor grad = rec.param_grad();
      if (!std::isfinite(value) || !grad.all_finite()) {
        h.set_flat_params(snapshot);
        history.aborted = true;
        history.note = "objective became non-finite at epoch " + std::to_string(epoch);
        failed = true;
        break;
      }
      Tensor p = h.flat_params();
      opt.step(p, grad);
      h.set_flat_params(p);
      objective_sum += value;
      ++batches;
    }
    if (failed) break;

    EpochStats stats;
    stats.epoch = epoch;
    stats.objective = batches > 0 ? objective_sum / static_cast<double>(batches) : 0.0;
    stats.clean_metric = system_accuracy_class(h, ds, panel, ds.train_idx);
    if (cfg.track_def_loss) {
      double acc = 0.0;
      for (std::size_t i : ds.train_idx)
        acc += adv_true_def_loss_class(h, ds.row(i), ds.labels[i], panel.labels_for(i), cm,
                                       def_ball, def_plan);
      stats.def_loss_probe = acc / static_cast<double>(ds.train_idx.size());
    }
    if (counter) {
      stats.forwards = counter->forwards;
      stats.backwards = counter->backwards;
    }
    history.epochs.push_back(stats);
  }
  return history;
}

TrainHistory run_reg_training(ScoreModel& r, ScoreModel& f, const Dataset& ds,
                              const ExpertPanel& panel, const CostModel& cm,
                              const SurrogateParams& params, const PerturbationBall& ball,
                              const AttackPlan& plan, const TrainConfig& cfg,
                              bool adversarial, PassCounter* counter) {
  cfg.validate();
  TrainHistory history;
  AdamOptimizer opt_r(r.param_count(), cfg.learning_rate);
  AdamOptimizer opt_f(f.param_count(), cfg.learning_rate);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (counter) counter->reset();
    Tensor snap_r = r.flat_params();
    Tensor snap_f = f.flat_params();
    std::vector<std::size_t> order = shuffled_train_indices(ds, cfg.seed, epoch);
    double objective_sum = 0.0;
    std::size_t batches = 0;
    bool failed = false;

    for (std::size_t start = 0; start < order.size() && !failed; start += cfg.batch_size) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<std::size_t> batch(order.begin() + start, order.begin() + end);
      Recorder rec_r(r, counter);
      Recorder rec_f(f);
      RegLossSetup setup{ds, panel, cm, params, ball, plan, adversarial};
      ad::Var loss;
      for (std::size_t i : batch) {
        ad::Var term = example_loss_reg(rec_r, rec_f, setup, i, epoch, counter);
        loss = loss.valid() ? ad::add(loss, term) : term;
      }
      loss = ad::scale(loss, 1.0 / static_cast<double>(batch.size()));
      if (cfg.eta > 0 && cfg.regularizer == TrainConfig::Regularizer::l2_params) {
        loss = ad::add(loss, ad::scale(l2_regularizer(rec_r), cfg.eta));
        loss = ad::add(loss, ad::scale(l2_regularizer(rec_f), cfg.eta));
      }

      double value = loss.value().item();
      ad::backward(loss, counter, static_cast<std::int64_t>(batch.size()));
      Tensor grad_r = rec_r.param_grad();
      Tensor grad_f = rec_f.param_grad();
      if (!std::isfinite(value) || !grad_r.all_finite() || !grad_f.all_finite()) {
        r.set_flat_params(snap_r);
        f.set_flat_params(snap_f);
        history.aborted = true;
        history.note = "objective became non-finite at epoch " + std::to_string(epoch);
        failed = true;
        break;
      }
      Tensor pr = r.flat_params();
      opt_r.step(pr, grad_r);
      r.set_flat_params(pr);
      Tensor pf = f.flat_params();
      opt_f.step(pf, grad_f);
      f.set_flat_params(pf);
      objective_sum += value;
      ++batches;
    }
    if (failed) break;

    EpochStats stats;
    stats.epoch = epoch;
    stats.objective = batches > 0 ? objective_sum / static_cast<double>(batches) : 0.0;
    stats.clean_metric = system_rmse_reg(r, f, ds, panel, ds.train_idx);
    if (cfg.track_def_loss) {
      double acc = 0.0;
      for (std::size_t i : ds.train_idx)
        acc += adv_true_def_loss_reg(r, f, ds.row(i), ds.target_row(i),
                                     panel.outputs_for(i), cm, ball, plan);
      stats.def_loss_probe = acc / static_cast<double>(ds.train_idx.size());
    }
    if (counter) {
      stats.forwards = counter->forwards;
      stats.backwards = counter->backwards;
    }
    history.epochs.push_back(stats);
  }
  return history;
}

}  // namespace

TrainHistory train_rerm_c(ScoreModel& h, const Dataset& ds, const ExpertPanel& panel,
                          const CostModel& cm, const SurrogateParams& params,
                          const PerturbationBall& ball, const AttackPlan& plan,
                          const TrainConfig& cfg, PassCounter* counter) {
  if (!ds.is_classification()) throw ConfigError("train_rerm_c: classification dataset required");
  return run_class_training(h, ds, panel, cm, params, ball, plan, cfg, true, counter);
}

TrainHistory train_rerm_r(ScoreModel& r, ScoreModel& f, const Dataset& ds,
                          const ExpertPanel& panel, const CostModel& cm,
                          const SurrogateParams& params, const PerturbationBall& ball,
                          const AttackPlan& plan, const TrainConfig& cfg,
                          PassCounter* counter) {
  if (ds.is_classification()) throw ConfigError("train_rerm_r: regression dataset required");
  return run_reg_training(r, f, ds, panel, cm, params, ball, plan, cfg, true, counter);
}

TrainHistory train_baseline_class(ScoreModel& h, const Dataset& ds, const ExpertPanel& panel,
                                  const CostModel& cm, double u, const TrainConfig& cfg) {
  SurrogateParams params(u, 1.0, 0.0);
  PerturbationBall ball(NormOrder::linf, 0.0);
  AttackPlan plan = AttackPlan::restart_free(0.0, 0);
  return run_class_training(h, ds, panel, cm, params, ball, plan, cfg, false, nullptr);
}

TrainHistory train_baseline_reg(ScoreModel& r, ScoreModel& f, const Dataset& ds,
                                const ExpertPanel& panel, const CostModel& cm, double u,
                                const TrainConfig& cfg) {
  SurrogateParams params(u, 1.0, 0.0);
  PerturbationBall ball(NormOrder::linf, 0.0);
  AttackPlan plan = AttackPlan::restart_free(0.0, 0);
  return run_reg_training(r, f, ds, panel, cm, params, ball, plan, cfg, false, nullptr);
}

AuditResult audit_epoch_cost(const PassCounter& counter, std::size_t n,
                             std::size_t action_count, int steps) {
  AuditResult res;
  res.expected = static_cast<std::int64_t>(n) *
                 (1 + static_cast<std::int64_t>(action_count) * steps);
  res.forwards = counter.forwards;
  res.backwards = counter.backwards;
  res.pass = counter.forwards == res.expected && counter.backwards == res.expected;
  if (!res.pass) {
    std::ostringstream os;
    os << "expected per phase: clean forwards " << n << ", inner-loop forwards "
       << n * action_count * static_cast<std::size_t>(steps) << ", inner-loop backwards "
       << n * action_count * static_cast<std::size_t>(steps) << ", parameter backwards " << n
       << "; observed forwards " << counter.forwards << ", backwards " << counter.backwards;
    res.detail = os.str();
  }
  return res;
}

}  // namespace deferkit
