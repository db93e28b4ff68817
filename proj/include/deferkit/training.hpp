#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "deferkit/agents.hpp"
#include "deferkit/attacks.hpp"
#include "deferkit/data.hpp"
#include "deferkit/model.hpp"
#include "deferkit/params.hpp"
#include "deferkit/tensor.hpp"

namespace deferkit {

struct TrainConfig {
  enum class Regularizer { l2_params, none };
  enum class Objective { clean_class, clean_reg, rerm_c, rerm_r };

  int epochs = 40;
  std::size_t batch_size = 64;
  double learning_rate = 0.01;
  double eta = 1e-4;
  Regularizer regularizer = Regularizer::l2_params;
  std::uint64_t seed = 0;
  Objective objective = Objective::rerm_c;
  bool track_def_loss = true;  // probe-estimated Def.Loss per epoch (history only)

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double objective = 0.0;
  double clean_metric = 0.0;   // accuracy fraction (classification) or RMSE
  double def_loss_probe = 0.0;
  std::int64_t forwards = 0;   // score-network passes inside the objective path
  std::int64_t backwards = 0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  bool aborted = false;
  std::string note;
};

// Adaptive per-coordinate moment estimation with bias correction.
class AdamOptimizer {
 public:
  AdamOptimizer(std::size_t dim, double learning_rate);
  void step(Tensor& params, const Tensor& grad);

 private:
  Tensor m_;
  Tensor v_;
  std::int64_t t_ = 0;
  double lr_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
};

// Minimizes (1/n) sum smooth_adv_def_class + eta*Omega(h) by mini-batch
// Adam. Inner maximizations run per outcome against current parameters every
// batch. When `counter` is set it tallies h-network passes per epoch; with a
// restart-free center-init plan one epoch costs exactly n(1+|A|T) forwards
// and the same number of backwards.
TrainHistory train_rerm_c(ScoreModel& h, const Dataset& ds, const ExpertPanel& panel,
                          const CostModel& cm, const SurrogateParams& params,
                          const PerturbationBall& ball, const AttackPlan& plan,
                          const TrainConfig& cfg, PassCounter* counter = nullptr);

// Joint minimization over rejector and predictor parameters of the smooth
// regression objective. The counter tallies rejector-network passes.
TrainHistory train_rerm_r(ScoreModel& r, ScoreModel& f, const Dataset& ds,
                          const ExpertPanel& panel, const CostModel& cm,
                          const SurrogateParams& params, const PerturbationBall& ball,
                          const AttackPlan& plan, const TrainConfig& cfg,
                          PassCounter* counter = nullptr);

// Clean ERM without adversarial terms: the gamma=0 collapse of the smooth
// objectives. Serves as the undefended attack target.
TrainHistory train_baseline_class(ScoreModel& h, const Dataset& ds, const ExpertPanel& panel,
                                  const CostModel& cm, double u, const TrainConfig& cfg);
TrainHistory train_baseline_reg(ScoreModel& r, ScoreModel& f, const Dataset& ds,
                                const ExpertPanel& panel, const CostModel& cm, double u,
                                const TrainConfig& cfg);

struct AuditResult {
  bool pass = false;
  std::int64_t expected = 0;
  std::int64_t forwards = 0;
  std::int64_t backwards = 0;
  std::string detail;
};

// Asserts forwards == backwards == n(1+|A|T) for a restart-free center-init
// epoch; on mismatch the detail carries the expected per-phase breakdown.
AuditResult audit_epoch_cost(const PassCounter& counter, std::size_t n,
                             std::size_t action_count, int steps);

// Per-example batch objective used by both trainers; exposed for the
// reduction identity checks.
double batch_objective_class(const ScoreModel& h, const Dataset& ds, const ExpertPanel& panel,
                             const CostModel& cm, const SurrogateParams& params,
                             const PerturbationBall& ball, const AttackPlan& plan,
                             const std::vector<std::size_t>& batch);

}  // namespace deferkit
