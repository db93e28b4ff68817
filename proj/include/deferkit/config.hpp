#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "deferkit/agents.hpp"
#include "deferkit/attacks.hpp"
#include "deferkit/data.hpp"
#include "deferkit/evaluation.hpp"
#include "deferkit/params.hpp"
#include "deferkit/training.hpp"

namespace deferkit {

// Single experiment description parsed from one JSON document. Every command
// derives its inputs deterministically from here, so reruns with the same
// config and seed reproduce outputs byte for byte.
struct ExperimentConfig {
  std::string task = "classification";
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  struct DataBlock {
    std::string generator = "blobs";  // blobs | linreg | csv
    std::size_t num_classes = 3;
    std::size_t dim = 2;
    std::size_t n = 900;
    double separation = 3.0;
    double noise_sigma = 0.1;
    std::string path;
    std::string target_column;
    std::string normalize = "none";
    double split_ratio = 0.8;
  } data;

  std::vector<ExpertSpec> experts;
  std::uint64_t panel_seed = 1;

  struct CostBlock {
    std::optional<std::vector<double>> alphas;  // default: all ones
    std::vector<double> betas;                  // per expert fee
    std::string base_loss = "squared";
    std::string clamp_policy = "strict";
  } costs;

  struct LossBlock {
    double u = 1.0;
    double rho = 1.0;
    std::optional<double> kappa;  // default: sqrt(|A|-1)/rho
    double gamma = 0.1;
    std::string norm_p = "inf";
  } loss;

  struct AttackBlock {
    int steps = 10;
    std::optional<double> step_size;  // default 2.5*gamma/steps
    std::string init = "center";
    int restarts = 1;
    std::uint64_t seed = 7;
    std::optional<double> box_lo;
    std::optional<double> box_hi;
  } attack;

  struct TrainBlock {
    int epochs = 30;
    std::size_t batch_size = 64;
    double learning_rate = 0.01;
    double eta = 1e-4;
    std::string regularizer = "l2_params";
    std::string objective = "rerm_c";
    std::vector<std::size_t> hidden{16};
    std::vector<std::size_t> f_hidden;  // regression predictor; empty = linear
    bool track_def_loss = false;
  } train;

  struct EvalBlock {
    std::vector<std::string> modes{"clean", "untargeted", "targeted"};
    std::size_t nu = 0;  // 0 = last expert action
    std::optional<double> gamma;
  } eval;

  static ExperimentConfig from_json_string(const std::string& text);
  static ExperimentConfig load(const std::string& path_or_preset,
                               const std::vector<std::string>& overrides);
  std::string to_json_string() const;
  std::string hash() const;

  // derived builders
  std::size_t num_experts() const { return experts.size(); }
  ActionSpace action_space() const;
  Dataset build_dataset() const;
  ExpertPanel build_panel(const Dataset& ds) const;
  CostModel build_cost_model() const;
  SurrogateParams build_params() const;
  PerturbationBall build_ball(std::optional<double> gamma_override = {}) const;
  AttackPlan build_plan() const;
  TrainConfig build_train_config() const;
  std::vector<AttackMode> eval_modes() const;
};

// Built-in experiment presets: "blobs-class" and "linreg-defer".
std::vector<std::string> preset_names();
std::string preset_json(const std::string& name);

}  // namespace deferkit
