#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "deferkit/tensor.hpp"

namespace deferkit {

class Dataset;  // data.hpp

enum class BaseLoss { squared, absolute };
enum class ClampPolicy { strict, none };

double base_loss_value(BaseLoss kind, const Tensor& a, const Tensor& b);

// Per-action scale alpha_j and consultation fee beta_j.
//
// Classification actions are indexed 1..K+J: the first K predict a class,
// the rest defer. The shifted cost mu_j unifies both:
//   j <= K:  mu_j = alpha_j * 1{j != y} + beta_j
//   j >  K:  mu_j = alpha_j * 1{m_{j-K} != y} + beta_j
// Regression actions are indexed 1..J+1 with action 1 = trust the predictor:
//   c_1 = alpha_1 * L(f(x), t) + beta_1,   c_j = alpha_j * L(m_{j-1}, t) + beta_j.
class CostModel {
 public:
  CostModel() = default;
  // alphas/betas are per-action, length K+J (classification) or J+1 (regression).
  CostModel(std::vector<double> alphas, std::vector<double> betas,
            BaseLoss base_loss = BaseLoss::squared,
            ClampPolicy clamp = ClampPolicy::strict, std::size_t num_predict_actions = 0);

  // defaults: alpha=1 everywhere, beta=0 for prediction actions, fees for deferrals
  static CostModel classification_default(std::size_t k, std::size_t j,
                                          const std::vector<double>& expert_fees,
                                          ClampPolicy clamp = ClampPolicy::strict);
  static CostModel regression_default(std::size_t j, const std::vector<double>& expert_fees,
                                      BaseLoss base = BaseLoss::squared);

  std::size_t action_count() const { return alphas_.size(); }
  double alpha(std::size_t action) const;  // action in 1..|A|
  double beta(std::size_t action) const;
  BaseLoss base_loss() const { return base_loss_; }
  ClampPolicy clamp_policy() const { return clamp_; }

  // Shifted classification cost mu_j; action, y in 1-based indexing.
  double cost_class(std::size_t action, const std::vector<int>& expert_labels, int y,
                    std::size_t num_classes) const;
  // Regression cost of action j given prediction/expert outputs and target.
  double cost_reg(std::size_t action, const Tensor& f_out,
                  const std::vector<Tensor>& expert_outputs, const Tensor& t) const;

 private:
  std::vector<double> alphas_;
  std::vector<double> betas_;
  BaseLoss base_loss_ = BaseLoss::squared;
  ClampPolicy clamp_ = ClampPolicy::strict;
};

// tau_j = sum_{i != j} costs_i
std::vector<double> tau_weights(const std::vector<double>& costs);

struct ExpertSpec {
  enum class Kind { class_specialist, class_bernoulli, reg_specialist, reg_noisy };
  Kind kind = Kind::class_bernoulli;
  // classification
  std::vector<int> classes;  // assigned classes (1-based); empty = all
  double p = 1.0;            // correct-probability on assigned classes
  // regression
  double sigma = 0.0;      // noise scale (reg_noisy; reg_specialist off-region)
  double sigma_in = 0.0;   // reg_specialist on-region noise
  int feature = 0;         // reg_specialist gating feature index
  double threshold = 0.0;  // on-region: x[feature] >= threshold

  bool is_classification() const {
    return kind == Kind::class_specialist || kind == Kind::class_bernoulli;
  }
};

// Fixed panel of simulated experts with precomputed per-dataset outputs.
// Immutable after sampling; identical seeds reproduce the cache bit-exactly.
class ExpertPanel {
 public:
  ExpertPanel() = default;
  explicit ExpertPanel(std::vector<ExpertSpec> experts) : experts_(std::move(experts)) {}

  std::size_t expert_count() const { return experts_.size(); }
  const std::vector<ExpertSpec>& experts() const { return experts_; }

  void sample_outputs(const Dataset& dataset, std::uint64_t seed);
  bool has_cache() const { return cache_n_ > 0 || experts_.empty(); }

  int label_of(std::size_t example, std::size_t expert) const;
  Tensor output_of(std::size_t example, std::size_t expert) const;
  std::vector<int> labels_for(std::size_t example) const;
  std::vector<Tensor> outputs_for(std::size_t example) const;

  void export_cache_csv(const std::filesystem::path& path,
                        const std::string& header_comment = {}) const;

 private:
  std::vector<ExpertSpec> experts_;
  std::vector<int> label_cache_;     // n x J, classification
  std::vector<double> value_cache_;  // n x J, regression (scalar targets)
  std::size_t cache_n_ = 0;
  bool classification_ = true;
};

}  // namespace deferkit
