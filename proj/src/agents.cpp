#include "deferkit/agents.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "deferkit/data.hpp"
#include "deferkit/errors.hpp"

namespace deferkit {

double base_loss_value(BaseLoss kind, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ContractError("base_loss_value: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    acc += kind == BaseLoss::squared ? d * d : std::abs(d);
  }
  return acc;
}

CostModel::CostModel(std::vector<double> alphas, std::vector<double> betas,
                     BaseLoss base_loss, ClampPolicy clamp, std::size_t num_predict_actions)
    : alphas_(std::move(alphas)), betas_(std::move(betas)), base_loss_(base_loss),
      clamp_(clamp) {
  if (alphas_.size() != betas_.size())
    throw ConfigError("CostModel: alphas and betas must have equal length");
  for (std::size_t i = 0; i < alphas_.size(); ++i) {
    if (alphas_[i] < 0) throw ConfigError("CostModel: alpha must be nonnegative");
    if (betas_[i] < 0) throw ConfigError("CostModel: beta must be nonnegative");
  }
  if (clamp_ == ClampPolicy::strict) {
    // Deferral costs must stay in [0,1]; reject rather than clamp silently.
    for (std::size_t i = num_predict_actions; i < alphas_.size(); ++i) {
      if (alphas_[i] + betas_[i] > 1.0 + 1e-12)
        throw ConfigError("CostModel: alpha+beta > 1 for action " + std::to_string(i + 1) +
                          " violates the strict clamp policy");
    }
  }
}

CostModel CostModel::classification_default(std::size_t k, std::size_t j,
                                            const std::vector<double>& expert_fees,
                                            ClampPolicy clamp) {
  if (expert_fees.size() != j)
    throw ConfigError("classification_default: one fee per expert required");
  std::vector<double> alphas(k + j, 1.0);
  std::vector<double> betas(k, 0.0);
  betas.insert(betas.end(), expert_fees.begin(), expert_fees.end());
  return CostModel(std::move(alphas), std::move(betas), BaseLoss::squared, clamp, k);
}

CostModel CostModel::regression_default(std::size_t j, const std::vector<double>& expert_fees,
                                        BaseLoss base) {
  if (expert_fees.size() != j)
    throw ConfigError("regression_default: one fee per expert required");
  std::vector<double> alphas(j + 1, 1.0);
  std::vector<double> betas{0.0};
  betas.insert(betas.end(), expert_fees.begin(), expert_fees.end());
  // Regression costs are unbounded in the base loss; the clamp does not apply.
  return CostModel(std::move(alphas), std::move(betas), base, ClampPolicy::none, 1);
}

double CostModel::alpha(std::size_t action) const {
  if (action < 1 || action > alphas_.size()) throw ContractError("alpha: action out of range");
  return alphas_[action - 1];
}

double CostModel::beta(std::size_t action) const {
  if (action < 1 || action > betas_.size()) throw ContractError("beta: action out of range");
  return betas_[action - 1];
}

double CostModel::cost_class(std::size_t action, const std::vector<int>& expert_labels,
                             int y, std::size_t num_classes) const {
  if (action < 1 || action > alphas_.size())
    throw ContractError("cost_class: action out of range");
  if (action <= num_classes) {
    bool miss = static_cast<int>(action) != y;
    return alphas_[action - 1] * (miss ? 1.0 : 0.0) + betas_[action - 1];
  }
  std::size_t expert = action - num_classes - 1;
  if (expert >= expert_labels.size())
    throw ContractError("cost_class: expert index out of range");
  bool miss = expert_labels[expert] != y;
  return alphas_[action - 1] * (miss ? 1.0 : 0.0) + betas_[action - 1];
}

double CostModel::cost_reg(std::size_t action, const Tensor& f_out,
                           const std::vector<Tensor>& expert_outputs, const Tensor& t) const {
  if (action < 1 || action > alphas_.size())
    throw ContractError("cost_reg: action out of range");
  const Tensor& pred = action == 1 ? f_out : expert_outputs.at(action - 2);
  return alphas_[action - 1] * base_loss_value(base_loss_, pred, t) + betas_[action - 1];
}

std::vector<double> tau_weights(const std::vector<double>& costs) {
  double total = 0.0;
  for (double c : costs) total += c;
  std::vector<double> tau(costs.size());
  for (std::size_t i = 0; i < costs.size(); ++i) tau[i] = total - costs[i];
  return tau;
}

void ExpertPanel::sample_outputs(const Dataset& dataset, std::uint64_t seed) {
  std::size_t n = dataset.n();
  std::size_t j = experts_.size();
  if (n == 0) throw ConfigError("sample_expert_outputs: dataset is empty");
  if (j == 0) {
    cache_n_ = n;
    classification_ = dataset.is_classification();
    return;
  }

  bool class_task = dataset.is_classification();
  for (const ExpertSpec& e : experts_) {
    if (e.is_classification() != class_task)
      throw ConfigError("expert kind incompatible with the dataset task");
  }
  if (!class_task && dataset.target_dim() != 1)
    throw ConfigError("regression expert panels support scalar targets only");

  classification_ = class_task;
  cache_n_ = n;
  label_cache_.assign(class_task ? n * j : 0, 0);
  value_cache_.assign(class_task ? 0 : n * j, 0.0);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (std::size_t e = 0; e < j; ++e) {
    const ExpertSpec& spec = experts_[e];
    for (std::size_t i = 0; i < n; ++i) {
      if (class_task) {
        int y = dataset.labels[i];
        bool assigned = spec.kind == ExpertSpec::Kind::class_bernoulli ||
                        spec.classes.empty() ||
                        std::find(spec.classes.begin(), spec.classes.end(), y) !=
                            spec.classes.end();
        int out;
        if (assigned && coin(rng) < spec.p) {
          out = y;
        } else {
          std::uniform_int_distribution<int> pick(1, static_cast<int>(dataset.num_classes));
          out = pick(rng);
        }
        label_cache_[i * j + e] = out;
      } else {
        double t = dataset.targets.at2(i, 0);
        double sd = spec.sigma;
        if (spec.kind == ExpertSpec::Kind::reg_specialist) {
          bool on_region = dataset.features.at2(i, static_cast<std::size_t>(spec.feature)) >=
                           spec.threshold;
          sd = on_region ? spec.sigma_in : spec.sigma;
        }
        std::normal_distribution<double> noise(0.0, 1.0);
        double draw = noise(rng);  // always consume one draw to keep streams aligned
        value_cache_[i * j + e] = t + (sd > 0 ? sd * draw : 0.0);
      }
    }
  }
}

int ExpertPanel::label_of(std::size_t example, std::size_t expert) const {
  if (!classification_) throw ContractError("label_of: regression panel");
  return label_cache_.at(example * experts_.size() + expert);
}

Tensor ExpertPanel::output_of(std::size_t example, std::size_t expert) const {
  if (classification_) throw ContractError("output_of: classification panel");
  return Tensor::scalar(value_cache_.at(example * experts_.size() + expert));
}

std::vector<int> ExpertPanel::labels_for(std::size_t example) const {
  std::vector<int> out(experts_.size());
  for (std::size_t e = 0; e < experts_.size(); ++e) out[e] = label_of(example, e);
  return out;
}

std::vector<Tensor> ExpertPanel::outputs_for(std::size_t example) const {
  std::vector<Tensor> out;
  out.reserve(experts_.size());
  for (std::size_t e = 0; e < experts_.size(); ++e) out.push_back(output_of(example, e));
  return out;
}

void ExpertPanel::export_cache_csv(const std::filesystem::path& path,
                                   const std::string& header_comment) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.precision(17);
  if (!header_comment.empty()) out << header_comment << "\n";
  out << "example_id,expert_id,output\n";
  for (std::size_t i = 0; i < cache_n_; ++i)
    for (std::size_t e = 0; e < experts_.size(); ++e) {
      out << i << "," << (e + 1) << ",";
      if (classification_)
        out << label_cache_[i * experts_.size() + e];
      else
        out << value_cache_[i * experts_.size() + e];
      out << "\n";
    }
}

}  // namespace deferkit
