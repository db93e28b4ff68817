#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "deferkit/autodiff.hpp"
#include "deferkit/tensor.hpp"

namespace deferkit {

inline constexpr const char* kModelFormatVersion = "deferkit-model-v1";

// Affine + nonlinearity blocks mapping R^input_dim -> R^output_dim.
// Parameters enumerate in a stable order: per layer, W row-major then b.
class ScoreModel {
 public:
  struct Layer {
    enum class Kind { affine, relu, tanh };
    Kind kind = Kind::affine;
    Tensor w;  // (out, in), affine only
    Tensor b;  // (out), affine only
  };

  ScoreModel() = default;

  static ScoreModel linear(std::size_t in, std::size_t out, std::uint64_t seed);
  // hidden layers with the given activation between affine blocks, none on the last
  static ScoreModel mlp(std::size_t in, const std::vector<std::size_t>& hidden,
                        std::size_t out, Layer::Kind activation, std::uint64_t seed);
  // all-zero weights, fixed bias vector: decides the same action everywhere
  static ScoreModel constant_scores(std::size_t in, const Tensor& bias);

  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return output_dim_; }
  const std::vector<Layer>& layers() const { return layers_; }

  // plain forward, no graph
  Tensor operator()(const Tensor& x) const;

  std::size_t param_count() const;
  Tensor flat_params() const;
  void set_flat_params(const Tensor& params);
  std::uint64_t param_hash() const;

  std::string to_json_string() const;
  static ScoreModel from_json_string(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static ScoreModel load(const std::filesystem::path& path);

 private:
  std::vector<Layer> layers_;
  std::size_t input_dim_ = 0;
  std::size_t output_dim_ = 0;

  friend class Recorder;
};

struct Recorded {
  ad::Var input;
  ad::Var scores;
};

// Graph-building forward passes over a parameter snapshot. All Recorded
// evaluations share the same parameter leaves, so one backward sweep
// accumulates parameter gradients across every recorded input.
class Recorder {
 public:
  explicit Recorder(const ScoreModel& model, PassCounter* counter = nullptr);

  Recorded record(const Tensor& x);

  const std::vector<ad::Var>& param_leaves() const { return param_leaves_; }
  Tensor param_grad() const;  // flat, stable order; valid after backward
  std::size_t param_count() const { return param_count_; }

 private:
  const ScoreModel* model_;
  PassCounter* counter_;
  std::vector<ad::Var> param_leaves_;  // per affine layer: W leaf, b leaf
  std::size_t param_count_ = 0;
};

// Spec-level entry points.
Tensor forward(const ScoreModel& model, const Tensor& x);
Tensor grad_wrt_params(const ad::Var& loss, Recorder& recorder);
Tensor grad_wrt_input(const ad::Var& loss, const Recorded& recorded);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// `fn` must build a scalar graph from the input leaf.
double finite_diff_check(const std::function<ad::Var(const ad::Var&)>& fn,
                         const Tensor& point, double step);

}  // namespace deferkit
