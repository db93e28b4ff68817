#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "deferkit/tensor.hpp"

namespace deferkit {

enum class Normalize { none, zscore, minmax };

// Per-feature affine record: stored = (raw - offset) * scale.
struct NormRecord {
  Normalize scheme = Normalize::none;
  std::vector<double> offset;
  std::vector<double> scale;

  double apply(double raw, std::size_t feature) const;
  double invert(double stored, std::size_t feature) const;
};

class Dataset {
 public:
  Tensor features;  // n x d, already normalized
  std::vector<int> labels;  // classification, 1-based in 1..K
  Tensor targets;           // regression, n x m
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_idx;
  NormRecord norm;
  std::size_t num_classes = 0;           // 0 for regression
  std::optional<Tensor> truth_w;         // linear-regression generator ground truth

  bool is_classification() const { return num_classes > 0; }
  std::size_t n() const { return features.empty() ? 0 : features.rows(); }
  std::size_t dim() const { return features.empty() ? 0 : features.cols(); }
  std::size_t target_dim() const { return targets.empty() ? 0 : targets.cols(); }

  Tensor row(std::size_t i) const;
  Tensor target_row(std::size_t i) const;
};

// K Gaussian clusters with unit scale, centers `separation` from the origin,
// labels by cluster. Split 80/20 by seeded shuffle.
Dataset gen_blobs(std::size_t k, std::size_t d, std::size_t n, double separation,
                  std::uint64_t seed, Normalize normalize = Normalize::none,
                  double split_ratio = 0.8);

// t = <w*, x> + eps with x ~ N(0, I); w* is recorded for oracle checks.
Dataset gen_linear_reg(std::size_t d, std::size_t n, double noise_sigma,
                       std::uint64_t seed, Normalize normalize = Normalize::none,
                       double split_ratio = 0.8);

// Rectangular numeric CSV with a header row. Normalization statistics are
// computed on the train split only.
Dataset load_csv(const std::filesystem::path& path, const std::string& target_column,
                 Normalize normalize, double split_ratio = 0.8,
                 std::uint64_t split_seed = 0, bool classification = false);

void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path,
                       const std::string& header_comment = {});

}  // namespace deferkit
