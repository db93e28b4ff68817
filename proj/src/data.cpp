#include "deferkit/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "deferkit/errors.hpp"

namespace deferkit {

namespace {

void split_indices(std::size_t n, double ratio, std::uint64_t seed,
                   std::vector<std::size_t>& train, std::vector<std::size_t>& test) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::size_t cut = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  cut = std::min(cut, n);
  train.assign(idx.begin(), idx.begin() + cut);
  test.assign(idx.begin() + cut, idx.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
}

// Fit offset/scale on the train split, then rewrite features in place.
void apply_normalization(Dataset& ds, Normalize scheme) {
  std::size_t d = ds.dim();
  ds.norm.scheme = scheme;
  ds.norm.offset.assign(d, 0.0);
  ds.norm.scale.assign(d, 1.0);
  if (scheme == Normalize::none || ds.train_idx.empty()) return;
  for (std::size_t c = 0; c < d; ++c) {
    if (scheme == Normalize::zscore) {
      double mean = 0.0;
      for (std::size_t i : ds.train_idx) mean += ds.features.at2(i, c);
      mean /= static_cast<double>(ds.train_idx.size());
      double var = 0.0;
      for (std::size_t i : ds.train_idx) {
        double delta = ds.features.at2(i, c) - mean;
        var += delta * delta;
      }
      var /= static_cast<double>(ds.train_idx.size());
      double sd = std::sqrt(var);
      ds.norm.offset[c] = mean;
      ds.norm.scale[c] = sd > 0 ? 1.0 / sd : 1.0;
    } else {  // minmax
      double lo = std::numeric_limits<double>::infinity();
      double hi = -std::numeric_limits<double>::infinity();
      for (std::size_t i : ds.train_idx) {
        lo = std::min(lo, ds.features.at2(i, c));
        hi = std::max(hi, ds.features.at2(i, c));
      }
      ds.norm.offset[c] = lo;
      ds.norm.scale[c] = hi > lo ? 1.0 / (hi - lo) : 1.0;
    }
  }
  for (std::size_t i = 0; i < ds.n(); ++i)
    for (std::size_t c = 0; c < d; ++c)
      ds.features.at2(i, c) = ds.norm.apply(ds.features.at2(i, c), c);
}

}  // namespace

double NormRecord::apply(double raw, std::size_t feature) const {
  return (raw - offset[feature]) * scale[feature];
}

double NormRecord::invert(double stored, std::size_t feature) const {
  return stored / scale[feature] + offset[feature];
}

Tensor Dataset::row(std::size_t i) const {
  Tensor out({dim()});
  for (std::size_t c = 0; c < dim(); ++c) out[c] = features.at2(i, c);
  return out;
}

Tensor Dataset::target_row(std::size_t i) const {
  Tensor out({target_dim()});
  for (std::size_t c = 0; c < target_dim(); ++c) out[c] = targets.at2(i, c);
  return out;
}

Dataset gen_blobs(std::size_t k, std::size_t d, std::size_t n, double separation,
                  std::uint64_t seed, Normalize normalize, double split_ratio) {
  if (k < 2) throw ConfigError("gen_blobs: K must be at least 2");
  if (d < 1) throw ConfigError("gen_blobs: d must be at least 1");
  if (n == 0) throw ConfigError("gen_blobs: empty dataset requested");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  // Cluster centers: on a circle for d >= 2, on a line for d == 1.
  std::vector<std::vector<double>> centers(k, std::vector<double>(d, 0.0));
  for (std::size_t c = 0; c < k; ++c) {
    if (d == 1) {
      centers[c][0] = separation * (static_cast<double>(c) - (k - 1) / 2.0);
    } else {
      double angle = 2.0 * M_PI * static_cast<double>(c) / static_cast<double>(k);
      centers[c][0] = separation * std::cos(angle);
      centers[c][1] = separation * std::sin(angle);
    }
  }

  Dataset ds;
  ds.features = Tensor({n, d});
  ds.labels.resize(n);
  ds.num_classes = k;
  std::uniform_int_distribution<std::size_t> pick_class(0, k - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = pick_class(rng);
    ds.labels[i] = static_cast<int>(c) + 1;
    for (std::size_t j = 0; j < d; ++j)
      ds.features.at2(i, j) = centers[c][j] + unit(rng);
  }
  split_indices(n, split_ratio, seed, ds.train_idx, ds.test_idx);
  apply_normalization(ds, normalize);
  return ds;
}

Dataset gen_linear_reg(std::size_t d, std::size_t n, double noise_sigma,
                       std::uint64_t seed, Normalize normalize, double split_ratio) {
  if (d < 1) throw ConfigError("gen_linear_reg: d must be at least 1");
  if (n == 0) throw ConfigError("gen_linear_reg: empty dataset requested");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  Tensor w({d});
  for (double& v : w.data()) v = unit(rng);

  Dataset ds;
  ds.features = Tensor({n, d});
  ds.targets = Tensor({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    double t = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double x = unit(rng);
      ds.features.at2(i, j) = x;
      t += w[j] * x;
    }
    if (noise_sigma > 0) t += noise_sigma * unit(rng);
    ds.targets.at2(i, 0) = t;
  }
  ds.truth_w = w;
  split_indices(n, split_ratio, seed, ds.train_idx, ds.test_idx);
  apply_normalization(ds, normalize);
  return ds;
}

Dataset load_csv(const std::filesystem::path& path, const std::string& target_column,
                 Normalize normalize, double split_ratio, std::uint64_t split_seed,
                 bool classification) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open CSV: " + path.string());

  auto split_line = [](const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    return cells;
  };

  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header = split_line(line);
  std::size_t target_col = header.size();
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == target_column) target_col = i;
  if (target_col == header.size())
    throw ParseError(path.string() + ":1: target column '" + target_column + "' not found");

  std::vector<std::vector<double>> rows;
  std::vector<double> targets;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells = split_line(line);
    if (cells.size() != header.size())
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": expected " + std::to_string(header.size()) + " cells, got " +
                       std::to_string(cells.size()));
    std::vector<double> row;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      double v;
      try {
        std::size_t pos = 0;
        v = std::stod(cells[i], &pos);
        if (pos != cells[i].size()) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) +
                         ": non-numeric cell in column '" + header[i] + "'");
      }
      if (i == target_col)
        targets.push_back(v);
      else
        row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(path.string() + ": no data rows");

  Dataset ds;
  std::size_t n = rows.size();
  std::size_t d = rows[0].size();
  ds.features = Tensor({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) ds.features.at2(i, c) = rows[i][c];
  if (classification) {
    ds.labels.resize(n);
    int k = 0;
    for (std::size_t i = 0; i < n; ++i) {
      ds.labels[i] = static_cast<int>(std::llround(targets[i]));
      k = std::max(k, ds.labels[i]);
    }
    ds.num_classes = static_cast<std::size_t>(k);
  } else {
    ds.targets = Tensor({n, 1});
    for (std::size_t i = 0; i < n; ++i) ds.targets.at2(i, 0) = targets[i];
  }
  split_indices(n, split_ratio, split_seed, ds.train_idx, ds.test_idx);
  apply_normalization(ds, normalize);
  return ds;
}

void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path,
                       const std::string& header_comment) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.precision(17);
  if (!header_comment.empty()) out << header_comment << "\n";
  out << "example_id";
  for (std::size_t c = 0; c < ds.dim(); ++c) out << ",x" << c;
  out << (ds.is_classification() ? ",label" : ",target") << ",split\n";
  for (std::size_t i = 0; i < ds.n(); ++i) {
    out << i;
    for (std::size_t c = 0; c < ds.dim(); ++c) out << "," << ds.features.at2(i, c);
    if (ds.is_classification())
      out << "," << ds.labels[i];
    else
      out << "," << ds.targets.at2(i, 0);
    bool in_train = std::binary_search(ds.train_idx.begin(), ds.train_idx.end(), i);
    out << "," << (in_train ? "train" : "test") << "\n";
  }
}

}  // namespace deferkit
