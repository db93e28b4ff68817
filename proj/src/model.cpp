#include "deferkit/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "deferkit/errors.hpp"

namespace deferkit {

using nlohmann::json;

namespace {

Tensor init_weight(std::size_t out, std::size_t in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
  Tensor w({out, in});
  for (double& v : w.data()) v = dist(rng);
  return w;
}

const char* kind_name(ScoreModel::Layer::Kind k) {
  switch (k) {
    case ScoreModel::Layer::Kind::affine: return "affine";
    case ScoreModel::Layer::Kind::relu: return "relu";
    case ScoreModel::Layer::Kind::tanh: return "tanh";
  }
  return "affine";
}

ScoreModel::Layer::Kind kind_from_name(const std::string& s) {
  if (s == "affine") return ScoreModel::Layer::Kind::affine;
  if (s == "relu") return ScoreModel::Layer::Kind::relu;
  if (s == "tanh") return ScoreModel::Layer::Kind::tanh;
  throw ParseError("unknown layer kind: " + s);
}

}  // namespace

ScoreModel ScoreModel::linear(std::size_t in, std::size_t out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ScoreModel m;
  m.input_dim_ = in;
  m.output_dim_ = out;
  Layer l;
  l.kind = Layer::Kind::affine;
  l.w = init_weight(out, in, rng);
  l.b = Tensor({out});
  m.layers_.push_back(std::move(l));
  return m;
}

ScoreModel ScoreModel::mlp(std::size_t in, const std::vector<std::size_t>& hidden,
                           std::size_t out, Layer::Kind activation, std::uint64_t seed) {
  if (activation == Layer::Kind::affine)
    throw ContractError("mlp: activation must be relu or tanh");
  std::mt19937_64 rng(seed);
  ScoreModel m;
  m.input_dim_ = in;
  m.output_dim_ = out;
  std::size_t prev = in;
  for (std::size_t h : hidden) {
    Layer l;
    l.kind = Layer::Kind::affine;
    l.w = init_weight(h, prev, rng);
    l.b = Tensor({h});
    m.layers_.push_back(std::move(l));
    Layer act;
    act.kind = activation;
    m.layers_.push_back(std::move(act));
    prev = h;
  }
  Layer last;
  last.kind = Layer::Kind::affine;
  last.w = init_weight(out, prev, rng);
  last.b = Tensor({out});
  m.layers_.push_back(std::move(last));
  return m;
}

ScoreModel ScoreModel::constant_scores(std::size_t in, const Tensor& bias) {
  ScoreModel m;
  m.input_dim_ = in;
  m.output_dim_ = bias.size();
  Layer l;
  l.kind = Layer::Kind::affine;
  l.w = Tensor({bias.size(), in});
  l.b = bias;
  m.layers_.push_back(std::move(l));
  return m;
}

Tensor ScoreModel::operator()(const Tensor& x) const {
  if (x.size() != input_dim_ || x.rank() != 1)
    throw ContractError("ScoreModel: input length does not match input_dim");
  Tensor cur = x;
  for (const Layer& l : layers_) {
    switch (l.kind) {
      case Layer::Kind::affine: {
        Tensor next({l.w.rows()});
        for (std::size_t r = 0; r < l.w.rows(); ++r) {
          double s = l.b[r];
          for (std::size_t c = 0; c < l.w.cols(); ++c) s += l.w.at2(r, c) * cur[c];
          next[r] = s;
        }
        cur = std::move(next);
        break;
      }
      case Layer::Kind::relu:
        for (double& v : cur.data()) v = v > 0 ? v : 0.0;
        break;
      case Layer::Kind::tanh:
        for (double& v : cur.data()) v = std::tanh(v);
        break;
    }
  }
  return cur;
}

std::size_t ScoreModel::param_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers_)
    if (l.kind == Layer::Kind::affine) n += l.w.size() + l.b.size();
  return n;
}

Tensor ScoreModel::flat_params() const {
  Tensor out({param_count()});
  std::size_t i = 0;
  for (const Layer& l : layers_) {
    if (l.kind != Layer::Kind::affine) continue;
    for (double v : l.w.data()) out[i++] = v;
    for (double v : l.b.data()) out[i++] = v;
  }
  return out;
}

void ScoreModel::set_flat_params(const Tensor& params) {
  if (params.size() != param_count())
    throw ContractError("set_flat_params: length mismatch");
  std::size_t i = 0;
  for (Layer& l : layers_) {
    if (l.kind != Layer::Kind::affine) continue;
    for (double& v : l.w.data()) v = params[i++];
    for (double& v : l.b.data()) v = params[i++];
  }
}

std::uint64_t ScoreModel::param_hash() const {
  // FNV-1a over the raw parameter bytes
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](double d) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(d));
    std::memcpy(&bits, &d, sizeof(bits));
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  };
  for (const Layer& l : layers_) {
    if (l.kind != Layer::Kind::affine) continue;
    for (double v : l.w.data()) mix(v);
    for (double v : l.b.data()) mix(v);
  }
  return h;
}

std::string ScoreModel::to_json_string() const {
  json doc;
  doc["version"] = kModelFormatVersion;
  doc["input_dim"] = input_dim_;
  doc["output_dim"] = output_dim_;
  json layers = json::array();
  for (const Layer& l : layers_) {
    json jl;
    jl["kind"] = kind_name(l.kind);
    if (l.kind == Layer::Kind::affine) {
      jl["out"] = l.w.rows();
      jl["in"] = l.w.cols();
    }
    layers.push_back(jl);
  }
  doc["layers"] = layers;
  doc["params"] = flat_params().data();
  return doc.dump(2);
}

ScoreModel ScoreModel::from_json_string(const std::string& text) {
  json doc = json::parse(text);
  if (doc.value("version", "") != kModelFormatVersion)
    throw ParseError("checkpoint version is not " + std::string(kModelFormatVersion));
  ScoreModel m;
  m.input_dim_ = doc.at("input_dim").get<std::size_t>();
  m.output_dim_ = doc.at("output_dim").get<std::size_t>();
  for (const json& jl : doc.at("layers")) {
    Layer l;
    l.kind = kind_from_name(jl.at("kind").get<std::string>());
    if (l.kind == Layer::Kind::affine) {
      std::size_t out = jl.at("out").get<std::size_t>();
      std::size_t in = jl.at("in").get<std::size_t>();
      l.w = Tensor({out, in});
      l.b = Tensor({out});
    }
    m.layers_.push_back(std::move(l));
  }
  auto params = doc.at("params").get<std::vector<double>>();
  m.set_flat_params(Tensor::vector(std::move(params)));
  return m;
}

void ScoreModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << to_json_string() << "\n";
}

ScoreModel ScoreModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_string(ss.str());
}

Recorder::Recorder(const ScoreModel& model, PassCounter* counter)
    : model_(&model), counter_(counter) {
  for (const auto& l : model.layers_) {
    if (l.kind != ScoreModel::Layer::Kind::affine) continue;
    param_leaves_.push_back(ad::leaf(l.w));
    param_leaves_.push_back(ad::leaf(l.b));
    param_count_ += l.w.size() + l.b.size();
  }
}

Recorded Recorder::record(const Tensor& x) {
  if (x.size() != model_->input_dim_ || x.rank() != 1)
    throw ContractError("Recorder::record: input length does not match input_dim");
  Recorded rec;
  rec.input = ad::leaf(x);
  ad::Var cur = rec.input;
  std::size_t leaf_i = 0;
  for (const auto& l : model_->layers_) {
    switch (l.kind) {
      case ScoreModel::Layer::Kind::affine: {
        ad::Var w = param_leaves_[leaf_i++];
        ad::Var b = param_leaves_[leaf_i++];
        cur = ad::add(ad::matvec(w, cur), b);
        break;
      }
      case ScoreModel::Layer::Kind::relu:
        cur = ad::relu(cur);
        break;
      case ScoreModel::Layer::Kind::tanh:
        cur = ad::tanh_op(cur);
        break;
    }
  }
  rec.scores = cur;
  if (counter_) counter_->forwards += 1;
  return rec;
}

Tensor Recorder::param_grad() const {
  Tensor out({param_count_});
  std::size_t i = 0;
  for (const ad::Var& leaf : param_leaves_) {
    const Tensor& g = leaf.grad();
    if (g.size() != leaf.value().size())
      throw ContractError("param_grad: run backward before reading gradients");
    for (double v : g.data()) out[i++] = v;
  }
  return out;
}

Tensor forward(const ScoreModel& model, const Tensor& x) { return model(x); }

Tensor grad_wrt_params(const ad::Var& loss, Recorder& recorder) {
  if (loss.value().size() != 1) throw ContractError("grad_wrt_params: loss must be scalar");
  ad::backward(loss);
  return recorder.param_grad();
}

Tensor grad_wrt_input(const ad::Var& loss, const Recorded& recorded) {
  if (loss.value().size() != 1) throw ContractError("grad_wrt_input: loss must be scalar");
  ad::backward(loss);
  return recorded.input.grad();
}

double finite_diff_check(const std::function<ad::Var(const ad::Var&)>& fn,
                         const Tensor& point, double step) {
  if (step <= 0) throw ContractError("finite_diff_check: step must be positive");
  ad::Var x = ad::leaf(point);
  ad::Var loss = fn(x);
  if (loss.value().size() != 1)
    throw ContractError("finite_diff_check: fn must produce a scalar");
  ad::backward(loss);
  Tensor analytic = x.grad();

  double worst = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    Tensor hi = point, lo = point;
    hi[i] += step;
    lo[i] -= step;
    double fhi = fn(ad::leaf(hi)).value().item();
    double flo = fn(ad::leaf(lo)).value().item();
    if (!std::isfinite(fhi) || !std::isfinite(flo))
      throw NumericError("finite_diff_check: non-finite evaluation at coordinate " +
                         std::to_string(i));
    double numeric = (fhi - flo) / (2.0 * step);
    double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace deferkit
