#include <doctest.h>

#include <cmath>
#include <random>

#include "deferkit/errors.hpp"
#include "deferkit/model.hpp"
#include "deferkit/surrogates.hpp"

using namespace deferkit;

namespace {

ScoreModel mlp_2layer(std::uint64_t seed) {
  return ScoreModel::mlp(3, {5}, 4, ScoreModel::Layer::Kind::tanh, seed);
}

Tensor random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> unit(0.0, 1.0);
  Tensor v({n});
  for (double& x : v.data()) x = unit(rng);
  return v;
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("forward: identity affine layer") {
  ScoreModel m = ScoreModel::linear(2, 2, 0);
  Tensor p = Tensor::vector({1, 0, 0, 1, 0, 0});  // W row-major then b
  m.set_flat_params(p);
  Tensor out = forward(m, Tensor::vector({3, 4}));
  CHECK(out[0] == doctest::Approx(3.0));
  CHECK(out[1] == doctest::Approx(4.0));
}

TEST_CASE("forward: constant map") {
  ScoreModel m = ScoreModel::linear(2, 1, 0);
  m.set_flat_params(Tensor::vector({0, 0, 5}));
  CHECK(forward(m, Tensor::vector({-7, 11}))[0] == doctest::Approx(5.0));
  CHECK(forward(m, Tensor::vector({0.3, 0.4}))[0] == doctest::Approx(5.0));
}

TEST_CASE("forward: 2-layer MLP matches hand composition") {
  ScoreModel m = mlp_2layer(42);
  Tensor x = Tensor::vector({0.5, -1.0, 2.0});
  // compose by hand from the stored layer tensors
  const auto& layers = m.layers();
  Tensor hiddenv({layers[0].w.rows()});
  for (std::size_t r = 0; r < layers[0].w.rows(); ++r) {
    double s = layers[0].b[r];
    for (std::size_t c = 0; c < 3; ++c) s += layers[0].w.at2(r, c) * x[c];
    hiddenv[r] = std::tanh(s);
  }
  Tensor outv({layers[2].w.rows()});
  for (std::size_t r = 0; r < layers[2].w.rows(); ++r) {
    double s = layers[2].b[r];
    for (std::size_t c = 0; c < hiddenv.size(); ++c) s += layers[2].w.at2(r, c) * hiddenv[c];
    outv[r] = s;
  }
  Tensor got = forward(m, x);
  for (std::size_t i = 0; i < outv.size(); ++i) CHECK(got[i] == doctest::Approx(outv[i]));
}

TEST_CASE("forward: dimension mismatch rejected") {
  ScoreModel m = ScoreModel::linear(2, 2, 0);
  CHECK_THROWS_AS(forward(m, Tensor::vector({1, 2, 3})), ContractError);
}

TEST_CASE("grad_wrt_params: quadratic derivative") {
  // loss = 0.5 * (W x)^2 with W=[[1]], x=[2]  ->  dW = 4 (db = Wx * 1 = 2)
  ScoreModel m = ScoreModel::linear(1, 1, 0);
  m.set_flat_params(Tensor::vector({1.0, 0.0}));
  Recorder rec(m);
  Recorded r = rec.record(Tensor::vector({2.0}));
  ad::Var loss = ad::scale(ad::sum_squares(r.scores), 0.5);
  Tensor g = grad_wrt_params(loss, rec);
  CHECK(g[0] == doctest::Approx(4.0));
  CHECK(g[1] == doctest::Approx(2.0));
}

TEST_CASE("grad_wrt_params: unused parameter block is zero") {
  ScoreModel m = mlp_2layer(1);
  Recorder rec(m);
  Recorded r = rec.record(Tensor::vector({1.0, 2.0, 3.0}));
  // loss reads only output coordinate 0; last-layer rows 1..3 get zero grads
  ad::Var loss = ad::pick(r.scores, 0);
  Tensor g = grad_wrt_params(loss, rec);
  // locate the last affine layer block: first block is W(5x3)+b(5) = 20 entries
  std::size_t offset = 20;
  const auto& lw = m.layers()[2].w;  // 4x5
  for (std::size_t row = 1; row < 4; ++row)
    for (std::size_t col = 0; col < 5; ++col)
      CHECK(g[offset + row * lw.cols() + col] == 0.0);
}

TEST_CASE("grad_wrt_params: non-scalar loss rejected") {
  ScoreModel m = ScoreModel::linear(2, 2, 0);
  Recorder rec(m);
  Recorded r = rec.record(Tensor::vector({1.0, 1.0}));
  CHECK_THROWS_AS(grad_wrt_params(r.scores, rec), ContractError);
}

TEST_CASE("grad_wrt_input: linear functional and squared norm") {
  ad::Var x = ad::leaf(Tensor::vector({1.0, 1.0, 1.0}));
  ad::Var loss = ad::dot(ad::constant(Tensor::vector({1, 2, 3})), x);
  ad::backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(1.0));
  CHECK(x.grad()[1] == doctest::Approx(2.0));
  CHECK(x.grad()[2] == doctest::Approx(3.0));

  ad::Var y = ad::leaf(Tensor::vector({1.0, -1.0}));
  ad::backward(ad::sum_squares(y));
  CHECK(y.grad()[0] == doctest::Approx(2.0));
  CHECK(y.grad()[1] == doctest::Approx(-2.0));
}

TEST_CASE("grad agreement with central finite differences on random MLPs") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    ScoreModel m = mlp_2layer(rng());
    Tensor x = random_vec(3, rng);
    // logistic-type loss through the network
    auto fn = [&](const ad::Var& in) {
      Recorder rec(m);
      (void)rec;
      // rebuild the network on the graph input
      ad::Var cur = in;
      std::size_t li = 0;
      std::vector<ad::Var> leaves;
      for (const auto& l : m.layers()) {
        if (l.kind == ScoreModel::Layer::Kind::affine) {
          ad::Var w = ad::constant(l.w);
          ad::Var b = ad::constant(l.b);
          cur = ad::add(ad::matvec(w, cur), b);
          ++li;
        } else if (l.kind == ScoreModel::Layer::Kind::tanh) {
          cur = ad::tanh_op(cur);
        } else {
          cur = ad::relu(cur);
        }
      }
      return phi_cls_u_var(cur, 1, 1.0);
    };
    CHECK(finite_diff_check(fn, x, 1e-5) < 1e-4);
  }
}

TEST_CASE("100 random parameter-gradient checks against finite differences") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    ScoreModel m = mlp_2layer(rng());
    Tensor x = random_vec(3, rng);
    std::size_t target = rng() % 4;

    Recorder rec(m);
    Recorded r = rec.record(x);
    ad::Var loss = phi_cls_u_var(r.scores, target, 1.0);
    ad::backward(loss);
    Tensor analytic = rec.param_grad();

    Tensor params = m.flat_params();
    double step = 1e-5;
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      ScoreModel probe = m;
      Tensor p = params;
      p[i] += step;
      probe.set_flat_params(p);
      double hi = phi_cls_u(probe(x), target + 1, 1.0);
      p[i] -= 2 * step;
      probe.set_flat_params(p);
      double lo = phi_cls_u(probe(x), target + 1, 1.0);
      double numeric = (hi - lo) / (2 * step);
      worst = std::max(worst,
                       std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("finite_diff_check: exact for quadratics, zero for constants") {
  auto quad = [](const ad::Var& x) { return ad::sum_squares(x); };
  CHECK(finite_diff_check(quad, Tensor::vector({0.3, -1.7, 2.0}), 1e-5) < 1e-6);

  auto constant_fn = [](const ad::Var& x) { return ad::scale(ad::sum(ad::scale(x, 0.0)), 1.0); };
  CHECK(finite_diff_check(constant_fn, Tensor::vector({1.0, 2.0}), 1e-5) == 0.0);
}

TEST_CASE("finite_diff_check: surrogate deferral loss at random scores") {
  std::mt19937_64 rng(3);
  ScoreModel m = mlp_2layer(5);
  CostModel cm = CostModel::classification_default(2, 2, {0.05, 0.1}, ClampPolicy::none);
  std::vector<int> experts{1, 2};
  Tensor x = random_vec(3, rng);
  auto fn = [&](const ad::Var& in) {
    ad::Var cur = in;
    for (const auto& l : m.layers()) {
      if (l.kind == ScoreModel::Layer::Kind::affine)
        cur = ad::add(ad::matvec(ad::constant(l.w), cur), ad::constant(l.b));
      else if (l.kind == ScoreModel::Layer::Kind::tanh)
        cur = ad::tanh_op(cur);
      else
        cur = ad::relu(cur);
    }
    return surrogate_def_class_var(cur, 1, experts, cm, 1.0, 2);
  };
  CHECK(finite_diff_check(fn, x, 1e-5) < 1e-4);
}

TEST_CASE("finite_diff_check: step must be positive") {
  auto quad = [](const ad::Var& x) { return ad::sum_squares(x); };
  CHECK_THROWS_AS(finite_diff_check(quad, Tensor::vector({1.0}), 0.0), ContractError);
}

TEST_CASE("backward leaves forward values unchanged") {
  ScoreModel m = mlp_2layer(9);
  Recorder rec(m);
  Recorded r = rec.record(Tensor::vector({0.1, 0.2, 0.3}));
  Tensor before = r.scores.value();
  ad::backward(ad::sum_squares(r.scores));
  CHECK(r.scores.value() == before);
  ad::backward(ad::pick(r.scores, 2));
  CHECK(r.scores.value() == before);
}

TEST_CASE("parameter order is stable across serialization round trips") {
  ScoreModel m = mlp_2layer(123);
  Tensor x = Tensor::vector({0.25, -0.5, 1.5});
  Tensor before = m(x);
  ScoreModel restored = ScoreModel::from_json_string(m.to_json_string());
  Tensor after = restored(x);
  REQUIRE(after.size() == before.size());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i] == before[i]);  // bit-exact
  CHECK(restored.flat_params() == m.flat_params());
  CHECK(restored.param_hash() == m.param_hash());
}

TEST_CASE("checkpoint version field is enforced") {
  ScoreModel m = ScoreModel::linear(2, 2, 0);
  std::string doc = m.to_json_string();
  std::string bad = doc;
  bad.replace(bad.find("deferkit-model-v1"), 17, "deferkit-model-v9");
  CHECK_THROWS_AS(ScoreModel::from_json_string(bad), ParseError);
}

}  // TEST_SUITE
