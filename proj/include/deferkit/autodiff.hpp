#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "deferkit/tensor.hpp"

namespace deferkit {

// Counts per-example network traversals during instrumented training.
// A forward is one evaluation of a score network on one input; a backward
// sweep counts once per example whose loss terms sit in the swept graph.
struct PassCounter {
  std::int64_t forwards = 0;
  std::int64_t backwards = 0;
  void reset() { forwards = 0; backwards = 0; }
};

namespace ad {

struct Node {
  Tensor value;
  Tensor adjoint;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> pull;  // distributes adjoint to parents
  std::uint64_t order = 0;
};

// Value-semantic handle to a graph node. Graphs are rebuilt per forward
// call; a Var keeps its subgraph alive through shared ownership.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  bool valid() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  const Tensor& grad() const { return node_->adjoint; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var leaf(Tensor value);
Var constant(Tensor value);  // alias of leaf; adjoint is simply never read

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var neg(const Var& a);
Var scale(const Var& a, double c);
Var add_const(const Var& a, double c);
Var matvec(const Var& w, const Var& x);  // w: (r,c), x: (c) -> (r)
Var relu(const Var& a);
Var tanh_op(const Var& a);
Var sum(const Var& a);
Var dot(const Var& a, const Var& b);
Var sum_squares(const Var& a);
Var sum_abs(const Var& a);
Var norm2(const Var& a);  // Euclidean norm; zero subgradient at the origin
Var pick(const Var& v, std::size_t index);

// log sum_{k != excluded} exp(v_k), max-shifted for stability
Var lse_excluding(const Var& v, std::size_t excluded);
// Psi^u(e^z): softplus(z) for u=1, expm1((1-u)·softplus(z))/(1-u) otherwise
Var psi_u_of_exp(const Var& z, double u);
// Psi^u(sum_{k != target} Psi_rho(v_target - v_k)), the rho-margin surrogate
Var phi_rho_u(const Var& scores, std::size_t target, double rho, double u);
// vector of pairwise margins (v_target - v_k) for k != target, ascending k
Var margins(const Var& scores, std::size_t target);

// Zeroes adjoints over the reachable graph, seeds the scalar loss with 1
// and propagates. `examples` scales the counter increment only.
void backward(const Var& scalar_loss, PassCounter* counter = nullptr, std::int64_t examples = 1);

}  // namespace ad

// Scalar transforms shared by graph nodes and plain evaluation.
double softplus(double z);
double psi_u_scalar(double v, double u);  // throws on v < 0

}  // namespace deferkit
