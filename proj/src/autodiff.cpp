#include "deferkit/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

#include "deferkit/errors.hpp"

namespace deferkit {

double softplus(double z) {
  if (z > 0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

double psi_u_scalar(double v, double u) {
  if (v < 0) throw std::domain_error("psi_u: argument must be nonnegative");
  if (u == 1.0) return std::log1p(v);
  return std::expm1((1.0 - u) * std::log1p(v)) / (1.0 - u);
}

namespace ad {
namespace {

std::atomic<std::uint64_t> g_order{0};

std::shared_ptr<Node> make_node(Tensor value, std::vector<std::shared_ptr<Node>> parents,
                                std::function<void(Node&)> pull) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->pull = std::move(pull);
  n->order = g_order.fetch_add(1, std::memory_order_relaxed);
  return n;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw ContractError(std::string(op) + ": operand shapes differ");
}

// Psi^u'(e^z) * e^z = exp(z - u*softplus(z))
double d_psi_u_of_exp(double z, double u) { return std::exp(z - u * softplus(z)); }

}  // namespace

Var leaf(Tensor value) { return Var(make_node(std::move(value), {}, nullptr)); }
Var constant(Tensor value) { return leaf(std::move(value)); }

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return Var(make_node(std::move(out), {a.node(), b.node()}, [](Node& n) {
    for (std::size_t i = 0; i < n.adjoint.size(); ++i) {
      n.parents[0]->adjoint[i] += n.adjoint[i];
      n.parents[1]->adjoint[i] += n.adjoint[i];
    }
  }));
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return Var(make_node(std::move(out), {a.node(), b.node()}, [](Node& n) {
    for (std::size_t i = 0; i < n.adjoint.size(); ++i) {
      n.parents[0]->adjoint[i] += n.adjoint[i];
      n.parents[1]->adjoint[i] -= n.adjoint[i];
    }
  }));
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return Var(make_node(std::move(out), {a.node(), b.node()}, [](Node& n) {
    const Tensor& av = n.parents[0]->value;
    const Tensor& bv = n.parents[1]->value;
    for (std::size_t i = 0; i < n.adjoint.size(); ++i) {
      n.parents[0]->adjoint[i] += n.adjoint[i] * bv[i];
      n.parents[1]->adjoint[i] += n.adjoint[i] * av[i];
    }
  }));
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double c) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= c;
  return Var(make_node(std::move(out), {a.node()}, [c](Node& n) {
    for (std::size_t i = 0; i < n.adjoint.size(); ++i)
      n.parents[0]->adjoint[i] += c * n.adjoint[i];
  }));
}

Var add_const(const Var& a, double c) {
  Tensor out = a.value();
  for (double& v : out.data()) v += c;
  return Var(make_node(std::move(out), {a.node()}, [](Node& n) {
    for (std::size_t i = 0; i < n.adjoint.size(); ++i)
      n.parents[0]->adjoint[i] += n.adjoint[i];
  }));
}

Var matvec(const Var& w, const Var& x) {
  const Tensor& wm = w.value();
  const Tensor& xv = x.value();
  if (wm.rank() != 2 || xv.rank() != 1 || wm.cols() != xv.size())
    throw ContractError("matvec: shape mismatch");
  Tensor out({wm.rows()});
  for (std::size_t r = 0; r < wm.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < wm.cols(); ++c) s += wm.at2(r, c) * xv[c];
    out[r] = s;
  }
  return Var(make_node(std::move(out), {w.node(), x.node()}, [](Node& n) {
    const Tensor& wm = n.parents[0]->value;
    const Tensor& xv = n.parents[1]->value;
    Tensor& wadj = n.parents[0]->adjoint;
    Tensor& xadj = n.parents[1]->adjoint;
    for (std::size_t r = 0; r < wm.rows(); ++r) {
      double g = n.adjoint[r];
      for (std::size_t c = 0; c < wm.cols(); ++c) {
        wadj.at2(r, c) += g * xv[c];
        xadj[c] += g * wm.at2(r, c);
      }
    }
  }));
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0 ? v : 0.0;
  return Var(make_node(std::move(out), {a.node()}, [](Node& n) {
    const Tensor& av = n.parents[0]->value;
    for (std::size_t i = 0; i < n.adjoint.size(); ++i)
      if (av[i] > 0) n.parents[0]->adjoint[i] += n.adjoint[i];
  }));
}

Var tanh_op(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::tanh(v);
  return Var(make_node(std::move(out), {a.node()}, [](Node& n) {
    for (std::size_t i = 0; i < n.adjoint.size(); ++i) {
      double t = n.value[i];
      n.parents[0]->adjoint[i] += n.adjoint[i] * (1.0 - t * t);
    }
  }));
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return Var(make_node(Tensor::scalar(s), {a.node()}, [](Node& n) {
    double g = n.adjoint[0];
    for (std::size_t i = 0; i < n.parents[0]->adjoint.size(); ++i)
      n.parents[0]->adjoint[i] += g;
  }));
}

Var dot(const Var& a, const Var& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) s += a.value()[i] * b.value()[i];
  return Var(make_node(Tensor::scalar(s), {a.node(), b.node()}, [](Node& n) {
    double g = n.adjoint[0];
    const Tensor& av = n.parents[0]->value;
    const Tensor& bv = n.parents[1]->value;
    for (std::size_t i = 0; i < av.size(); ++i) {
      n.parents[0]->adjoint[i] += g * bv[i];
      n.parents[1]->adjoint[i] += g * av[i];
    }
  }));
}

Var sum_squares(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v * v;
  return Var(make_node(Tensor::scalar(s), {a.node()}, [](Node& n) {
    double g = n.adjoint[0];
    const Tensor& av = n.parents[0]->value;
    for (std::size_t i = 0; i < av.size(); ++i)
      n.parents[0]->adjoint[i] += 2.0 * g * av[i];
  }));
}

Var sum_abs(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += std::abs(v);
  return Var(make_node(Tensor::scalar(s), {a.node()}, [](Node& n) {
    double g = n.adjoint[0];
    const Tensor& av = n.parents[0]->value;
    for (std::size_t i = 0; i < av.size(); ++i) {
      if (av[i] > 0)
        n.parents[0]->adjoint[i] += g;
      else if (av[i] < 0)
        n.parents[0]->adjoint[i] -= g;
    }
  }));
}

Var norm2(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v * v;
  double nrm = std::sqrt(s);
  return Var(make_node(Tensor::scalar(nrm), {a.node()}, [](Node& n) {
    double nrm = n.value[0];
    if (nrm <= 1e-30) return;  // subgradient 0 at the origin
    double g = n.adjoint[0] / nrm;
    const Tensor& av = n.parents[0]->value;
    for (std::size_t i = 0; i < av.size(); ++i)
      n.parents[0]->adjoint[i] += g * av[i];
  }));
}

Var pick(const Var& v, std::size_t index) {
  if (index >= v.value().size()) throw ContractError("pick: index out of range");
  return Var(make_node(Tensor::scalar(v.value()[index]), {v.node()}, [index](Node& n) {
    n.parents[0]->adjoint[index] += n.adjoint[0];
  }));
}

Var lse_excluding(const Var& v, std::size_t excluded) {
  const Tensor& s = v.value();
  if (s.size() < 2) throw ContractError("lse_excluding: need at least two entries");
  if (excluded >= s.size()) throw ContractError("lse_excluding: index out of range");
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < s.size(); ++k)
    if (k != excluded) mx = std::max(mx, s[k]);
  double acc = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k)
    if (k != excluded) acc += std::exp(s[k] - mx);
  double lse = mx + std::log(acc);
  return Var(make_node(Tensor::scalar(lse), {v.node()}, [excluded](Node& n) {
    double g = n.adjoint[0];
    double lse = n.value[0];
    const Tensor& s = n.parents[0]->value;
    for (std::size_t k = 0; k < s.size(); ++k)
      if (k != excluded) n.parents[0]->adjoint[k] += g * std::exp(s[k] - lse);
  }));
}

Var psi_u_of_exp(const Var& z, double u) {
  double zv = z.value().item();
  double a = softplus(zv);
  double val = (u == 1.0) ? a : std::expm1((1.0 - u) * a) / (1.0 - u);
  return Var(make_node(Tensor::scalar(val), {z.node()}, [u](Node& n) {
    double zv = n.parents[0]->value[0];
    n.parents[0]->adjoint[0] += n.adjoint[0] * d_psi_u_of_exp(zv, u);
  }));
}

Var phi_rho_u(const Var& scores, std::size_t target, double rho, double u) {
  const Tensor& s = scores.value();
  if (target >= s.size()) throw ContractError("phi_rho_u: target out of range");
  if (rho <= 0) throw ContractError("phi_rho_u: rho must be positive");
  double acc = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (k == target) continue;
    double t = 1.0 - (s[target] - s[k]) / rho;
    acc += std::clamp(t, 0.0, 1.0);
  }
  double val = psi_u_scalar(acc, u);
  return Var(make_node(Tensor::scalar(val), {scores.node()}, [target, rho, u](Node& n) {
    const Tensor& s = n.parents[0]->value;
    double acc = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (k == target) continue;
      double t = 1.0 - (s[target] - s[k]) / rho;
      acc += std::clamp(t, 0.0, 1.0);
    }
    // Psi^u'(acc) = (1+acc)^{-u}
    double w = n.adjoint[0] * std::exp(-u * std::log1p(acc));
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (k == target) continue;
      double t = 1.0 - (s[target] - s[k]) / rho;
      if (t > 0.0 && t < 1.0) {
        n.parents[0]->adjoint[k] += w / rho;
        n.parents[0]->adjoint[target] -= w / rho;
      }
    }
  }));
}

Var margins(const Var& scores, std::size_t target) {
  const Tensor& s = scores.value();
  if (target >= s.size()) throw ContractError("margins: target out of range");
  Tensor out({s.size() - 1});
  std::size_t i = 0;
  for (std::size_t k = 0; k < s.size(); ++k)
    if (k != target) out[i++] = s[target] - s[k];
  return Var(make_node(std::move(out), {scores.node()}, [target](Node& n) {
    Tensor& sadj = n.parents[0]->adjoint;
    std::size_t i = 0;
    for (std::size_t k = 0; k < sadj.size(); ++k) {
      if (k == target) continue;
      sadj[target] += n.adjoint[i];
      sadj[k] -= n.adjoint[i];
      ++i;
    }
  }));
}

void backward(const Var& scalar_loss, PassCounter* counter, std::int64_t examples) {
  if (!scalar_loss.valid()) throw ContractError("backward: invalid loss");
  if (scalar_loss.value().size() != 1)
    throw ContractError("backward: loss must be scalar");

  // Collect reachable nodes; creation order is already topological.
  std::vector<Node*> nodes;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{scalar_loss.node().get()};
  seen.insert(stack[0]);
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const auto& p : n->parents)
      if (seen.insert(p.get()).second) stack.push_back(p.get());
  }
  for (Node* n : nodes) {
    n->adjoint = Tensor(n->value.shape(), 0.0);
  }
  scalar_loss.node()->adjoint[0] = 1.0;
  std::sort(nodes.begin(), nodes.end(),
            [](const Node* a, const Node* b) { return a->order > b->order; });
  for (Node* n : nodes)
    if (n->pull) n->pull(*n);
  if (counter) counter->backwards += examples;
}

}  // namespace ad
}  // namespace deferkit
