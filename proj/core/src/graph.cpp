// SPDX-License-Identifier: Apache-2.0
#include "mcmil/diff/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mcmil/error.hpp"

namespace mcmil::diff {

Graph::Graph(GraphOptions options) : options_(options) {}

const Graph::Node& Graph::node(Var v) const {
  if (v.id >= nodes_.size()) throw ShapeError("graph: invalid variable handle");
  return nodes_[v.id];
}

void Graph::shape_error(const std::string& op, const std::string& detail) const {
  throw ShapeError("node " + std::to_string(nodes_.size()) + " (" + op + "): " + detail);
}

Var Graph::push(std::string op, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  if (options_.check_finite && !value.all_finite()) {
    throw NumericError("node " + std::to_string(nodes_.size()) + " (" + op +
                       "): non-finite output");
  }
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](std::size_t i) { return nodes_[i].requires_grad; });
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Graph::leaf(const std::string& name, Tensor value) {
  if (options_.check_finite && !value.all_finite()) {
    throw NumericError("leaf '" + name + "': non-finite value");
  }
  if (named_leaves_.count(name)) throw ConfigError("graph: leaf '" + name + "' bound twice");
  Node n;
  n.op = "leaf:" + name;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  named_leaves_.emplace(name, nodes_.size() - 1);
  return Var{nodes_.size() - 1};
}

Var Graph::input(const std::string& name, Tensor value) { return leaf(name, std::move(value)); }

Var Graph::constant(Tensor value) {
  if (options_.check_finite && !value.all_finite()) {
    throw NumericError("node " + std::to_string(nodes_.size()) + " (constant): non-finite value");
  }
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Graph::param(const ParameterSet& params, const std::string& name) {
  if (auto it = named_leaves_.find(name); it != named_leaves_.end()) return Var{it->second};
  return leaf(name, params.at(name));
}

Var Graph::frozen(const ParameterSet& params, const std::string& name) {
  return constant(params.at(name));
}

const Tensor& Graph::value(Var v) const { return node(v).value; }
const std::string& Graph::op_name(Var v) const { return node(v).op; }
bool Graph::requires_grad(Var v) const { return node(v).requires_grad; }

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) {
    n.grad = Tensor(n.value.shape(), std::vector<double>(n.value.size(), 0.0));
  }
  return n.grad;
}

// ---------------------------------------------------------------------------
// Linear algebra

Var Graph::matmul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
    shape_error("matmul", A.shape_string() + " * " + B.shape_string());
  }
  const std::size_t ia = a.id, ib = b.id;
  return push("matmul", diff::matmul(A, B), {ia, ib}, [ia, ib](Graph& g, const Tensor& go) {
    if (g.needs(ia)) {
      Tensor d = diff::matmul_nt(go, g.nodes_[ib].value);
      Tensor& buf = g.grad_buffer(ia);
      for (std::size_t i = 0; i < d.size(); ++i) buf[i] += d[i];
    }
    if (g.needs(ib)) {
      Tensor d = diff::matmul_tn(g.nodes_[ia].value, go);
      Tensor& buf = g.grad_buffer(ib);
      for (std::size_t i = 0; i < d.size(); ++i) buf[i] += d[i];
    }
  });
}

Var Graph::matmul_nt(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.cols()) {
    shape_error("matmul_nt", A.shape_string() + " * " + B.shape_string() + "^T");
  }
  const std::size_t ia = a.id, ib = b.id;
  return push("matmul_nt", diff::matmul_nt(A, B), {ia, ib}, [ia, ib](Graph& g, const Tensor& go) {
    if (g.needs(ia)) {
      Tensor d = diff::matmul(go, g.nodes_[ib].value);
      Tensor& buf = g.grad_buffer(ia);
      for (std::size_t i = 0; i < d.size(); ++i) buf[i] += d[i];
    }
    if (g.needs(ib)) {
      Tensor d = diff::matmul_tn(go, g.nodes_[ia].value);
      Tensor& buf = g.grad_buffer(ib);
      for (std::size_t i = 0; i < d.size(); ++i) buf[i] += d[i];
    }
  });
}

Var Graph::transpose(Var a) {
  const Tensor& A = value(a);
  if (A.rank() != 2) shape_error("transpose", A.shape_string());
  const std::size_t ia = a.id;
  return push("transpose", diff::transpose(A), {ia}, [ia](Graph& g, const Tensor& go) {
    Tensor& buf = g.grad_buffer(ia);
    for (std::size_t i = 0; i < go.rows(); ++i)
      for (std::size_t j = 0; j < go.cols(); ++j) buf(j, i) += go(i, j);
  });
}

// ---------------------------------------------------------------------------
// Elementwise binary

Var Graph::add(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (!A.same_shape(B)) shape_error("add", A.shape_string() + " + " + B.shape_string());
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  const std::size_t ia = a.id, ib = b.id;
  return push("add", std::move(out), {ia, ib}, [ia, ib](Graph& g, const Tensor& go) {
    for (std::size_t id : {ia, ib}) {
      if (!g.needs(id)) continue;
      Tensor& buf = g.grad_buffer(id);
      for (std::size_t i = 0; i < go.size(); ++i) buf[i] += go[i];
    }
  });
}

Var Graph::sub(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (!A.same_shape(B)) shape_error("sub", A.shape_string() + " - " + B.shape_string());
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  const std::size_t ia = a.id, ib = b.id;
  return push("sub", std::move(out), {ia, ib}, [ia, ib](Graph& g, const Tensor& go) {
    if (g.needs(ia)) {
      Tensor& buf = g.grad_buffer(ia);
      for (std::size_t i = 0; i < go.size(); ++i) buf[i] += go[i];
    }
    if (g.needs(ib)) {
      Tensor& buf = g.grad_buffer(ib);
      for (std::size_t i = 0; i < go.size(); ++i) buf[i] -= go[i];
    }
  });
}

Var Graph::mul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (!A.same_shape(B)) shape_error("mul", A.shape_string() + " * " + B.shape_string());
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  const std::size_t ia = a.id, ib = b.id;
  return push("mul", std::move(out), {ia, ib}, [ia, ib](Graph& g, const Tensor& go) {
    if (g.needs(ia)) {
      const Tensor& other = g.nodes_[ib].value;
      Tensor& buf = g.grad_buffer(ia);
      for (std::size_t i = 0; i < go.size(); ++i) buf[i] += go[i] * other[i];
    }
    if (g.needs(ib)) {
      const Tensor& other = g.nodes_[ia].value;
      Tensor& buf = g.grad_buffer(ib);
      for (std::size_t i = 0; i < go.size(); ++i) buf[i] += go[i] * other[i];
    }
  });
}

Var Graph::add_row(Var a, Var row) {
  const Tensor& A = value(a);
  const Tensor& R = value(row);
  if (A.rank() != 2 || R.rank() != 2 || R.rows() != 1 || R.cols() != A.cols()) {
    shape_error("add_row", A.shape_string() + " + " + R.shape_string());
  }
  Tensor out = A;
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) out(i, j) += R(0, j);
  const std::size_t ia = a.id, ir = row.id;
  return push("add_row", std::move(out), {ia, ir}, [ia, ir](Graph& g, const Tensor& go) {
    if (g.needs(ia)) {
      Tensor& buf = g.grad_buffer(ia);
      for (std::size_t i = 0; i < go.size(); ++i) buf[i] += go[i];
    }
    if (g.needs(ir)) {
      Tensor& buf = g.grad_buffer(ir);
      for (std::size_t i = 0; i < go.rows(); ++i)
        for (std::size_t j = 0; j < go.cols(); ++j) buf(0, j) += go(i, j);
    }
  });
}

Var Graph::mul_col(Var a, Var col) {
  const Tensor& A = value(a);
  const Tensor& C = value(col);
  if (A.rank() != 2 || C.rank() != 2 || C.cols() != 1 || C.rows() != A.rows()) {
    shape_error("mul_col", A.shape_string() + " * " + C.shape_string());
  }
  Tensor out = A;
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) out(i, j) *= C(i, 0);
  const std::size_t ia = a.id, ic = col.id;
  return push("mul_col", std::move(out), {ia, ic}, [ia, ic](Graph& g, const Tensor& go) {
    const Tensor& Av = g.nodes_[ia].value;
    const Tensor& Cv = g.nodes_[ic].value;
    if (g.needs(ia)) {
      Tensor& buf = g.grad_buffer(ia);
      for (std::size_t i = 0; i < go.rows(); ++i)
        for (std::size_t j = 0; j < go.cols(); ++j) buf(i, j) += go(i, j) * Cv(i, 0);
    }
    if (g.needs(ic)) {
      Tensor& buf = g.grad_buffer(ic);
      for (std::size_t i = 0; i < go.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < go.cols(); ++j) s += go(i, j) * Av(i, j);
        buf(i, 0) += s;
      }
    }
  });
}

Var Graph::scale(Var a, double s) {
  Tensor out = value(a);
  for (double& v : out.data()) v *= s;
  const std::size_t ia = a.id;
  return push("scale", std::move(out), {ia}, [ia, s](Graph& g, const Tensor& go) {
    Tensor& buf = g.grad_buffer(ia);
    for (std::size_t i = 0; i < go.size(); ++i) buf[i] += go[i] * s;
  });
}

Var Graph::add_scalar(Var a, double s) {
  Tensor out = value(a);
  for (double& v : out.data()) v += s;
  const std::size_t ia = a.id;
  return push("add_scalar", std::move(out), {ia}, [ia](Graph& g, const Tensor& go) {
    Tensor& buf = g.grad_buffer(ia);
    for (std::size_t i = 0; i < go.size(); ++i) buf[i] += go[i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise unary

template <typename F, typename D>
Var Graph::unary(const char* op, Var a, F f, D dfdx) {
  const Tensor& A = value(a);
  Tensor out = A;
  for (double& v : out.data()) v = f(v);
  const std::size_t ia = a.id, self = nodes_.size();
  return push(op, std::move(out), {ia}, [ia, self, dfdx](Graph& g, const Tensor& go) {
    const Tensor& x = g.nodes_[ia].value;
    const Tensor& y = g.nodes_[self].value;
    Tensor& buf = g.grad_buffer(ia);
    for (std::size_t i = 0; i < go.size(); ++i) buf[i] += go[i] * dfdx(x[i], y[i]);
  });
}

Var Graph::tanh(Var a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var Graph::sigmoid(Var a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var Graph::softplus(Var a) {
  return unary(
      "softplus", a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
}

Var Graph::relu(Var a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var Graph::gelu(Var a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      "gelu", a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}

Var Graph::exp(Var a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var Graph::log(Var a) {
  return unary("log", a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Var Graph::clip(Var a, double lo, double hi) {
  if (!(lo <= hi)) shape_error("clip", "lower bound exceeds upper bound");
  const double pass = options_.flip_clip_gradient ? -1.0 : 1.0;
  return unary("clip", a, [lo, hi](double x) { return std::max(std::min(x, hi), lo); },
               [lo, hi, pass](double x, double) { return (x >= lo && x <= hi) ? pass : 0.0; });
}

// ---------------------------------------------------------------------------
// Row-wise normalizations

Var Graph::softmax_rows(Var a) {
  const Tensor& A = value(a);
  if (A.rank() != 2) shape_error("softmax_rows", A.shape_string());
  Tensor out(A.rows(), A.cols());
  for (std::size_t i = 0; i < A.rows(); ++i) {
    double m = A(i, 0);
    for (std::size_t j = 1; j < A.cols(); ++j) m = std::max(m, A(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < A.cols(); ++j) s += (out(i, j) = std::exp(A(i, j) - m));
    for (std::size_t j = 0; j < A.cols(); ++j) out(i, j) /= s;
  }
  const std::size_t ia = a.id, self = nodes_.size();
  return push("softmax_rows", std::move(out), {ia}, [ia, self](Graph& g, const Tensor& go) {
    const Tensor& y = g.nodes_[self].value;
    Tensor& buf = g.grad_buffer(ia);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += go(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) buf(i, j) += y(i, j) * (go(i, j) - dot);
    }
  });
}

Var Graph::log_softmax_rows(Var a) {
  const Tensor& A = value(a);
  if (A.rank() != 2) shape_error("log_softmax_rows", A.shape_string());
  Tensor out(A.rows(), A.cols());
  for (std::size_t i = 0; i < A.rows(); ++i) {
    double m = A(i, 0);
    for (std::size_t j = 1; j < A.cols(); ++j) m = std::max(m, A(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < A.cols(); ++j) s += std::exp(A(i, j) - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < A.cols(); ++j) out(i, j) = A(i, j) - lse;
  }
  const std::size_t ia = a.id, self = nodes_.size();
  return push("log_softmax_rows", std::move(out), {ia}, [ia, self](Graph& g, const Tensor& go) {
    const Tensor& y = g.nodes_[self].value;
    Tensor& buf = g.grad_buffer(ia);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) s += go(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) buf(i, j) += go(i, j) - std::exp(y(i, j)) * s;
    }
  });
}

Var Graph::layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  const Tensor& X = value(x);
  const Tensor& G = value(gamma);
  const Tensor& B = value(beta);
  if (X.rank() != 2 || G.rank() != 2 || B.rank() != 2 || G.rows() != 1 || B.rows() != 1 ||
      G.cols() != X.cols() || B.cols() != X.cols()) {
    shape_error("layer_norm_rows",
                X.shape_string() + " with gamma " + G.shape_string() + ", beta " + B.shape_string());
  }
  const std::size_t r = X.rows(), c = X.cols();
  Tensor xhat(r, c);
  std::vector<double> inv_std(r);
  Tensor out(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += X(i, j);
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (X(i, j) - mean) * (X(i, j) - mean);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat(i, j) = (X(i, j) - mean) * inv_std[i];
      out(i, j) = xhat(i, j) * G(0, j) + B(0, j);
    }
  }
  const std::size_t ix = x.id, ig = gamma.id, ib = beta.id;
  return push("layer_norm_rows", std::move(out), {ix, ig, ib},
              [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                  Graph& g, const Tensor& go) {
                const std::size_t r = go.rows(), c = go.cols();
                if (g.needs(ig)) {
                  Tensor& buf = g.grad_buffer(ig);
                  for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) buf(0, j) += go(i, j) * xhat(i, j);
                }
                if (g.needs(ib)) {
                  Tensor& buf = g.grad_buffer(ib);
                  for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) buf(0, j) += go(i, j);
                }
                if (g.needs(ix)) {
                  const Tensor& G = g.nodes_[ig].value;
                  Tensor& buf = g.grad_buffer(ix);
                  const double inv_c = 1.0 / static_cast<double>(c);
                  for (std::size_t i = 0; i < r; ++i) {
                    double mean_d = 0.0, mean_dx = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                      const double d = go(i, j) * G(0, j);
                      mean_d += d;
                      mean_dx += d * xhat(i, j);
                    }
                    mean_d *= inv_c;
                    mean_dx *= inv_c;
                    for (std::size_t j = 0; j < c; ++j) {
                      const double d = go(i, j) * G(0, j);
                      buf(i, j) += inv_std[i] * (d - mean_d - xhat(i, j) * mean_dx);
                    }
                  }
                }
              });
}

// ---------------------------------------------------------------------------
// Reductions

Var Graph::sum_all(Var a) {
  const Tensor& A = value(a);
  double s = 0.0;
  for (double v : A.data()) s += v;
  const std::size_t ia = a.id;
  return push("sum_all", Tensor::scalar(s), {ia}, [ia](Graph& g, const Tensor& go) {
    Tensor& buf = g.grad_buffer(ia);
    for (double& v : buf.data()) v += go[0];
  });
}

Var Graph::mean_all(Var a) {
  const Tensor& A = value(a);
  if (A.empty()) shape_error("mean_all", "empty tensor");
  double s = 0.0;
  for (double v : A.data()) s += v;
  const double n = static_cast<double>(A.size());
  const std::size_t ia = a.id;
  return push("mean_all", Tensor::scalar(s / n), {ia}, [ia, n](Graph& g, const Tensor& go) {
    Tensor& buf = g.grad_buffer(ia);
    for (double& v : buf.data()) v += go[0] / n;
  });
}

Var Graph::sum_rows(Var a) {
  const Tensor& A = value(a);
  if (A.rank() != 2) shape_error("sum_rows", A.shape_string());
  Tensor out(1, A.cols());
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) out(0, j) += A(i, j);
  const std::size_t ia = a.id;
  return push("sum_rows", std::move(out), {ia}, [ia](Graph& g, const Tensor& go) {
    Tensor& buf = g.grad_buffer(ia);
    for (std::size_t i = 0; i < buf.rows(); ++i)
      for (std::size_t j = 0; j < buf.cols(); ++j) buf(i, j) += go(0, j);
  });
}

Var Graph::mean_rows(Var a) {
  const Tensor& A = value(a);
  if (A.rank() != 2 || A.rows() == 0) shape_error("mean_rows", A.shape_string());
  Tensor out(1, A.cols());
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) out(0, j) += A(i, j);
  const double n = static_cast<double>(A.rows());
  for (double& v : out.data()) v /= n;
  const std::size_t ia = a.id;
  return push("mean_rows", std::move(out), {ia}, [ia, n](Graph& g, const Tensor& go) {
    Tensor& buf = g.grad_buffer(ia);
    for (std::size_t i = 0; i < buf.rows(); ++i)
      for (std::size_t j = 0; j < buf.cols(); ++j) buf(i, j) += go(0, j) / n;
  });
}

Var Graph::max_rows(Var a) {
  const Tensor& A = value(a);
  if (A.rank() != 2 || A.rows() == 0) shape_error("max_rows", A.shape_string());
  Tensor out(1, A.cols());
  std::vector<std::size_t> arg(A.cols(), 0);
  for (std::size_t j = 0; j < A.cols(); ++j) {
    double best = A(0, j);
    for (std::size_t i = 1; i < A.rows(); ++i) {
      if (A(i, j) > best) {
        best = A(i, j);
        arg[j] = i;
      }
    }
    out(0, j) = best;
  }
  const std::size_t ia = a.id;
  return push("max_rows", std::move(out), {ia}, [ia, arg = std::move(arg)](Graph& g, const Tensor& go) {
    Tensor& buf = g.grad_buffer(ia);
    for (std::size_t j = 0; j < arg.size(); ++j) buf(arg[j], j) += go(0, j);
  });
}

Var Graph::sum_cols(Var a) {
  const Tensor& A = value(a);
  if (A.rank() != 2) shape_error("sum_cols", A.shape_string());
  Tensor out(A.rows(), 1);
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) out(i, 0) += A(i, j);
  const std::size_t ia = a.id;
  return push("sum_cols", std::move(out), {ia}, [ia](Graph& g, const Tensor& go) {
    Tensor& buf = g.grad_buffer(ia);
    for (std::size_t i = 0; i < buf.rows(); ++i)
      for (std::size_t j = 0; j < buf.cols(); ++j) buf(i, j) += go(i, 0);
  });
}

// ---------------------------------------------------------------------------
// Structural

Var Graph::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) shape_error("concat_cols", "no inputs");
  const std::size_t r = value(parts[0]).rows();
  std::size_t c = 0;
  std::vector<std::size_t> ids, widths;
  for (Var p : parts) {
    const Tensor& P = value(p);
    if (P.rank() != 2 || P.rows() != r) {
      shape_error("concat_cols", "part " + P.shape_string() + " vs " + std::to_string(r) + " rows");
    }
    ids.push_back(p.id);
    widths.push_back(P.cols());
    c += P.cols();
  }
  Tensor out(r, c);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& P = value(parts[k]);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out(i, off + j) = P(i, j);
    off += widths[k];
  }
  return push("concat_cols", std::move(out), ids, [ids, widths](Graph& g, const Tensor& go) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (g.needs(ids[k])) {
        Tensor& buf = g.grad_buffer(ids[k]);
        for (std::size_t i = 0; i < go.rows(); ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) buf(i, j) += go(i, off + j);
      }
      off += widths[k];
    }
  });
}

Var Graph::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) shape_error("concat_rows", "no inputs");
  const std::size_t c = value(parts[0]).cols();
  std::vector<std::size_t> ids, heights;
  std::vector<double> data;
  for (Var p : parts) {
    const Tensor& P = value(p);
    if (P.rank() != 2 || P.cols() != c) {
      shape_error("concat_rows", "part " + P.shape_string() + " vs " + std::to_string(c) + " cols");
    }
    ids.push_back(p.id);
    heights.push_back(P.rows());
    data.insert(data.end(), P.data().begin(), P.data().end());
  }
  const std::size_t r = data.size() / std::max<std::size_t>(c, 1);
  return push("concat_rows", Tensor({r, c}, std::move(data)), ids,
              [ids, heights](Graph& g, const Tensor& go) {
                std::size_t off = 0;
                for (std::size_t k = 0; k < ids.size(); ++k) {
                  const std::size_t n = heights[k] * go.cols();
                  if (g.needs(ids[k])) {
                    Tensor& buf = g.grad_buffer(ids[k]);
                    for (std::size_t i = 0; i < n; ++i) buf[i] += go[off + i];
                  }
                  off += n;
                }
              });
}

Var Graph::slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Tensor& A = value(a);
  if (A.rank() != 2 || begin + count > A.rows() || count == 0) {
    shape_error("slice_rows", A.shape_string() + " rows [" + std::to_string(begin) + ", " +
                                  std::to_string(begin + count) + ")");
  }
  const std::size_t c = A.cols();
  std::vector<double> data(A.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
                           A.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * c));
  const std::size_t ia = a.id;
  return push("slice_rows", Tensor({count, c}, std::move(data)), {ia},
              [ia, begin](Graph& g, const Tensor& go) {
                Tensor& buf = g.grad_buffer(ia);
                const std::size_t off = begin * go.cols();
                for (std::size_t i = 0; i < go.size(); ++i) buf[off + i] += go[i];
              });
}

Var Graph::slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& A = value(a);
  if (A.rank() != 2 || begin + count > A.cols() || count == 0) {
    shape_error("slice_cols", A.shape_string() + " cols [" + std::to_string(begin) + ", " +
                                  std::to_string(begin + count) + ")");
  }
  Tensor out(A.rows(), count);
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = A(i, begin + j);
  const std::size_t ia = a.id;
  return push("slice_cols", std::move(out), {ia}, [ia, begin](Graph& g, const Tensor& go) {
    Tensor& buf = g.grad_buffer(ia);
    for (std::size_t i = 0; i < go.rows(); ++i)
      for (std::size_t j = 0; j < go.cols(); ++j) buf(i, begin + j) += go(i, j);
  });
}

Var Graph::gather_cols(Var a, const std::vector<std::size_t>& index) {
  const Tensor& A = value(a);
  if (A.rank() != 2 || index.size() != A.rows()) {
    shape_error("gather_cols", A.shape_string() + " with " + std::to_string(index.size()) + " indices");
  }
  Tensor out(A.rows(), 1);
  for (std::size_t i = 0; i < A.rows(); ++i) {
    if (index[i] >= A.cols()) shape_error("gather_cols", "index out of range");
    out(i, 0) = A(i, index[i]);
  }
  const std::size_t ia = a.id;
  return push("gather_cols", std::move(out), {ia}, [ia, index](Graph& g, const Tensor& go) {
    Tensor& buf = g.grad_buffer(ia);
    for (std::size_t i = 0; i < index.size(); ++i) buf(i, index[i]) += go(i, 0);
  });
}

Var Graph::pairwise_sum(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.cols()) {
    shape_error("pairwise_sum", A.shape_string() + " (+) " + B.shape_string());
  }
  const std::size_t n1 = A.rows(), n2 = B.rows(), h = A.cols();
  Tensor out(n1 * n2, h);
  for (std::size_t i = 0; i < n1; ++i)
    for (std::size_t j = 0; j < n2; ++j)
      for (std::size_t k = 0; k < h; ++k) out(i * n2 + j, k) = A(i, k) + B(j, k);
  const std::size_t ia = a.id, ib = b.id;
  return push("pairwise_sum", std::move(out), {ia, ib}, [ia, ib, n1, n2, h](Graph& g, const Tensor& go) {
    if (g.needs(ia)) {
      Tensor& buf = g.grad_buffer(ia);
      for (std::size_t i = 0; i < n1; ++i)
        for (std::size_t j = 0; j < n2; ++j)
          for (std::size_t k = 0; k < h; ++k) buf(i, k) += go(i * n2 + j, k);
    }
    if (g.needs(ib)) {
      Tensor& buf = g.grad_buffer(ib);
      for (std::size_t i = 0; i < n1; ++i)
        for (std::size_t j = 0; j < n2; ++j)
          for (std::size_t k = 0; k < h; ++k) buf(j, k) += go(i * n2 + j, k);
    }
  });
}

Var Graph::reshape(Var a, std::size_t rows, std::size_t cols) {
  const Tensor& A = value(a);
  if (rows * cols != A.size()) {
    shape_error("reshape", A.shape_string() + " -> [" + std::to_string(rows) + "x" +
                               std::to_string(cols) + "]");
  }
  const std::size_t ia = a.id;
  return push("reshape", A.reshaped({rows, cols}), {ia}, [ia](Graph& g, const Tensor& go) {
    Tensor& buf = g.grad_buffer(ia);
    for (std::size_t i = 0; i < go.size(); ++i) buf[i] += go[i];
  });
}

// ---------------------------------------------------------------------------
// Reverse pass

void Graph::backward(Var output, const Tensor& seed) {
  const Node& out = node(output);
  if (!out.value.same_shape(seed)) {
    throw ShapeError("backward: seed " + seed.shape_string() + " does not match output " +
                     out.value.shape_string());
  }
  for (Node& n : nodes_) n.grad = Tensor();
  if (!out.requires_grad) return;
  grad_buffer(output.id) = seed;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    // The callback may grow other nodes' buffers but never this node's.
    n.backward(*this, n.grad);
  }
}

void Graph::backward(Var output) {
  const Tensor& v = value(output);
  if (v.size() != 1) throw ShapeError("backward: implicit seed needs a 1x1 output, got " + v.shape_string());
  backward(output, Tensor(v.shape(), {1.0}));
}

Tensor Graph::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) return Tensor(n.value.shape(), std::vector<double>(n.value.size(), 0.0));
  return n.grad;
}

NamedTensors Graph::leaf_gradients() const {
  NamedTensors out;
  for (const auto& [name, id] : named_leaves_) out.emplace(name, grad(Var{id}));
  return out;
}

NamedTensors Graph::param_gradients(const ParameterSet& params) const {
  NamedTensors out;
  for (const auto& [name, t] : params) {
    auto it = named_leaves_.find(name);
    if (it == named_leaves_.end()) {
      out.emplace(name, Tensor(t.shape(), std::vector<double>(t.size(), 0.0)));
    } else {
      out.emplace(name, grad(Var{it->second}));
    }
  }
  return out;
}

}  // namespace mcmil::diff
