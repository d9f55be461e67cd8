// SPDX-License-Identifier: Apache-2.0

#include "varkit/autograd.hpp"

#include "varkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <unordered_set>

namespace varkit::ag {

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Var(std::move(m));
}

double Var::item() const {
  if (rows() != 1 || cols() != 1) {
    throw ShapeError("item() requires a 1x1 value");
  }
  return node_->value(0, 0);
}

namespace {

std::string shape_str(const Var& v) {
  return "(" + std::to_string(v.rows()) + "x" + std::to_string(v.cols()) + ")";
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

// Builds a result node. Parents and the backward closure are only retained
// when some parent participates in differentiation.
Var make_result(Matrix value, std::vector<Var> parents, std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const auto& p : parents) {
    if (p.requires_grad()) {
      node->requires_grad = true;
      break;
    }
  }
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(bw);
  }
  return Var(std::move(node));
}

inline bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

}  // namespace

void backward(const Var& root) {
  if (!root.defined() || root.rows() != 1 || root.cols() != 1) {
    throw ShapeError("backward() requires a 1x1 root");
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS produces a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a) + " x " + shape_str(b));
  }
  return make_result(a.value() * b.value(), {a, b}, [](Node& self) {
    const Matrix& av = self.parents[0]->value;
    const Matrix& bv = self.parents[1]->value;
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad * bv.transpose());
    if (wants(self, 1)) self.parents[1]->accumulate(av.transpose() * self.grad);
  });
}

Var transpose(const Var& a) {
  return make_result(a.value().transpose(), {a}, [](Node& self) {
    self.parents[0]->accumulate(self.grad.transpose());
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(-self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  return make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad.cwiseProduct(self.parents[1]->value));
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad.cwiseProduct(self.parents[0]->value));
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: expected (1x" + std::to_string(a.cols()) + ") got " + shape_str(row));
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make_result(std::move(out), {a, row}, [](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad.colwise().sum());
  });
}

Var sub_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("sub_row: expected (1x" + std::to_string(a.cols()) + ") got " + shape_str(row));
  }
  Matrix out = a.value().rowwise() - row.value().row(0);
  return make_result(std::move(out), {a, row}, [](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(-self.grad.colwise().sum());
  });
}

Var mul_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) {
    throw ShapeError("mul_col: expected (" + std::to_string(a.rows()) + "x1) got " + shape_str(col));
  }
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return make_result(std::move(out), {a, col}, [](Node& self) {
    const Matrix& av = self.parents[0]->value;
    const Matrix& cv = self.parents[1]->value;
    if (wants(self, 0)) {
      Matrix g = self.grad.array().colwise() * cv.col(0).array();
      self.parents[0]->accumulate(g);
    }
    if (wants(self, 1)) {
      self.parents[1]->accumulate(self.grad.cwiseProduct(av).rowwise().sum());
    }
  });
}

Var scale(const Var& a, double s) { return affine(a, s, 0.0); }

Var affine(const Var& a, double s, double b) {
  Matrix out = (a.value().array() * s + b).matrix();
  return make_result(std::move(out), {a}, [s](Node& self) { self.parents[0]->accumulate(self.grad * s); });
}

Var mul_const(const Var& a, const Matrix& mask) {
  if (mask.rows() != a.rows() || mask.cols() != a.cols()) {
    throw ShapeError("mul_const: mask shape mismatch");
  }
  return make_result(a.value().cwiseProduct(mask), {a}, [mask](Node& self) {
    self.parents[0]->accumulate(self.grad.cwiseProduct(mask));
  });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make_result(std::move(out), {a}, [](Node& self) {
    const Matrix& av = self.parents[0]->value;
    self.parents[0]->accumulate(Matrix::Constant(av.rows(), av.cols(), self.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  if (a.value().size() == 0) throw ShapeError("mean of empty matrix");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var mean_rows(const Var& a) {
  if (a.rows() == 0) throw ShapeError("mean_rows of empty matrix");
  Matrix out = a.value().colwise().mean();
  return make_result(std::move(out), {a}, [](Node& self) {
    const Index n = self.parents[0]->value.rows();
    Matrix g = self.grad.replicate(n, 1) / static_cast<double>(n);
    self.parents[0]->accumulate(g);
  });
}

Var group_sum_rows(const Var& a, Index group) {
  if (group <= 0 || a.rows() % group != 0) {
    throw ShapeError("group_sum_rows: " + std::to_string(a.rows()) + " rows not divisible by " +
                     std::to_string(group));
  }
  const Index n = a.rows() / group;
  Matrix out = Matrix::Zero(n, a.cols());
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < group; ++j) out.row(i) += a.value().row(i * group + j);
  }
  return make_result(std::move(out), {a}, [group](Node& self) {
    const Matrix& av = self.parents[0]->value;
    Matrix g(av.rows(), av.cols());
    for (Index r = 0; r < av.rows(); ++r) g.row(r) = self.grad.row(r / group);
    self.parents[0]->accumulate(g);
  });
}

Var sigmoid(const Var& a) {
  // Kept strictly inside (0, 1): past |x| ~ 37 the exact value rounds to 1
  // (or underflows), and the slope there is below double resolution anyway.
  static const double hi = std::nextafter(1.0, 0.0);
  static const double lo = std::numeric_limits<double>::min();
  Matrix out = a.value().unaryExpr([](double x) {
    double y = 0.0;
    if (x >= 0) {
      y = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      y = e / (1.0 + e);
    }
    return std::isnan(y) ? y : std::clamp(y, lo, hi);
  });
  Matrix y = out;
  return make_result(std::move(out), {a}, [y](Node& self) {
    Matrix g = self.grad.array() * y.array() * (1.0 - y.array());
    self.parents[0]->accumulate(g);
  });
}

Var tanh(const Var& a) {
  Matrix out = a.value().array().tanh().matrix();
  Matrix y = out;
  return make_result(std::move(out), {a}, [y](Node& self) {
    Matrix g = self.grad.array() * (1.0 - y.array().square());
    self.parents[0]->accumulate(g);
  });
}

Var gelu(const Var& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  Matrix out = a.value().unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  return make_result(std::move(out), {a}, [](Node& self) {
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Matrix d = self.parents[0]->value.unaryExpr([inv_sqrt_2pi](double x) {
      return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
    });
    self.parents[0]->accumulate(self.grad.cwiseProduct(d));
  });
}

Var square(const Var& a) {
  return make_result(a.value().array().square().matrix(), {a}, [](Node& self) {
    self.parents[0]->accumulate(2.0 * self.grad.cwiseProduct(self.parents[0]->value));
  });
}

Var log_clamped(const Var& a, double floor) {
  Matrix out = a.value().unaryExpr([floor](double x) { return std::log(std::max(x, floor)); });
  return make_result(std::move(out), {a}, [floor](Node& self) {
    Matrix d = self.parents[0]->value.unaryExpr([floor](double x) { return x > floor ? 1.0 / x : 0.0; });
    self.parents[0]->accumulate(self.grad.cwiseProduct(d));
  });
}

Var softmax_rows(const Var& a) {
  Matrix out(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const double m = a.value().row(r).maxCoeff();
    auto e = (a.value().row(r).array() - m).exp();
    out.row(r) = e / e.sum();
  }
  Matrix y = out;
  return make_result(std::move(out), {a}, [y](Node& self) {
    Matrix gy = self.grad.cwiseProduct(y);
    Eigen::VectorXd dot = gy.rowwise().sum();
    Matrix g = gy - (y.array().colwise() * dot.array()).matrix();
    self.parents[0]->accumulate(g);
  });
}

Var normalize_rows(const Var& a) {
  Eigen::VectorXd norms = a.value().rowwise().norm();
  for (Index r = 0; r < norms.size(); ++r) {
    if (!(norms(r) > 0.0)) throw NumericalError("normalize_rows: zero-norm row " + std::to_string(r));
  }
  Matrix y = a.value().array().colwise() / norms.array();
  Matrix out = y;
  return make_result(std::move(out), {a}, [y, norms](Node& self) {
    Eigen::VectorXd dot = self.grad.cwiseProduct(y).rowwise().sum();
    Matrix g = self.grad - (y.array().colwise() * dot.array()).matrix();
    g = g.array().colwise() / norms.array();
    self.parents[0]->accumulate(g);
  });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Index d = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
    throw ShapeError("layer_norm_rows: gamma/beta must be (1x" + std::to_string(d) + ")");
  }
  Eigen::VectorXd mu = x.value().rowwise().mean();
  Matrix centered = x.value().colwise() - mu;
  Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(d)) + eps).rsqrt().matrix();
  Matrix xhat = centered.array().colwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  return make_result(std::move(out), {x, gamma, beta}, [xhat, inv_std](Node& self) {
    const Matrix& g = self.grad;
    const Matrix& gm = self.parents[1]->value;
    if (wants(self, 1)) self.parents[1]->accumulate(g.cwiseProduct(xhat).colwise().sum());
    if (wants(self, 2)) self.parents[2]->accumulate(g.colwise().sum());
    if (wants(self, 0)) {
      Matrix dxhat = g.array().rowwise() * gm.row(0).array();
      Eigen::VectorXd m1 = dxhat.rowwise().mean();
      Eigen::VectorXd m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
      Matrix dx = dxhat.colwise() - m1;
      dx -= (xhat.array().colwise() * m2.array()).matrix();
      dx = dx.array().colwise() * inv_std.array();
      self.parents[0]->accumulate(dx);
    }
  });
}

Var batch_norm_train(const Var& x, double eps, ColumnStats* stats) {
  const Index n = x.rows();
  if (n < 2) throw ConfigError("batch_norm_train: needs at least 2 rows, got " + std::to_string(n));
  RowVector mu = x.value().colwise().mean();
  Matrix centered = x.value().rowwise() - mu;
  RowVector var = centered.array().square().colwise().sum() / static_cast<double>(n);
  RowVector inv_std = (var.array() + eps).rsqrt();
  Matrix xhat = centered.array().rowwise() * inv_std.array();
  if (stats != nullptr) {
    stats->mean = mu;
    stats->var = var;
  }
  Matrix out = xhat;
  return make_result(std::move(out), {x}, [xhat, inv_std](Node& self) {
    const Matrix& g = self.grad;
    RowVector m1 = g.colwise().mean();
    RowVector m2 = g.cwiseProduct(xhat).colwise().mean();
    Matrix dx = g.rowwise() - m1;
    dx -= (xhat.array().rowwise() * m2.array()).matrix();
    dx = dx.array().rowwise() * inv_std.array();
    self.parents[0]->accumulate(dx);
  });
}

Var standardize_cols(const Var& x, const RowVector& mean, const RowVector& var, double eps) {
  if (mean.size() != x.cols() || var.size() != x.cols()) {
    throw ShapeError("standardize_cols: statistics length mismatch");
  }
  RowVector inv_std = (var.array() + eps).rsqrt();
  Matrix out = (x.value().rowwise() - mean).array().rowwise() * inv_std.array();
  return make_result(std::move(out), {x}, [inv_std](Node& self) {
    Matrix g = self.grad.array().rowwise() * inv_std.array();
    self.parents[0]->accumulate(g);
  });
}

Var gather_rows(const Var& a, std::span<const Index> rows) {
  Matrix out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw ShapeError("gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  std::vector<Index> idx(rows.begin(), rows.end());
  return make_result(std::move(out), {a}, [idx = std::move(idx)](Node& self) {
    const Matrix& av = self.parents[0]->value;
    Matrix g = Matrix::Zero(av.rows(), av.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
    self.parents[0]->accumulate(g);
  });
}

Var gather(const Var& a, std::span<const Cell> cells) {
  Matrix out(static_cast<Index>(cells.size()), 1);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto [r, c] = cells[i];
    if (r < 0 || r >= a.rows() || c < 0 || c >= a.cols()) throw ShapeError("gather: index out of range");
    out(static_cast<Index>(i), 0) = a.value()(r, c);
  }
  std::vector<Cell> idx(cells.begin(), cells.end());
  return make_result(std::move(out), {a}, [idx = std::move(idx)](Node& self) {
    const Matrix& av = self.parents[0]->value;
    Matrix g = Matrix::Zero(av.rows(), av.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g(idx[i].row, idx[i].col) += self.grad(static_cast<Index>(i), 0);
    self.parents[0]->accumulate(g);
  });
}

Var slice_rows(const Var& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) throw ShapeError("slice_rows: range out of bounds");
  Matrix out = a.value().middleRows(begin, count);
  return make_result(std::move(out), {a}, [begin, count](Node& self) {
    const Matrix& av = self.parents[0]->value;
    Matrix g = Matrix::Zero(av.rows(), av.cols());
    g.middleRows(begin, count) = self.grad;
    self.parents[0]->accumulate(g);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column count mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<Index> offsets;
  offsets.reserve(parts.size());
  Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    offsets.push_back(off);
    off += p.rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return make_result(std::move(out), ps, [offsets = std::move(offsets)](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      if (!wants(self, i)) continue;
      self.parents[i]->accumulate(self.grad.middleRows(offsets[i], self.parents[i]->value.rows()));
    }
  });
}

Var concat_cols(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) throw ShapeError("concat_cols: row count mismatch");
  Matrix out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a.value();
  out.rightCols(b.cols()) = b.value();
  const Index ac = a.cols();
  const Index bc = b.cols();
  return make_result(std::move(out), {a, b}, [ac, bc](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad.leftCols(ac));
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad.rightCols(bc));
  });
}

Var grouped_attention(const Var& q, const Var& k, const Var& v, const RowGroups& groups, int num_heads) {
  require_same_shape(q, k, "grouped_attention");
  require_same_shape(q, v, "grouped_attention");
  const Index e = q.cols();
  if (num_heads <= 0 || e % num_heads != 0) {
    throw ShapeError("grouped_attention: width " + std::to_string(e) + " not divisible by heads");
  }
  const Index dh = e / num_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix out = Matrix::Zero(q.rows(), e);
  // Attention weights per (group, head), kept for the backward pass.
  std::vector<Matrix> weights;
  weights.reserve(groups.size() * static_cast<std::size_t>(num_heads));
  for (const auto& grp : groups) {
    const Index n = static_cast<Index>(grp.size());
    for (int h = 0; h < num_heads; ++h) {
      Matrix qg(n, dh), kg(n, dh), vg(n, dh);
      for (Index i = 0; i < n; ++i) {
        qg.row(i) = q.value().row(grp[i]).segment(h * dh, dh);
        kg.row(i) = k.value().row(grp[i]).segment(h * dh, dh);
        vg.row(i) = v.value().row(grp[i]).segment(h * dh, dh);
      }
      Matrix s = (qg * kg.transpose()) * inv_sqrt;
      for (Index i = 0; i < n; ++i) {
        const double m = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - m).exp();
        s.row(i) /= s.row(i).sum();
      }
      Matrix o = s * vg;
      for (Index i = 0; i < n; ++i) out.row(grp[i]).segment(h * dh, dh) = o.row(i);
      weights.push_back(std::move(s));
    }
  }

  return make_result(std::move(out), {q, k, v},
                     [groups, num_heads, dh, inv_sqrt, weights = std::move(weights)](Node& self) {
                       const Matrix& qv = self.parents[0]->value;
                       const Matrix& kv = self.parents[1]->value;
                       const Matrix& vv = self.parents[2]->value;
                       Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
                       Matrix dk = Matrix::Zero(qv.rows(), qv.cols());
                       Matrix dv = Matrix::Zero(qv.rows(), qv.cols());
                       std::size_t w = 0;
                       for (const auto& grp : groups) {
                         const Index n = static_cast<Index>(grp.size());
                         for (int h = 0; h < num_heads; ++h, ++w) {
                           const Matrix& a = weights[w];
                           Matrix qg(n, dh), kg(n, dh), vg(n, dh), dog(n, dh);
                           for (Index i = 0; i < n; ++i) {
                             qg.row(i) = qv.row(grp[i]).segment(h * dh, dh);
                             kg.row(i) = kv.row(grp[i]).segment(h * dh, dh);
                             vg.row(i) = vv.row(grp[i]).segment(h * dh, dh);
                             dog.row(i) = self.grad.row(grp[i]).segment(h * dh, dh);
                           }
                           Matrix da = dog * vg.transpose();
                           Matrix dvg = a.transpose() * dog;
                           Eigen::VectorXd dot = da.cwiseProduct(a).rowwise().sum();
                           Matrix ds = a.cwiseProduct(da.colwise() - dot);
                           Matrix dqg = ds * kg * inv_sqrt;
                           Matrix dkg = ds.transpose() * qg * inv_sqrt;
                           for (Index i = 0; i < n; ++i) {
                             dq.row(grp[i]).segment(h * dh, dh) += dqg.row(i);
                             dk.row(grp[i]).segment(h * dh, dh) += dkg.row(i);
                             dv.row(grp[i]).segment(h * dh, dh) += dvg.row(i);
                           }
                         }
                       }
                       if (wants(self, 0)) self.parents[0]->accumulate(dq);
                       if (wants(self, 1)) self.parents[1]->accumulate(dk);
                       if (wants(self, 2)) self.parents[2]->accumulate(dv);
                     });
}

}  // namespace varkit::ag
