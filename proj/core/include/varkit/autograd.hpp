// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode automatic differentiation over dense row-major
// double matrices. Every tensor in the pipeline is a 2-D matrix; bags of
// shape (S, F, D) are stored as (S*F, D) with row index s*F + f.

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace varkit::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& g);
};

/// Handle to a node of the computation graph. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var scalar(double v);

  [[nodiscard]] bool defined() const { return node_ != nullptr; }
  [[nodiscard]] const Matrix& value() const { return node_->value; }
  /// Mutable access for in-place parameter updates on leaf nodes.
  [[nodiscard]] Matrix& mutable_value() { return node_->value; }
  /// Zero-sized when no gradient has reached this node.
  [[nodiscard]] const Matrix& grad() const { return node_->grad; }
  [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
  [[nodiscard]] Index rows() const { return node_->value.rows(); }
  [[nodiscard]] Index cols() const { return node_->value.cols(); }
  [[nodiscard]] double item() const;
  void zero_grad() { node_->grad.resize(0, 0); }
  [[nodiscard]] Var detach() const { return Var(node_->value); }
  [[nodiscard]] const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Back-propagates from a 1x1 root, accumulating into every reachable node
/// that requires a gradient.
void backward(const Var& root);

// Linear algebra and elementwise arithmetic.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);
Var sub_row(const Var& a, const Var& row);
Var mul_col(const Var& a, const Var& col);
Var scale(const Var& a, double s);
Var affine(const Var& a, double s, double b);
Var mul_const(const Var& a, const Matrix& mask);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);
Var mean_rows(const Var& a);
Var group_sum_rows(const Var& a, Index group);

// Pointwise nonlinearities.
/// Values stay strictly inside (0, 1), also for saturated inputs.
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var gelu(const Var& a);
Var square(const Var& a);
Var log_clamped(const Var& a, double floor);

// Row/column normalizations.
Var softmax_rows(const Var& a);
Var normalize_rows(const Var& a);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps);

struct ColumnStats {
  RowVector mean;
  RowVector var;
};
/// Per-column standardization with in-batch population statistics.
Var batch_norm_train(const Var& x, double eps, ColumnStats* stats = nullptr);
/// Per-column standardization with fixed statistics.
Var standardize_cols(const Var& x, const RowVector& mean, const RowVector& var, double eps);

// Indexing and assembly.
struct Cell {
  Index row;
  Index col;
};
Var gather_rows(const Var& a, std::span<const Index> rows);
Var gather(const Var& a, std::span<const Cell> cells);
Var slice_rows(const Var& a, Index begin, Index count);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(const Var& a, const Var& b);

/// Multi-head scaled dot-product self-attention restricted to row groups:
/// each row attends only to the rows listed in its group. q, k and v are
/// (n, E) with E divisible by num_heads.
using RowGroups = std::vector<std::vector<Index>>;
Var grouped_attention(const Var& q, const Var& k, const Var& v, const RowGroups& groups,
                      int num_heads);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }

}  // namespace varkit::ag
