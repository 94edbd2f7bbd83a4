// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gill {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Shape = std::vector<int>;

/// Raised when operand shapes are incompatible with a primitive.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_str(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

namespace detail {
struct Node {
  Shape shape;
  Eigen::VectorXd value;
  Eigen::VectorXd grad;  // empty until first accumulation
  bool requires_grad = false;
};
}  // namespace detail

/// Dense fp64 array with row-major storage. Copies share the underlying node;
/// use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, Eigen::VectorXd values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double v);
  template <typename Derived>
  static Tensor matrix(const Eigen::MatrixBase<Derived>& m, bool requires_grad = false) {
    RowMatrix rm = m;
    Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(rm.data(), rm.size());
    return from({static_cast<int>(rm.rows()), static_cast<int>(rm.cols())}, std::move(flat),
                requires_grad);
  }
  static Tensor vector(const Eigen::VectorXd& v, bool requires_grad = false) {
    return from({static_cast<int>(v.size())}, v, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const;
  Eigen::Index size() const { return node_->value.size(); }

  const Eigen::VectorXd& data() const { return node_->value; }
  /// Mutable access for leaves (optimizer updates, finite differences).
  Eigen::VectorXd& mutable_data() { return node_->value; }

  /// Rank-2 view; a rank-1 tensor is viewed as a single row.
  Eigen::Map<const RowMatrix> mat() const;
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() != 0; }
  /// Gradient, or zeros when none was accumulated.
  Eigen::VectorXd grad() const;
  void zero_grad() { node_->grad.resize(0); }

  Tensor clone() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
  friend class Tape;
};

/// Ordered record of primitive applications on the current thread.
class Tape {
 public:
  using Vjp = std::function<void(const Eigen::VectorXd& out_grad)>;

  struct Entry {
    std::shared_ptr<detail::Node> output;
    std::vector<std::shared_ptr<detail::Node>> inputs;
    Vjp vjp;
  };

  void record(const Tensor& output, std::span<const Tensor> inputs, Vjp vjp);

  /// Populates grads of every requires_grad tensor reachable from `loss`.
  void backward(const Tensor& loss);
  void reset();

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  static Tape& current();

 private:
  std::vector<Entry> entries_;
  bool consumed_ = false;
  friend class TapeScope;
};

/// Installs a fresh tape as the thread's current tape for its lifetime.
class TapeScope {
 public:
  TapeScope();
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
  Tape& tape() { return tape_; }

 private:
  Tape tape_;
  Tape* previous_;
};

/// Disables recording on this thread for its lifetime (inference, oracles).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

void backward(const Tensor& loss);
void accumulate_grad(detail::Node& node, const Eigen::VectorXd& g);

// Primitives. Every primitive records onto Tape::current() when an input
// requires grad.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Same-shape add, or bias add when `b` is rank 1 and matches the last axis of `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat(std::initializer_list<Tensor> parts, int axis);
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);
/// Gathers rows of a rank-2 table.
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);
Tensor softmax(const Tensor& a, int axis);
Tensor log_softmax(const Tensor& a, int axis);
/// Normalizes over the last axis; gamma/beta may be undefined.
Tensor layer_norm(const Tensor& x, const Tensor& gamma = {}, const Tensor& beta = {},
                  double eps = 1e-5);
Tensor gelu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mse(const Tensor& a, const Tensor& b);
/// Mean over rows of -logp[row, target[row]].
Tensor nll(const Tensor& log_probs, std::span<const int> targets);
Tensor l2_normalize(const Tensor& x, int axis);
/// Cosine along the last axis; result has one entry per row.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

inline constexpr double kNormFloor = 1e-12;

/// Optional arguments for name-dispatched primitives.
struct PrimitiveAttrs {
  int axis = -1;
  double slope = 0.01;
  double scalar = 1.0;
  std::vector<int> ids;
  Shape shape;
};

/// Dispatches by primitive name ("matmul", "softmax", ...). Unknown names throw.
Tensor apply_primitive(std::string_view kind, std::span<const Tensor> inputs,
                       const PrimitiveAttrs& attrs = {});

/// Max over coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|),
/// using central differences with step h.
double check_gradients(const std::function<Tensor()>& f, std::span<Tensor> params,
                       double h = 1e-6, std::size_t max_coords_per_param = 0);

}  // namespace gill
