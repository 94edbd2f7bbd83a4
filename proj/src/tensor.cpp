// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "gill/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numbers>
#include <sstream>

namespace gill {

namespace {

thread_local Tape g_default_tape;
thread_local Tape* g_current_tape = &g_default_tape;
thread_local int g_no_grad_depth = 0;

using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

[[noreturn]] void shape_fail(std::string_view kind, const Shape& a, const Shape& b,
                             std::string_view what = "shape mismatch") {
  std::ostringstream os;
  os << kind << ": " << what << " " << shape_str(a) << " vs " << shape_str(b);
  throw ShapeError(os.str());
}

int normalize_axis(std::string_view kind, int axis, int rank) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError(std::string(kind) + ": axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(rank));
  }
  return a;
}

struct AxisSplit {
  Eigen::Index outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit out;
  for (int i = 0; i < axis; ++i) out.outer *= s[i];
  out.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) out.inner *= s[i];
  return out;
}

bool any_requires_grad(std::span<const Tensor> inputs) {
  if (g_no_grad_depth > 0) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.requires_grad(); });
}

void check_finite([[maybe_unused]] const Eigen::VectorXd& v) {
  assert(v.allFinite() && "non-finite value produced by a primitive");
}

Tensor finish(Shape shape, Eigen::VectorXd value, std::span<const Tensor> inputs,
              Tape::Vjp vjp) {
  check_finite(value);
  Tensor out = Tensor::from(std::move(shape), std::move(value));
  if (any_requires_grad(inputs)) {
    out.set_requires_grad(true);
    Tape::current().record(out, inputs, std::move(vjp));
  }
  return out;
}

void grad_to(const Tensor& t, const Eigen::VectorXd& g) {
  if (t.requires_grad()) accumulate_grad(*t.node(), g);
}

ConstMap as_matrix(const Eigen::VectorXd& v, Eigen::Index rows, Eigen::Index cols) {
  return ConstMap(v.data(), rows, cols);
}

std::pair<Eigen::Index, Eigen::Index> rows_cols(const Tensor& t) {
  if (t.rank() == 1) return {1, t.dim(0)};
  Eigen::Index cols = t.shape().back();
  return {t.size() / std::max<Eigen::Index>(cols, 1), cols};
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::from(Shape shape, Eigen::VectorXd values, bool requires_grad) {
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return from(std::move(shape), Eigen::VectorXd::Zero(n), requires_grad);
}

Tensor Tensor::scalar(double v) { return from({1}, Eigen::VectorXd::Constant(1, v)); }

int Tensor::dim(int i) const {
  return node_->shape.at(static_cast<std::size_t>(i < 0 ? i + rank() : i));
}

Eigen::Map<const RowMatrix> Tensor::mat() const {
  if (rank() > 2) throw ShapeError("mat: rank-2 view of " + shape_str(shape()));
  auto [r, c] = rows_cols(*this);
  return ConstMap(node_->value.data(), r, c);
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

Eigen::VectorXd Tensor::grad() const {
  if (has_grad()) return node_->grad;
  return Eigen::VectorXd::Zero(size());
}

Tensor Tensor::clone() const {
  return from(node_->shape, node_->value, node_->requires_grad);
}

// ---------------------------------------------------------------------------
// Tape

void accumulate_grad(detail::Node& node, const Eigen::VectorXd& g) {
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

void Tape::record(const Tensor& output, std::span<const Tensor> inputs, Vjp vjp) {
  Entry e;
  e.output = output.node_ptr();
  e.inputs.reserve(inputs.size());
  for (const auto& t : inputs) e.inputs.push_back(t.node_ptr());
  e.vjp = std::move(vjp);
  entries_.push_back(std::move(e));
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::logic_error("backward: tape already consumed; call reset() first");
  if (entries_.empty()) throw std::logic_error("backward: empty tape");
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  }
  auto it = std::find_if(entries_.rbegin(), entries_.rend(),
                         [&](const Entry& e) { return e.output.get() == loss.node(); });
  if (it == entries_.rend()) throw std::logic_error("backward: loss was not recorded on this tape");
  accumulate_grad(*loss.node(), Eigen::VectorXd::Ones(1));
  for (; it != entries_.rend(); ++it) {
    if (it->output->grad.size() == 0) continue;
    it->vjp(it->output->grad);
  }
  consumed_ = true;
}

void Tape::reset() {
  entries_.clear();
  consumed_ = false;
}

Tape& Tape::current() { return *g_current_tape; }

TapeScope::TapeScope() : previous_(g_current_tape) { g_current_tape = &tape_; }
TapeScope::~TapeScope() { g_current_tape = previous_; }

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

void backward(const Tensor& loss) { Tape::current().backward(loss); }

// ---------------------------------------------------------------------------
// Primitives

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_fail("matmul", a.shape(), b.shape());
  const Eigen::Index n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Eigen::VectorXd out(n * m);
  MutMap(out.data(), n, m).noalias() = a.mat() * b.mat();
  Tensor inputs[] = {a, b};
  return finish({static_cast<int>(n), static_cast<int>(m)}, std::move(out), inputs,
                [a, b, n, k, m](const Eigen::VectorXd& g) {
                  auto G = as_matrix(g, n, m);
                  if (a.requires_grad()) {
                    Eigen::VectorXd da(n * k);
                    MutMap(da.data(), n, k).noalias() = G * b.mat().transpose();
                    grad_to(a, da);
                  }
                  if (b.requires_grad()) {
                    Eigen::VectorXd db(k * m);
                    MutMap(db.data(), k, m).noalias() = a.mat().transpose() * G;
                    grad_to(b, db);
                  }
                });
}

namespace {

Tensor add_or_sub(const Tensor& a, const Tensor& b, double sign, std::string_view kind) {
  Tensor inputs[] = {a, b};
  if (a.shape() == b.shape()) {
    Eigen::VectorXd out = a.data() + sign * b.data();
    return finish(a.shape(), std::move(out), inputs, [a, b, sign](const Eigen::VectorXd& g) {
      grad_to(a, g);
      if (b.requires_grad()) grad_to(b, sign * g);
    });
  }
  if (b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.dim(0)) {
    auto [rows, cols] = rows_cols(a);
    Eigen::VectorXd out(a.size());
    MutMap(out.data(), rows, cols) = a.mat().rowwise() + sign * b.mat().row(0);
    return finish(a.shape(), std::move(out), inputs,
                  [a, b, sign, rows, cols](const Eigen::VectorXd& g) {
                    grad_to(a, g);
                    if (b.requires_grad()) {
                      Eigen::VectorXd db = sign * as_matrix(g, rows, cols).colwise().sum().transpose();
                      grad_to(b, db);
                    }
                  });
  }
  shape_fail(kind, a.shape(), b.shape());
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_or_sub(a, b, 1.0, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return add_or_sub(a, b, -1.0, "sub"); }

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail("mul", a.shape(), b.shape());
  Eigen::VectorXd out = a.data().cwiseProduct(b.data());
  Tensor inputs[] = {a, b};
  return finish(a.shape(), std::move(out), inputs, [a, b](const Eigen::VectorXd& g) {
    if (a.requires_grad()) grad_to(a, g.cwiseProduct(b.data()));
    if (b.requires_grad()) grad_to(b, g.cwiseProduct(a.data()));
  });
}

Tensor scale(const Tensor& a, double s) {
  Tensor inputs[] = {a};
  return finish(a.shape(), s * a.data(), inputs, [a, s](const Eigen::VectorXd& g) {
    grad_to(a, s * g);
  });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  const int ax = normalize_axis("concat", axis, static_cast<int>(first.size()));
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<int>(first.size())) shape_fail("concat", first, p.shape());
    for (int i = 0; i < p.rank(); ++i) {
      if (i != ax && p.dim(i) != first[i]) shape_fail("concat", first, p.shape());
    }
    out_shape[ax] += p.dim(ax);
  }
  const AxisSplit whole = split_axis(out_shape, ax);
  Eigen::VectorXd out(shape_numel(out_shape));
  std::vector<Eigen::Index> offsets;
  Eigen::Index running = 0;
  for (const auto& p : parts) {
    offsets.push_back(running);
    const Eigen::Index block = p.dim(ax) * whole.inner;
    for (Eigen::Index o = 0; o < whole.outer; ++o) {
      out.segment(o * whole.len * whole.inner + running * whole.inner, block) =
          p.data().segment(o * block, block);
    }
    running += p.dim(ax);
  }
  std::vector<Tensor> keep(parts.begin(), parts.end());
  return finish(out_shape, std::move(out), parts,
                [keep, offsets, whole, ax](const Eigen::VectorXd& g) {
                  for (std::size_t i = 0; i < keep.size(); ++i) {
                    const auto& p = keep[i];
                    if (!p.requires_grad()) continue;
                    const Eigen::Index block = p.dim(ax) * whole.inner;
                    Eigen::VectorXd dp(p.size());
                    for (Eigen::Index o = 0; o < whole.outer; ++o) {
                      dp.segment(o * block, block) =
                          g.segment(o * whole.len * whole.inner + offsets[i] * whole.inner, block);
                    }
                    grad_to(p, dp);
                  }
                });
}

Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) shape_fail("reshape", a.shape(), shape, "element count mismatch");
  Tensor inputs[] = {a};
  return finish(std::move(shape), a.data(), inputs, [a](const Eigen::VectorXd& g) { grad_to(a, g); });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(a.shape()));
  const Eigen::Index r = a.dim(0), c = a.dim(1);
  Eigen::VectorXd out(a.size());
  MutMap(out.data(), c, r) = a.mat().transpose();
  Tensor inputs[] = {a};
  return finish({static_cast<int>(c), static_cast<int>(r)}, std::move(out), inputs,
                [a, r, c](const Eigen::VectorXd& g) {
                  Eigen::VectorXd da(r * c);
                  MutMap(da.data(), r, c) = as_matrix(g, c, r).transpose();
                  grad_to(a, da);
                });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) throw ShapeError("embedding-lookup: table must be rank 2, got " + shape_str(table.shape()));
  if (ids.empty()) throw ShapeError("embedding-lookup: empty id list");
  const Eigen::Index n = table.dim(0), w = table.dim(1);
  Eigen::VectorXd out(static_cast<Eigen::Index>(ids.size()) * w);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= n) {
      throw std::out_of_range("embedding-lookup: id " + std::to_string(ids[i]) +
                              " outside table " + shape_str(table.shape()));
    }
    out.segment(static_cast<Eigen::Index>(i) * w, w) = table.data().segment(ids[i] * w, w);
  }
  std::vector<int> keep(ids.begin(), ids.end());
  Tensor inputs[] = {table};
  return finish({static_cast<int>(ids.size()), static_cast<int>(w)}, std::move(out), inputs,
                [table, keep, n, w](const Eigen::VectorXd& g) {
                  Eigen::VectorXd dt = Eigen::VectorXd::Zero(n * w);
                  for (std::size_t i = 0; i < keep.size(); ++i) {
                    dt.segment(keep[i] * w, w) += g.segment(static_cast<Eigen::Index>(i) * w, w);
                  }
                  grad_to(table, dt);
                });
}

namespace {

template <typename F>
void for_each_lane(const AxisSplit& s, F&& f) {
  for (Eigen::Index o = 0; o < s.outer; ++o) {
    for (Eigen::Index i = 0; i < s.inner; ++i) f(o * s.len * s.inner + i);
  }
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
  const int ax = normalize_axis("softmax", axis, a.rank());
  const AxisSplit s = split_axis(a.shape(), ax);
  Eigen::VectorXd out(a.size());
  const auto& x = a.data();
  for_each_lane(s, [&](Eigen::Index base) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < s.len; ++j) mx = std::max(mx, x[base + j * s.inner]);
    double z = 0.0;
    for (Eigen::Index j = 0; j < s.len; ++j) {
      out[base + j * s.inner] = std::exp(x[base + j * s.inner] - mx);
      z += out[base + j * s.inner];
    }
    for (Eigen::Index j = 0; j < s.len; ++j) out[base + j * s.inner] /= z;
  });
  Tensor inputs[] = {a};
  Eigen::VectorXd y = out;
  return finish(a.shape(), std::move(out), inputs, [a, s, y](const Eigen::VectorXd& g) {
    Eigen::VectorXd dx(y.size());
    for_each_lane(s, [&](Eigen::Index base) {
      double dot = 0.0;
      for (Eigen::Index j = 0; j < s.len; ++j) dot += g[base + j * s.inner] * y[base + j * s.inner];
      for (Eigen::Index j = 0; j < s.len; ++j) {
        const Eigen::Index k = base + j * s.inner;
        dx[k] = y[k] * (g[k] - dot);
      }
    });
    grad_to(a, dx);
  });
}

Tensor log_softmax(const Tensor& a, int axis) {
  const int ax = normalize_axis("log-softmax", axis, a.rank());
  const AxisSplit s = split_axis(a.shape(), ax);
  Eigen::VectorXd out(a.size());
  const auto& x = a.data();
  for_each_lane(s, [&](Eigen::Index base) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < s.len; ++j) mx = std::max(mx, x[base + j * s.inner]);
    double z = 0.0;
    for (Eigen::Index j = 0; j < s.len; ++j) z += std::exp(x[base + j * s.inner] - mx);
    const double lse = mx + std::log(z);
    for (Eigen::Index j = 0; j < s.len; ++j) out[base + j * s.inner] = x[base + j * s.inner] - lse;
  });
  Tensor inputs[] = {a};
  Eigen::VectorXd y = out;
  return finish(a.shape(), std::move(out), inputs, [a, s, y](const Eigen::VectorXd& g) {
    Eigen::VectorXd dx(y.size());
    for_each_lane(s, [&](Eigen::Index base) {
      double total = 0.0;
      for (Eigen::Index j = 0; j < s.len; ++j) total += g[base + j * s.inner];
      for (Eigen::Index j = 0; j < s.len; ++j) {
        const Eigen::Index k = base + j * s.inner;
        dx[k] = g[k] - std::exp(y[k]) * total;
      }
    });
    grad_to(a, dx);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const Eigen::Index w = x.shape().back();
  const Eigen::Index rows = x.size() / w;
  for (const Tensor* p : {&gamma, &beta}) {
    if (p->defined() && (p->rank() != 1 || p->dim(0) != w)) shape_fail("layer-norm", x.shape(), p->shape());
  }
  ConstMap X(x.data().data(), rows, w);
  RowMatrix xhat(rows, w);
  Eigen::VectorXd inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mu = X.row(r).mean();
    const double var = (X.row(r).array() - mu).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (X.row(r).array() - mu) * inv_std[r];
  }
  Eigen::VectorXd out(x.size());
  MutMap Y(out.data(), rows, w);
  Y = xhat;
  if (gamma.defined()) Y = Y.array().rowwise() * gamma.mat().row(0).array();
  if (beta.defined()) Y = Y.rowwise() + beta.mat().row(0);
  std::vector<Tensor> inputs{x};
  if (gamma.defined()) inputs.push_back(gamma);
  if (beta.defined()) inputs.push_back(beta);
  return finish(x.shape(), std::move(out), inputs,
                [x, gamma, beta, xhat, inv_std, rows, w](const Eigen::VectorXd& g) {
                  ConstMap G(g.data(), rows, w);
                  RowMatrix dxhat = G;
                  if (gamma.defined()) dxhat = dxhat.array().rowwise() * gamma.mat().row(0).array();
                  if (x.requires_grad()) {
                    Eigen::VectorXd dx(rows * w);
                    MutMap DX(dx.data(), rows, w);
                    for (Eigen::Index r = 0; r < rows; ++r) {
                      const double m1 = dxhat.row(r).mean();
                      const double m2 = dxhat.row(r).dot(xhat.row(r)) / static_cast<double>(w);
                      DX.row(r) = inv_std[r] * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                    }
                    grad_to(x, dx);
                  }
                  if (gamma.defined() && gamma.requires_grad()) {
                    Eigen::VectorXd dg = G.cwiseProduct(xhat).colwise().sum().transpose();
                    grad_to(gamma, dg);
                  }
                  if (beta.defined() && beta.requires_grad()) {
                    Eigen::VectorXd db = G.colwise().sum().transpose();
                    grad_to(beta, db);
                  }
                });
}

Tensor gelu(const Tensor& x) {
  const auto& v = x.data();
  Eigen::VectorXd out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = 0.5 * v[i] * (1.0 + std::erf(v[i] * M_SQRT1_2));
  Tensor inputs[] = {x};
  return finish(x.shape(), std::move(out), inputs, [x](const Eigen::VectorXd& g) {
    const auto& v = x.data();
    Eigen::VectorXd dx(v.size());
    const double inv_sqrt_2pi = 0.5 * M_2_SQRTPI * M_SQRT1_2;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(v[i] * M_SQRT1_2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v[i] * v[i]);
      dx[i] = g[i] * (cdf + v[i] * pdf);
    }
    grad_to(x, dx);
  });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  Eigen::VectorXd out = x.data().unaryExpr([slope](double v) { return v > 0 ? v : slope * v; });
  Tensor inputs[] = {x};
  return finish(x.shape(), std::move(out), inputs, [x, slope](const Eigen::VectorXd& g) {
    Eigen::VectorXd dx = g.binaryExpr(x.data(), [slope](double gi, double v) { return v > 0 ? gi : slope * gi; });
    grad_to(x, dx);
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.size());
  Tensor inputs[] = {x};
  return finish({1}, Eigen::VectorXd::Constant(1, x.data().mean()), inputs,
                [x, n](const Eigen::VectorXd& g) {
                  grad_to(x, Eigen::VectorXd::Constant(x.size(), g[0] / n));
                });
}

Tensor sum(const Tensor& x) {
  Tensor inputs[] = {x};
  return finish({1}, Eigen::VectorXd::Constant(1, x.data().sum()), inputs,
                [x](const Eigen::VectorXd& g) {
                  grad_to(x, Eigen::VectorXd::Constant(x.size(), g[0]));
                });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail("mse", a.shape(), b.shape());
  const double n = static_cast<double>(a.size());
  Eigen::VectorXd diff = a.data() - b.data();
  Tensor inputs[] = {a, b};
  return finish({1}, Eigen::VectorXd::Constant(1, diff.squaredNorm() / n), inputs,
                [a, b, diff, n](const Eigen::VectorXd& g) {
                  Eigen::VectorXd d = (2.0 * g[0] / n) * diff;
                  if (a.requires_grad()) grad_to(a, d);
                  if (b.requires_grad()) grad_to(b, -d);
                });
}

Tensor nll(const Tensor& log_probs, std::span<const int> targets) {
  if (log_probs.rank() != 2 || log_probs.dim(0) != static_cast<int>(targets.size())) {
    shape_fail("nll-from-log-softmax", log_probs.shape(), {static_cast<int>(targets.size())});
  }
  const Eigen::Index rows = log_probs.dim(0), w = log_probs.dim(1);
  double total = 0.0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t < 0 || t >= w) throw std::out_of_range("nll-from-log-softmax: target " + std::to_string(t) + " out of range");
    total -= log_probs.data()[r * w + t];
  }
  std::vector<int> keep(targets.begin(), targets.end());
  Tensor inputs[] = {log_probs};
  return finish({1}, Eigen::VectorXd::Constant(1, total / static_cast<double>(rows)), inputs,
                [log_probs, keep, rows, w](const Eigen::VectorXd& g) {
                  Eigen::VectorXd d = Eigen::VectorXd::Zero(rows * w);
                  for (Eigen::Index r = 0; r < rows; ++r) d[r * w + keep[r]] = -g[0] / static_cast<double>(rows);
                  grad_to(log_probs, d);
                });
}

Tensor l2_normalize(const Tensor& x, int axis) {
  const int ax = normalize_axis("l2-normalize", axis, x.rank());
  const AxisSplit s = split_axis(x.shape(), ax);
  Eigen::VectorXd out(x.size());
  std::vector<double> norms;
  norms.reserve(static_cast<std::size_t>(s.outer * s.inner));
  const auto& v = x.data();
  for_each_lane(s, [&](Eigen::Index base) {
    double sq = 0.0;
    for (Eigen::Index j = 0; j < s.len; ++j) sq += v[base + j * s.inner] * v[base + j * s.inner];
    const double norm = std::sqrt(sq);
    norms.push_back(norm);
    const double denom = std::max(norm, kNormFloor);
    for (Eigen::Index j = 0; j < s.len; ++j) out[base + j * s.inner] = v[base + j * s.inner] / denom;
  });
  Tensor inputs[] = {x};
  Eigen::VectorXd y = out;
  return finish(x.shape(), std::move(out), inputs, [x, s, y, norms](const Eigen::VectorXd& g) {
    Eigen::VectorXd dx(y.size());
    std::size_t lane = 0;
    for_each_lane(s, [&](Eigen::Index base) {
      const double norm = norms[lane++];
      if (norm > kNormFloor) {
        double dot = 0.0;
        for (Eigen::Index j = 0; j < s.len; ++j) dot += y[base + j * s.inner] * g[base + j * s.inner];
        for (Eigen::Index j = 0; j < s.len; ++j) {
          const Eigen::Index k = base + j * s.inner;
          dx[k] = (g[k] - y[k] * dot) / norm;
        }
      } else {
        for (Eigen::Index j = 0; j < s.len; ++j) dx[base + j * s.inner] = g[base + j * s.inner] / kNormFloor;
      }
    });
    grad_to(x, dx);
  });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() > 2) shape_fail("cosine-similarity", a.shape(), b.shape());
  auto [rows, w] = rows_cols(a);
  ConstMap A(a.data().data(), rows, w), B(b.data().data(), rows, w);
  Eigen::VectorXd out(rows), na(rows), nb(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    na[r] = A.row(r).norm();
    nb[r] = B.row(r).norm();
    out[r] = A.row(r).dot(B.row(r)) / (std::max(na[r], kNormFloor) * std::max(nb[r], kNormFloor));
  }
  Tensor inputs[] = {a, b};
  Eigen::VectorXd cos = out;
  return finish({static_cast<int>(rows)}, std::move(out), inputs,
                [a, b, rows, w, na, nb, cos](const Eigen::VectorXd& g) {
                  ConstMap A(a.data().data(), rows, w), B(b.data().data(), rows, w);
                  Eigen::VectorXd da(rows * w), db(rows * w);
                  MutMap DA(da.data(), rows, w), DB(db.data(), rows, w);
                  for (Eigen::Index r = 0; r < rows; ++r) {
                    const double ca = std::max(na[r], kNormFloor), cb = std::max(nb[r], kNormFloor);
                    DA.row(r) = g[r] * B.row(r) / (ca * cb);
                    DB.row(r) = g[r] * A.row(r) / (ca * cb);
                    if (na[r] > kNormFloor) DA.row(r) -= g[r] * cos[r] * A.row(r) / (na[r] * na[r]);
                    if (nb[r] > kNormFloor) DB.row(r) -= g[r] * cos[r] * B.row(r) / (nb[r] * nb[r]);
                  }
                  if (a.requires_grad()) grad_to(a, da);
                  if (b.requires_grad()) grad_to(b, db);
                });
}

// ---------------------------------------------------------------------------
// Dispatch

Tensor apply_primitive(std::string_view kind, std::span<const Tensor> in, const PrimitiveAttrs& at) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) {
      throw std::invalid_argument(std::string(kind) + ": expected " + std::to_string(n) +
                                  " inputs, got " + std::to_string(in.size()));
    }
  };
  if (kind == "matmul") return need(2), matmul(in[0], in[1]);
  if (kind == "add") return need(2), add(in[0], in[1]);
  if (kind == "sub") return need(2), sub(in[0], in[1]);
  if (kind == "elementwise-mul") return need(2), mul(in[0], in[1]);
  if (kind == "scalar-mul") return need(1), scale(in[0], at.scalar);
  if (kind == "concat") return concat(in, at.axis);
  if (kind == "reshape") return need(1), reshape(in[0], at.shape);
  if (kind == "transpose") return need(1), transpose(in[0]);
  if (kind == "embedding-lookup") return need(1), embedding_lookup(in[0], at.ids);
  if (kind == "softmax") return need(1), softmax(in[0], at.axis);
  if (kind == "log-softmax") return need(1), log_softmax(in[0], at.axis);
  if (kind == "layer-norm") {
    if (in.empty() || in.size() > 3) need(1);
    return layer_norm(in[0], in.size() > 1 ? in[1] : Tensor{}, in.size() > 2 ? in[2] : Tensor{});
  }
  if (kind == "gelu") return need(1), gelu(in[0]);
  if (kind == "leaky-relu") return need(1), leaky_relu(in[0], at.slope);
  if (kind == "mean") return need(1), mean(in[0]);
  if (kind == "sum") return need(1), sum(in[0]);
  if (kind == "mse") return need(2), mse(in[0], in[1]);
  if (kind == "nll-from-log-softmax") return need(1), nll(in[0], at.ids);
  if (kind == "l2-normalize") return need(1), l2_normalize(in[0], at.axis);
  if (kind == "cosine-similarity") return need(2), cosine_similarity(in[0], in[1]);
  throw std::invalid_argument("unknown primitive kind '" + std::string(kind) + "'");
}

// ---------------------------------------------------------------------------
// Gradient checking

double check_gradients(const std::function<Tensor()>& f, std::span<Tensor> params, double h,
                       std::size_t max_coords_per_param) {
  auto evaluate = [&]() {
    NoGradGuard guard;
    return f().item();
  };
  const double first = evaluate();
  const double second = evaluate();
  if (first != second) {
    throw std::runtime_error("check_gradients: function is not deterministic (" +
                             std::to_string(first) + " vs " + std::to_string(second) + ")");
  }

  std::vector<Eigen::VectorXd> analytic;
  {
    TapeScope scope;
    for (auto& p : params) p.zero_grad();
    Tensor loss = f();
    if (loss.requires_grad()) scope.tape().backward(loss);
    for (auto& p : params) analytic.push_back(p.grad());
    for (auto& p : params) p.zero_grad();
  }

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    const Eigen::Index n = p.size();
    Eigen::Index stride = 1;
    if (max_coords_per_param > 0 && static_cast<std::size_t>(n) > max_coords_per_param) {
      stride = (n + static_cast<Eigen::Index>(max_coords_per_param) - 1) /
               static_cast<Eigen::Index>(max_coords_per_param);
    }
    for (Eigen::Index i = 0; i < n; i += stride) {
      const double orig = p.mutable_data()[i];
      p.mutable_data()[i] = orig + h;
      const double up = evaluate();
      p.mutable_data()[i] = orig - h;
      const double down = evaluate();
      p.mutable_data()[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[pi][i];
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace gill
