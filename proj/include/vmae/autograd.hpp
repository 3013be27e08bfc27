#pragma once

// A small reverse-mode tape over row-major Eigen matrices. Rows are tokens,
// columns are features. Parameters live outside the tape; the tape refers to
// them without copying and adds gradients back on backward().

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "vmae/error.hpp"
#include "vmae/rng.hpp"

namespace vmae {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct Parameter {
  Mat<Scalar> value;
  Mat<Scalar> grad;
  bool trainable = true;
  bool decay = true;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Named parameters, iterated in name order. Names are dotted module paths
/// ("encoder.blocks.0.attn.qkv.weight") and are the checkpoint keys.
template <typename Scalar>
class ParameterStore {
 public:
  Parameter<Scalar>& add(const std::string& name, Mat<Scalar> value, bool trainable = true, bool decay = true) {
    auto [it, inserted] = params_.try_emplace(name);
    if (!inserted) throw Error(ErrorCode::kInvalidConfig, "duplicate parameter " + name);
    it->second.value = std::move(value);
    it->second.trainable = trainable;
    it->second.decay = decay;
    it->second.zero_grad();
    return it->second;
  }

  Parameter<Scalar>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error(ErrorCode::kInvalidConfig, "unknown parameter " + name);
    return it->second;
  }
  const Parameter<Scalar>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error(ErrorCode::kInvalidConfig, "unknown parameter " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  void zero_grad() {
    for (auto& [_, p] : params_) p.zero_grad();
  }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Parameter<Scalar>> params_;
};

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

template <typename Scalar>
class Tape {
 public:
  using Matrix = Mat<Scalar>;
  /// Receives the output gradient and returns one gradient per input (an
  /// empty matrix for inputs that need none).
  using CustomBackward = std::function<std::vector<Matrix>(const Matrix& out_grad)>;

  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix m) { return push(std::move(m), false); }

  Var param(Parameter<Scalar>& p) {
    Node n;
    n.ref = &p.value;
    n.param = &p;
    n.needs_grad = record_ && p.trainable;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  const Matrix& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.ref ? *n.ref : n.value;
  }
  Eigen::Index rows(Var v) const { return value(v).rows(); }
  Eigen::Index cols(Var v) const { return value(v).cols(); }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

  /// Gradient accumulated on v by the last backward(); zero if none reached it.
  Matrix grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() == 0) return Matrix::Zero(value(v).rows(), value(v).cols());
    return n.grad;
  }

  /// Seeds d(loss)/d(loss) = 1 and propagates. Parameter gradients are added
  /// to Parameter::grad, so several tapes may accumulate into one store.
  void backward(Var loss, Scalar seed = Scalar(1)) {
    if (!record_) throw Error(ErrorCode::kInvalidConfig, "backward on a non-recording tape");
    if (value(loss).size() != 1) throw Error(ErrorCode::kShapeMismatch, "backward needs a scalar");
    nodes_[loss.id].grad = Matrix::Constant(1, 1, seed);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      if (n.backward) n.backward(n.grad);
      if (n.param) n.param->grad += n.grad;
    }
  }

  // ----- elementwise and linear algebra -----

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    return emit({a, b}, value(a) + value(b), [this, a, b](const Matrix& g) {
      accumulate(a, g);
      accumulate(b, g);
    });
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    return emit({a, b}, value(a) - value(b), [this, a, b](const Matrix& g) {
      accumulate(a, g);
      accumulate(b, -g);
    });
  }

  /// a + row, with row (1 x n) broadcast over every row of a.
  Var add_row(Var a, Var row) {
    if (rows(row) != 1 || cols(row) != cols(a)) throw Error(ErrorCode::kShapeMismatch, "add_row");
    Matrix out = value(a);
    out.rowwise() += value(row).row(0);
    return emit({a, row}, std::move(out), [this, a, row](const Matrix& g) {
      accumulate(a, g);
      accumulate(row, g.colwise().sum());
    });
  }

  Var scale(Var a, Scalar s) {
    return emit({a}, value(a) * s, [this, a, s](const Matrix& g) { accumulate(a, g * s); });
  }

  Var matmul(Var a, Var b) {
    if (cols(a) != rows(b)) throw Error(ErrorCode::kShapeMismatch, "matmul inner dimensions");
    Matrix out = value(a) * value(b);
    return emit({a, b}, std::move(out), [this, a, b](const Matrix& g) {
      if (needs_grad(a)) accumulate(a, g * value(b).transpose());
      if (needs_grad(b)) accumulate(b, value(a).transpose() * g);
    });
  }

  /// a * b^T
  Var matmul_nt(Var a, Var b) {
    if (cols(a) != cols(b)) throw Error(ErrorCode::kShapeMismatch, "matmul_nt inner dimensions");
    Matrix out = value(a) * value(b).transpose();
    return emit({a, b}, std::move(out), [this, a, b](const Matrix& g) {
      if (needs_grad(a)) accumulate(a, g * value(b));
      if (needs_grad(b)) accumulate(b, g.transpose() * value(a));
    });
  }

  /// x * W + b with b broadcast over rows.
  Var linear(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }

  /// Gaussian error linear unit, erf form.
  Var gelu(Var a) {
    const Matrix& x = value(a);
    Matrix out = x.unaryExpr([](Scalar v) { return Scalar(0.5) * v * (Scalar(1) + std::erf(v * Scalar(0.7071067811865476))); });
    return emit({a}, std::move(out), [this, a](const Matrix& g) {
      const Matrix& x = value(a);
      Matrix d = x.unaryExpr([](Scalar v) {
        const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(v * Scalar(0.7071067811865476)));
        const Scalar pdf = std::exp(Scalar(-0.5) * v * v) * Scalar(0.3989422804014327);
        return cdf + v * pdf;
      });
      accumulate(a, g.cwiseProduct(d));
    });
  }

  /// Per-row layer normalization with affine gain and bias (1 x n each).
  Var layer_norm(Var x, Var gain, Var bias, Scalar eps = Scalar(1e-6)) {
    const Matrix& in = value(x);
    const Eigen::Index n = in.cols();
    if (cols(gain) != n || cols(bias) != n) throw Error(ErrorCode::kShapeMismatch, "layer_norm affine width");
    Matrix xhat(in.rows(), n);
    Vec<Scalar> inv_std(in.rows());
    for (Eigen::Index r = 0; r < in.rows(); ++r) {
      const Scalar mean = in.row(r).mean();
      const auto centered = in.row(r).array() - mean;
      const Scalar var = centered.square().mean();
      inv_std(r) = Scalar(1) / std::sqrt(var + eps);
      xhat.row(r) = centered.matrix() * inv_std(r);
    }
    Matrix out = xhat.array().rowwise() * value(gain).row(0).array();
    out.rowwise() += value(bias).row(0);
    return emit({x, gain, bias}, std::move(out),
                [this, x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Matrix& g) {
                  if (needs_grad(gain)) accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
                  if (needs_grad(bias)) accumulate(bias, g.colwise().sum());
                  if (!needs_grad(x)) return;
                  const Matrix dxhat = g.array().rowwise() * value(gain).row(0).array();
                  Matrix dx(dxhat.rows(), dxhat.cols());
                  for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                    const Scalar m1 = dxhat.row(r).mean();
                    const Scalar m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
                    dx.row(r) = (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r);
                  }
                  accumulate(x, dx);
                });
  }

  Var softmax_rows(Var a) {
    Matrix out = softmax_rows_value(value(a));
    Matrix y = out;
    return emit({a}, std::move(out), [this, a, y = std::move(y)](const Matrix& g) {
      const Vec<Scalar> dots = g.cwiseProduct(y).rowwise().sum();
      Matrix dx = y.cwiseProduct((g.colwise() - dots));
      accumulate(a, dx);
    });
  }

  /// Each row divided by its Euclidean norm.
  Var l2_normalize_rows(Var a) {
    const Matrix& x = value(a);
    Vec<Scalar> norms = x.rowwise().norm();
    for (Eigen::Index r = 0; r < norms.size(); ++r) {
      if (!(norms(r) >= Scalar(1e-12))) throw Error(ErrorCode::kZeroVector, "cannot normalize a zero row");
    }
    Matrix out = x.array().colwise() / norms.array();
    Matrix y = out;
    return emit({a}, std::move(out), [this, a, y = std::move(y), norms = std::move(norms)](const Matrix& g) {
      const Vec<Scalar> dots = g.cwiseProduct(y).rowwise().sum();
      Matrix dx = (g - (y.array().colwise() * dots.array()).matrix()).array().colwise() / norms.array();
      accumulate(a, dx);
    });
  }

  // ----- structural -----

  Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > cols(a)) throw Error(ErrorCode::kShapeMismatch, "slice_cols");
    Matrix out = value(a).middleCols(start, count);
    return emit({a}, std::move(out), [this, a, start, count](const Matrix& g) {
      Matrix full = Matrix::Zero(rows(a), cols(a));
      full.middleCols(start, count) = g;
      accumulate(a, full);
    });
  }

  Var concat_cols(std::span<const Var> parts) {
    Eigen::Index total = 0;
    for (Var p : parts) {
      if (rows(p) != rows(parts[0])) throw Error(ErrorCode::kShapeMismatch, "concat_cols rows");
      total += cols(p);
    }
    Matrix out(rows(parts[0]), total);
    Eigen::Index at = 0;
    for (Var p : parts) {
      out.middleCols(at, cols(p)) = value(p);
      at += cols(p);
    }
    std::vector<Var> ins(parts.begin(), parts.end());
    return emit(ins, std::move(out), [this, ins](const Matrix& g) {
      Eigen::Index at = 0;
      for (Var p : ins) {
        if (needs_grad(p)) accumulate(p, g.middleCols(at, cols(p)));
        at += cols(p);
      }
    });
  }

  Var concat_rows(std::span<const Var> parts) {
    Eigen::Index total = 0;
    for (Var p : parts) {
      if (cols(p) != cols(parts[0])) throw Error(ErrorCode::kShapeMismatch, "concat_rows cols");
      total += rows(p);
    }
    Matrix out(total, cols(parts[0]));
    Eigen::Index at = 0;
    for (Var p : parts) {
      out.middleRows(at, rows(p)) = value(p);
      at += rows(p);
    }
    std::vector<Var> ins(parts.begin(), parts.end());
    return emit(ins, std::move(out), [this, ins](const Matrix& g) {
      Eigen::Index at = 0;
      for (Var p : ins) {
        if (needs_grad(p)) accumulate(p, g.middleRows(at, rows(p)));
        at += rows(p);
      }
    });
  }

  /// out.row(k) = a.row(index[k]); repeated indices accumulate on backward.
  Var gather_rows(Var a, std::vector<Eigen::Index> index) {
    const Matrix& x = value(a);
    Matrix out(static_cast<Eigen::Index>(index.size()), x.cols());
    for (std::size_t k = 0; k < index.size(); ++k) {
      if (index[k] < 0 || index[k] >= x.rows()) throw Error(ErrorCode::kIndexOutOfRange, "gather_rows");
      out.row(static_cast<Eigen::Index>(k)) = x.row(index[k]);
    }
    return emit({a}, std::move(out), [this, a, index = std::move(index)](const Matrix& g) {
      Matrix dx = Matrix::Zero(rows(a), cols(a));
      for (std::size_t k = 0; k < index.size(); ++k) dx.row(index[k]) += g.row(static_cast<Eigen::Index>(k));
      accumulate(a, dx);
    });
  }

  /// Sum of every entry, as a 1 x 1.
  Var sum(Var a) {
    Matrix out = Matrix::Constant(1, 1, value(a).sum());
    return emit({a}, std::move(out), [this, a](const Matrix& g) {
      accumulate(a, Matrix::Constant(rows(a), cols(a), g(0, 0)));
    });
  }

  /// Node whose value and input gradients come from the caller; used to put
  /// the closed-form losses on the tape.
  Var custom(std::vector<Var> inputs, Matrix out, CustomBackward backward) {
    return emit(inputs, std::move(out), [this, inputs, backward = std::move(backward)](const Matrix& g) {
      auto grads = backward(g);
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (k < grads.size() && grads[k].size() != 0 && needs_grad(inputs[k])) accumulate(inputs[k], grads[k]);
      }
    });
  }

  static Matrix softmax_rows_value(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const Scalar mx = x.row(r).maxCoeff();
      out.row(r) = (x.row(r).array() - mx).exp();
      out.row(r) /= out.row(r).sum();
    }
    return out;
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;
    Matrix grad;
    Parameter<Scalar>* param = nullptr;
    bool needs_grad = false;
    std::function<void(const Matrix&)> backward;
  };

  Var push(Matrix m, bool needs_grad) {
    Node n;
    n.value = std::move(m);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  template <typename Fn>
  Var emit(std::initializer_list<Var> inputs, Matrix out, Fn&& fn) {
    return emit(std::vector<Var>(inputs), std::move(out), std::forward<Fn>(fn));
  }

  template <typename Fn>
  Var emit(const std::vector<Var>& inputs, Matrix out, Fn&& fn) {
    bool any = false;
    for (Var v : inputs) any = any || nodes_.at(v.id).needs_grad;
    const bool track = record_ && any;
    Var v = push(std::move(out), track);
    if (track) nodes_[v.id].backward = std::forward<Fn>(fn);
    return v;
  }

  template <typename Expr>
  void accumulate(Var v, const Expr& g) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  void check_same(Var a, Var b, const char* what) const {
    if (rows(a) != rows(b) || cols(a) != cols(b)) throw Error(ErrorCode::kShapeMismatch, what);
  }

  bool record_;
  std::deque<Node> nodes_;
};

}  // namespace vmae
