#pragma once

// Reverse-mode automatic differentiation over dense row-major Eigen matrices.
//
// A Tape records every operation of a forward pass; Tape::backward walks the
// record in reverse and accumulates gradients into the Parameter objects that
// were bound as leaves. Every value on the tape is a 2-D matrix; batches are
// stored one item per row.

#include <Eigen/Core>

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

namespace dklrom {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

namespace ad {

/// Optimizer parameter groups (they get different learning rates).
enum class ParamGroup { kNetwork, kGaussianProcess };

template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  ParamGroup group = ParamGroup::kNetwork;

  Parameter() = default;
  Parameter(std::string n, Matrix<Scalar> v, ParamGroup g = ParamGroup::kNetwork)
      : name(std::move(n)), value(std::move(v)), group(g) {
    grad = Matrix<Scalar>::Zero(value.rows(), value.cols());
  }

  void zero_grad() { grad = Matrix<Scalar>::Zero(value.rows(), value.cols()); }
};

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix<Scalar>& value() const { return tape_->value(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Scalar scalar() const { return value()(0, 0); }

  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  /// Called with the tape and the id of the node whose gradient is complete.
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  /// With track_gradients = false, parameters enter as constants and nothing
  /// is retained for a backward pass.
  explicit Tape(bool track_gradients) : track_(track_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Mat value);
  Var<Scalar> parameter(Parameter<Scalar>& p);

  /// Records an operation output. `inputs` decide whether the node needs a gradient.
  Var<Scalar> record(Mat value, std::initializer_list<std::size_t> inputs, Backward backward);
  Var<Scalar> record(Mat value, const std::vector<std::size_t>& inputs, Backward backward);

  const Mat& value(std::size_t id) const { return nodes_[id].value; }
  const Mat& grad(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Adds `delta` into the gradient of node `id` (no-op for constants).
  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& delta) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = delta;
    } else {
      n.grad += delta;
    }
  }

  /// Seeds d(root)/d(root) = 1 and back-propagates. `root` must be 1x1.
  void backward(Var<Scalar> root);

  std::size_t size() const { return nodes_.size(); }
  bool tracking() const { return track_; }

 private:
  struct Node {
    Mat value;
    Mat grad;
    Backward backward;
    Parameter<Scalar>* param = nullptr;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;
  bool track_ = true;
};

// ---------------------------------------------------------------------------
// Elementwise and structural ops. Binary ops broadcast `b` when it is 1x1 or a
// single row matching a's column count.

template <typename Scalar> Var<Scalar> add(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar> Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar> Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar> Var<Scalar> scale(Var<Scalar> a, Scalar c);
/// a (.) c with c a constant matrix of a's shape.
template <typename Scalar> Var<Scalar> mul_const(Var<Scalar> a, const Matrix<Scalar>& c);
template <typename Scalar> Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b);
/// x W^T + b for x (n x in), W (out x in), b (1 x out).
template <typename Scalar> Var<Scalar> linear(Var<Scalar> x, Var<Scalar> w, Var<Scalar> b);

template <typename Scalar> Var<Scalar> elu(Var<Scalar> a);
template <typename Scalar> Var<Scalar> sigmoid(Var<Scalar> a);
template <typename Scalar> Var<Scalar> tanh(Var<Scalar> a);
template <typename Scalar> Var<Scalar> exp(Var<Scalar> a);
template <typename Scalar> Var<Scalar> log(Var<Scalar> a);
template <typename Scalar> Var<Scalar> sqrt(Var<Scalar> a);
template <typename Scalar> Var<Scalar> square(Var<Scalar> a);

template <typename Scalar> Var<Scalar> sum(Var<Scalar> a);
template <typename Scalar> Var<Scalar> mean(Var<Scalar> a);
template <typename Scalar> Var<Scalar> row_sum(Var<Scalar> a);

template <typename Scalar> Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts);
template <typename Scalar> Var<Scalar> concat_rows(const std::vector<Var<Scalar>>& parts);
template <typename Scalar> Var<Scalar> slice_cols(Var<Scalar> a, Index start, Index count);
template <typename Scalar> Var<Scalar> slice_rows(Var<Scalar> a, Index start, Index count);
template <typename Scalar> Var<Scalar> gather_rows(Var<Scalar> a, const std::vector<Index>& rows);

/// Per-row KL[N(mp, vp) || N(mq, vq)] of diagonal Gaussians, summed over columns.
template <typename Scalar>
Var<Scalar> gaussian_kl_rows(Var<Scalar> mp, Var<Scalar> vp, Var<Scalar> mq, Var<Scalar> vq);

template <typename Scalar> Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) { return add(a, b); }
template <typename Scalar> Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) { return sub(a, b); }

// ---------------------------------------------------------------------------
// Convolutions. Each row of the input holds one item laid out channel-major
// (C, H, W).

struct ConvGeometry {
  Index in_channels = 0;
  Index out_channels = 0;
  Index in_h = 0;
  Index in_w = 0;
  Index kernel = 4;
  Index stride = 2;
  Index pad = 1;
  Index out_h = 0;
  Index out_w = 0;

  Index in_size() const { return in_channels * in_h * in_w; }
  Index out_size() const { return out_channels * out_h * out_w; }
};

/// Geometry of a strided convolution; output size follows floor division.
ConvGeometry conv_geometry(Index in_c, Index out_c, Index h, Index w, Index kernel, Index stride,
                           Index pad);
/// Geometry of a transposed convolution producing exactly (out_h, out_w).
ConvGeometry conv_transpose_geometry(Index in_c, Index out_c, Index h, Index w, Index kernel,
                                     Index stride, Index pad, Index out_h, Index out_w);

/// weight: out_c x (in_c * k * k), bias: 1 x out_c.
template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias, const ConvGeometry& g);

/// weight: in_c x (out_c * k * k), bias: 1 x out_c.
template <typename Scalar>
Var<Scalar> conv_transpose2d(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias,
                             const ConvGeometry& g);

}  // namespace ad
}  // namespace dklrom
