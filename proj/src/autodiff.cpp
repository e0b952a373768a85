#include "dklrom/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace dklrom::ad {

template <typename Scalar>
Var<Scalar> Tape<Scalar>::constant(Mat value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var<Scalar>(this, nodes_.size() - 1);
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::parameter(Parameter<Scalar>& p) {
  if (!track_) return constant(p.value);
  if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
  Node n;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var<Scalar>(this, nodes_.size() - 1);
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::record(Mat value, std::initializer_list<std::size_t> inputs,
                                 Backward backward) {
  return record(std::move(value), std::vector<std::size_t>(inputs), std::move(backward));
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::record(Mat value, const std::vector<std::size_t>& inputs,
                                 Backward backward) {
  Node n;
  n.value = std::move(value);
  for (std::size_t id : inputs) {
    if (nodes_[id].requires_grad) {
      n.requires_grad = true;
      break;
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var<Scalar>(this, nodes_.size() - 1);
}

template <typename Scalar>
void Tape<Scalar>::backward(Var<Scalar> root) {
  if (root.rows() != 1 || root.cols() != 1) {
    throw std::invalid_argument("backward: root must be a 1x1 value");
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  accumulate(root.id(), Mat::Ones(1, 1));
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.param != nullptr) {
      n.param->grad += n.grad;
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
}

namespace {

template <typename Scalar>
void check_same_shape(const Matrix<Scalar>& a, const Matrix<Scalar>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

enum class Broadcast { kNone, kRow, kScalar };

template <typename Scalar>
Broadcast broadcast_kind(const Matrix<Scalar>& a, const Matrix<Scalar>& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::kNone;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  throw std::invalid_argument(std::string(op) + ": incompatible shapes");
}

template <typename Scalar>
Matrix<Scalar> expand(const Matrix<Scalar>& b, Index rows, Index cols, Broadcast kind) {
  switch (kind) {
    case Broadcast::kScalar:
      return Matrix<Scalar>::Constant(rows, cols, b(0, 0));
    case Broadcast::kRow:
      return b.replicate(rows, 1);
    default:
      return b;
  }
}

template <typename Scalar>
Matrix<Scalar> reduce(const Matrix<Scalar>& g, Broadcast kind) {
  switch (kind) {
    case Broadcast::kScalar:
      return Matrix<Scalar>::Constant(1, 1, g.sum());
    case Broadcast::kRow:
      return g.colwise().sum();
    default:
      return g;
  }
}

// Unrolls (C, Hb, Wb) images, one per row of `images`, into patch columns for
// a kernel sliding over the (Hs, Ws) grid.
template <typename Scalar>
Matrix<Scalar> im2col(const Matrix<Scalar>& images, Index c, Index hb, Index wb, Index k,
                      Index s, Index p, Index hs, Index ws) {
  const Index batch = images.rows();
  const Index positions = hs * ws;
  Matrix<Scalar> cols = Matrix<Scalar>::Zero(c * k * k, batch * positions);
  for (Index b = 0; b < batch; ++b) {
    const Scalar* img = images.row(b).data();
    for (Index ch = 0; ch < c; ++ch) {
      for (Index ki = 0; ki < k; ++ki) {
        for (Index kj = 0; kj < k; ++kj) {
          Scalar* dst = cols.row((ch * k + ki) * k + kj).data() + b * positions;
          for (Index oy = 0; oy < hs; ++oy) {
            const Index y = oy * s - p + ki;
            if (y < 0 || y >= hb) continue;
            const Scalar* src = img + (ch * hb + y) * wb;
            for (Index ox = 0; ox < ws; ++ox) {
              const Index x = ox * s - p + kj;
              if (x < 0 || x >= wb) continue;
              dst[oy * ws + ox] = src[x];
            }
          }
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col: scatters patch columns back onto images.
template <typename Scalar>
Matrix<Scalar> col2im(const Matrix<Scalar>& cols, Index batch, Index c, Index hb, Index wb,
                      Index k, Index s, Index p, Index hs, Index ws) {
  const Index positions = hs * ws;
  Matrix<Scalar> images = Matrix<Scalar>::Zero(batch, c * hb * wb);
  for (Index b = 0; b < batch; ++b) {
    Scalar* img = images.row(b).data();
    for (Index ch = 0; ch < c; ++ch) {
      for (Index ki = 0; ki < k; ++ki) {
        for (Index kj = 0; kj < k; ++kj) {
          const Scalar* src = cols.row((ch * k + ki) * k + kj).data() + b * positions;
          for (Index oy = 0; oy < hs; ++oy) {
            const Index y = oy * s - p + ki;
            if (y < 0 || y >= hb) continue;
            Scalar* dst = img + (ch * hb + y) * wb;
            for (Index ox = 0; ox < ws; ++ox) {
              const Index x = ox * s - p + kj;
              if (x < 0 || x >= wb) continue;
              dst[x] += src[oy * ws + ox];
            }
          }
        }
      }
    }
  }
  return images;
}

// (B, C*P) rows <-> (C, B*P) channel-major block layout.
template <typename Scalar>
Matrix<Scalar> rows_to_blocks(const Matrix<Scalar>& rows, Index c, Index positions) {
  const Index batch = rows.rows();
  Matrix<Scalar> blocks(c, batch * positions);
  for (Index b = 0; b < batch; ++b) {
    Eigen::Map<const Matrix<Scalar>> item(rows.row(b).data(), c, positions);
    blocks.middleCols(b * positions, positions) = item;
  }
  return blocks;
}

template <typename Scalar>
Matrix<Scalar> blocks_to_rows(const Matrix<Scalar>& blocks, Index c, Index positions) {
  const Index batch = blocks.cols() / positions;
  Matrix<Scalar> rows(batch, c * positions);
  for (Index b = 0; b < batch; ++b) {
    Eigen::Map<Matrix<Scalar>> item(rows.row(b).data(), c, positions);
    item = blocks.middleCols(b * positions, positions);
  }
  return rows;
}

}  // namespace

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  const auto kind = broadcast_kind(a.value(), b.value(), "add");
  Matrix<Scalar> out = a.value() + expand(b.value(), a.rows(), a.cols(), kind);
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib, kind](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    t.accumulate(ia, g);
    if (t.needs_grad(ib)) t.accumulate(ib, reduce(g, kind));
  });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  const auto kind = broadcast_kind(a.value(), b.value(), "sub");
  Matrix<Scalar> out = a.value() - expand(b.value(), a.rows(), a.cols(), kind);
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib, kind](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    t.accumulate(ia, g);
    if (t.needs_grad(ib)) t.accumulate(ib, -reduce(g, kind));
  });
}

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  const auto kind = broadcast_kind(a.value(), b.value(), "mul");
  Matrix<Scalar> bx = expand(b.value(), a.rows(), a.cols(), kind);
  Matrix<Scalar> out = a.value().cwiseProduct(bx);
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib},
                         [ia, ib, kind, bx = std::move(bx)](Tape<Scalar>& t, std::size_t self) {
                           const auto& g = t.grad(self);
                           if (t.needs_grad(ia)) t.accumulate(ia, g.cwiseProduct(bx));
                           if (t.needs_grad(ib)) {
                             Matrix<Scalar> gb = g.cwiseProduct(t.value(ia));
                             t.accumulate(ib, reduce(gb, kind));
                           }
                         });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar c) {
  const auto ia = a.id();
  return a.tape().record(a.value() * c, {ia}, [ia, c](Tape<Scalar>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self) * c);
  });
}

template <typename Scalar>
Var<Scalar> mul_const(Var<Scalar> a, const Matrix<Scalar>& c) {
  check_same_shape(a.value(), c, "mul_const");
  const auto ia = a.id();
  return a.tape().record(a.value().cwiseProduct(c), {ia}, [ia, c](Tape<Scalar>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self).cwiseProduct(c));
  });
}

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Matrix<Scalar> out = a.value() * b.value();
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.needs_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

template <typename Scalar>
Var<Scalar> linear(Var<Scalar> x, Var<Scalar> w, Var<Scalar> b) {
  if (x.cols() != w.cols()) throw std::invalid_argument("linear: input width mismatch");
  if (b.rows() != 1 || b.cols() != w.rows()) throw std::invalid_argument("linear: bad bias");
  Matrix<Scalar> out = x.value() * w.value().transpose();
  out.rowwise() += b.value().row(0);
  const auto ix = x.id(), iw = w.id(), ib = b.id();
  return x.tape().record(std::move(out), {ix, iw, ib}, [ix, iw, ib](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(ix)) t.accumulate(ix, g * t.value(iw));
    if (t.needs_grad(iw)) t.accumulate(iw, g.transpose() * t.value(ix));
    if (t.needs_grad(ib)) t.accumulate(ib, g.colwise().sum());
  });
}

template <typename Scalar>
Var<Scalar> elu(Var<Scalar> a) {
  Matrix<Scalar> out = a.value().unaryExpr(
      [](Scalar v) { return v > Scalar(0) ? v : std::expm1(v); });
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape<Scalar>& t, std::size_t self) {
    const auto& y = t.value(self);
    Matrix<Scalar> d = y.unaryExpr([](Scalar v) { return v > Scalar(0) ? Scalar(1) : v + Scalar(1); });
    t.accumulate(ia, t.grad(self).cwiseProduct(d));
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> a) {
  Matrix<Scalar> out = a.value().unaryExpr([](Scalar v) {
    return v >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-v))
                          : std::exp(v) / (Scalar(1) + std::exp(v));
  });
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape<Scalar>& t, std::size_t self) {
    const auto& y = t.value(self);
    t.accumulate(ia, t.grad(self).cwiseProduct(y.cwiseProduct((Scalar(1) - y.array()).matrix())));
  });
}

template <typename Scalar>
Var<Scalar> tanh(Var<Scalar> a) {
  Matrix<Scalar> out = a.value().array().tanh().matrix();
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape<Scalar>& t, std::size_t self) {
    const auto& y = t.value(self);
    t.accumulate(ia, t.grad(self).cwiseProduct((Scalar(1) - y.array().square()).matrix()));
  });
}

template <typename Scalar>
Var<Scalar> exp(Var<Scalar> a) {
  Matrix<Scalar> out = a.value().array().exp().matrix();
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape<Scalar>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self).cwiseProduct(t.value(self)));
  });
}

template <typename Scalar>
Var<Scalar> log(Var<Scalar> a) {
  Matrix<Scalar> out = a.value().array().log().matrix();
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape<Scalar>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self).cwiseQuotient(t.value(ia)));
  });
}

template <typename Scalar>
Var<Scalar> sqrt(Var<Scalar> a) {
  Matrix<Scalar> out = a.value().array().sqrt().matrix();
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape<Scalar>& t, std::size_t self) {
    t.accumulate(ia, (t.grad(self).array() / (Scalar(2) * t.value(self).array())).matrix());
  });
}

template <typename Scalar>
Var<Scalar> square(Var<Scalar> a) {
  Matrix<Scalar> out = a.value().array().square().matrix();
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape<Scalar>& t, std::size_t self) {
    t.accumulate(ia, Scalar(2) * t.grad(self).cwiseProduct(t.value(ia)));
  });
}

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> a) {
  Matrix<Scalar> out = Matrix<Scalar>::Constant(1, 1, a.value().sum());
  const auto ia = a.id();
  const Index r = a.rows(), c = a.cols();
  return a.tape().record(std::move(out), {ia}, [ia, r, c](Tape<Scalar>& t, std::size_t self) {
    t.accumulate(ia, Matrix<Scalar>::Constant(r, c, t.grad(self)(0, 0)));
  });
}

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> a) {
  if (a.value().size() == 0) throw std::invalid_argument("mean: empty input");
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.value().size()));
}

template <typename Scalar>
Var<Scalar> row_sum(Var<Scalar> a) {
  Matrix<Scalar> out = a.value().rowwise().sum();
  const auto ia = a.id();
  const Index c = a.cols();
  return a.tape().record(std::move(out), {ia}, [ia, c](Tape<Scalar>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self).replicate(1, c));
  });
}

template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  std::vector<std::size_t> ids;
  std::vector<Index> widths;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  Matrix<Scalar> out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts.front().tape().record(std::move(out), ids, [ids, widths](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    Index offset = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (t.needs_grad(ids[i])) t.accumulate(ids[i], g.middleCols(offset, widths[i]));
      offset += widths[i];
    }
  });
}

template <typename Scalar>
Var<Scalar> concat_rows(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  std::vector<std::size_t> ids;
  std::vector<Index> heights;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
    ids.push_back(p.id());
    heights.push_back(p.rows());
  }
  Matrix<Scalar> out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return parts.front().tape().record(std::move(out), ids, [ids, heights](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    Index offset = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (t.needs_grad(ids[i])) t.accumulate(ids[i], g.middleRows(offset, heights[i]));
      offset += heights[i];
    }
  });
}

template <typename Scalar>
Var<Scalar> slice_cols(Var<Scalar> a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw std::out_of_range("slice_cols: range outside input");
  }
  Matrix<Scalar> out = a.value().middleCols(start, count);
  const auto ia = a.id();
  const Index r = a.rows(), c = a.cols();
  return a.tape().record(std::move(out), {ia}, [ia, r, c, start, count](Tape<Scalar>& t, std::size_t self) {
    Matrix<Scalar> g = Matrix<Scalar>::Zero(r, c);
    g.middleCols(start, count) = t.grad(self);
    t.accumulate(ia, g);
  });
}

template <typename Scalar>
Var<Scalar> slice_rows(Var<Scalar> a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw std::out_of_range("slice_rows: range outside input");
  }
  Matrix<Scalar> out = a.value().middleRows(start, count);
  const auto ia = a.id();
  const Index r = a.rows(), c = a.cols();
  return a.tape().record(std::move(out), {ia}, [ia, r, c, start, count](Tape<Scalar>& t, std::size_t self) {
    Matrix<Scalar> g = Matrix<Scalar>::Zero(r, c);
    g.middleRows(start, count) = t.grad(self);
    t.accumulate(ia, g);
  });
}

template <typename Scalar>
Var<Scalar> gather_rows(Var<Scalar> a, const std::vector<Index>& rows) {
  Matrix<Scalar> out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw std::out_of_range("gather_rows: bad index");
    out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  const auto ia = a.id();
  const Index r = a.rows(), c = a.cols();
  return a.tape().record(std::move(out), {ia}, [ia, r, c, rows](Tape<Scalar>& t, std::size_t self) {
    Matrix<Scalar> g = Matrix<Scalar>::Zero(r, c);
    const auto& gs = t.grad(self);
    for (std::size_t i = 0; i < rows.size(); ++i) g.row(rows[i]) += gs.row(static_cast<Index>(i));
    t.accumulate(ia, g);
  });
}

template <typename Scalar>
Var<Scalar> gaussian_kl_rows(Var<Scalar> mp, Var<Scalar> vp, Var<Scalar> mq, Var<Scalar> vq) {
  check_same_shape(mp.value(), vp.value(), "gaussian_kl_rows");
  check_same_shape(mp.value(), mq.value(), "gaussian_kl_rows");
  check_same_shape(mp.value(), vq.value(), "gaussian_kl_rows");
  const auto& a = mp.value().array();
  const auto& va = vp.value().array();
  const auto& b = mq.value().array();
  const auto& vb = vq.value().array();
  // 0.5 log(vq/vp) + (vp + (mp-mq)^2) / (2 vq) - 0.5
  Matrix<Scalar> terms =
      (Scalar(0.5) * (vb / va).log() + (va + (a - b).square()) / (Scalar(2) * vb) - Scalar(0.5))
          .matrix();
  Matrix<Scalar> out = terms.rowwise().sum();
  const auto i_mp = mp.id(), i_vp = vp.id(), i_mq = mq.id(), i_vq = vq.id();
  return mp.tape().record(
      std::move(out), {i_mp, i_vp, i_mq, i_vq}, [=](Tape<Scalar>& t, std::size_t self) {
        const Index cols = t.value(i_mp).cols();
        Matrix<Scalar> g = t.grad(self).replicate(1, cols);
        const auto& ma = t.value(i_mp).array();
        const auto& v1 = t.value(i_vp).array();
        const auto& mb = t.value(i_mq).array();
        const auto& v2 = t.value(i_vq).array();
        const auto ga = g.array();
        if (t.needs_grad(i_mp)) t.accumulate(i_mp, (ga * (ma - mb) / v2).matrix());
        if (t.needs_grad(i_mq)) t.accumulate(i_mq, (ga * (mb - ma) / v2).matrix());
        if (t.needs_grad(i_vp)) {
          t.accumulate(i_vp, (ga * (Scalar(0.5) / v2 - Scalar(0.5) / v1)).matrix());
        }
        if (t.needs_grad(i_vq)) {
          t.accumulate(i_vq,
                       (ga * (Scalar(0.5) / v2 - (v1 + (ma - mb).square()) / (Scalar(2) * v2.square())))
                           .matrix());
        }
      });
}

ConvGeometry conv_geometry(Index in_c, Index out_c, Index h, Index w, Index kernel, Index stride,
                           Index pad) {
  ConvGeometry g;
  g.in_channels = in_c;
  g.out_channels = out_c;
  g.in_h = h;
  g.in_w = w;
  g.kernel = kernel;
  g.stride = stride;
  g.pad = pad;
  g.out_h = (h + 2 * pad - kernel) / stride + 1;
  g.out_w = (w + 2 * pad - kernel) / stride + 1;
  if (g.out_h < 1 || g.out_w < 1) throw std::invalid_argument("conv_geometry: input too small");
  return g;
}

ConvGeometry conv_transpose_geometry(Index in_c, Index out_c, Index h, Index w, Index kernel,
                                     Index stride, Index pad, Index out_h, Index out_w) {
  ConvGeometry g;
  g.in_channels = in_c;
  g.out_channels = out_c;
  g.in_h = h;
  g.in_w = w;
  g.kernel = kernel;
  g.stride = stride;
  g.pad = pad;
  g.out_h = out_h;
  g.out_w = out_w;
  const Index base_h = (h - 1) * stride - 2 * pad + kernel;
  const Index base_w = (w - 1) * stride - 2 * pad + kernel;
  if (out_h < base_h || out_h >= base_h + stride || out_w < base_w || out_w >= base_w + stride) {
    throw std::invalid_argument("conv_transpose_geometry: unreachable output size");
  }
  return g;
}

template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias, const ConvGeometry& g) {
  const Index k = g.kernel;
  if (x.cols() != g.in_size()) throw std::invalid_argument("conv2d: input size mismatch");
  if (weight.rows() != g.out_channels || weight.cols() != g.in_channels * k * k) {
    throw std::invalid_argument("conv2d: weight shape mismatch");
  }
  const Index batch = x.rows();
  const Index positions = g.out_h * g.out_w;
  Matrix<Scalar> cols =
      im2col(x.value(), g.in_channels, g.in_h, g.in_w, k, g.stride, g.pad, g.out_h, g.out_w);
  Matrix<Scalar> blocks = weight.value() * cols;
  blocks.colwise() += bias.value().row(0).transpose();
  Matrix<Scalar> out = blocks_to_rows(blocks, g.out_channels, positions);
  const auto ix = x.id(), iw = weight.id(), ib = bias.id();
  return x.tape().record(std::move(out), {ix, iw, ib}, [=](Tape<Scalar>& t, std::size_t self) {
    Matrix<Scalar> dblocks = rows_to_blocks(t.grad(self), g.out_channels, positions);
    if (t.needs_grad(ib)) t.accumulate(ib, dblocks.rowwise().sum().transpose());
    if (t.needs_grad(iw)) {
      Matrix<Scalar> c = im2col(t.value(ix), g.in_channels, g.in_h, g.in_w, g.kernel, g.stride,
                                g.pad, g.out_h, g.out_w);
      t.accumulate(iw, dblocks * c.transpose());
    }
    if (t.needs_grad(ix)) {
      Matrix<Scalar> dcols = t.value(iw).transpose() * dblocks;
      t.accumulate(ix, col2im(dcols, batch, g.in_channels, g.in_h, g.in_w, g.kernel, g.stride,
                              g.pad, g.out_h, g.out_w));
    }
  });
}

template <typename Scalar>
Var<Scalar> conv_transpose2d(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias,
                             const ConvGeometry& g) {
  const Index k = g.kernel;
  if (x.cols() != g.in_size()) throw std::invalid_argument("conv_transpose2d: input size mismatch");
  if (weight.rows() != g.in_channels || weight.cols() != g.out_channels * k * k) {
    throw std::invalid_argument("conv_transpose2d: weight shape mismatch");
  }
  const Index batch = x.rows();
  const Index positions = g.in_h * g.in_w;
  const Index out_positions = g.out_h * g.out_w;
  Matrix<Scalar> xin = rows_to_blocks(x.value(), g.in_channels, positions);
  Matrix<Scalar> cols = weight.value().transpose() * xin;
  Matrix<Scalar> out =
      col2im(cols, batch, g.out_channels, g.out_h, g.out_w, k, g.stride, g.pad, g.in_h, g.in_w);
  for (Index c = 0; c < g.out_channels; ++c) {
    out.middleCols(c * out_positions, out_positions).array() += bias.value()(0, c);
  }
  const auto ix = x.id(), iw = weight.id(), ib = bias.id();
  return x.tape().record(std::move(out), {ix, iw, ib}, [=](Tape<Scalar>& t, std::size_t self) {
    const auto& gout = t.grad(self);
    if (t.needs_grad(ib)) {
      Matrix<Scalar> db(1, g.out_channels);
      for (Index c = 0; c < g.out_channels; ++c) {
        db(0, c) = gout.middleCols(c * out_positions, out_positions).sum();
      }
      t.accumulate(ib, db);
    }
    Matrix<Scalar> dcols =
        im2col(gout, g.out_channels, g.out_h, g.out_w, g.kernel, g.stride, g.pad, g.in_h, g.in_w);
    if (t.needs_grad(iw)) {
      Matrix<Scalar> xb = rows_to_blocks(t.value(ix), g.in_channels, positions);
      t.accumulate(iw, xb * dcols.transpose());
    }
    if (t.needs_grad(ix)) {
      Matrix<Scalar> dx = t.value(iw) * dcols;
      t.accumulate(ix, blocks_to_rows(dx, g.in_channels, positions));
    }
  });
}

#define DKLROM_INSTANTIATE_AD(S)                                                              \
  template class Tape<S>;                                                                     \
  template Var<S> add(Var<S>, Var<S>);                                                        \
  template Var<S> sub(Var<S>, Var<S>);                                                        \
  template Var<S> mul(Var<S>, Var<S>);                                                        \
  template Var<S> scale(Var<S>, S);                                                           \
  template Var<S> mul_const(Var<S>, const Matrix<S>&);                                        \
  template Var<S> matmul(Var<S>, Var<S>);                                                     \
  template Var<S> linear(Var<S>, Var<S>, Var<S>);                                             \
  template Var<S> elu(Var<S>);                                                                \
  template Var<S> sigmoid(Var<S>);                                                            \
  template Var<S> tanh(Var<S>);                                                               \
  template Var<S> exp(Var<S>);                                                                \
  template Var<S> log(Var<S>);                                                                \
  template Var<S> sqrt(Var<S>);                                                               \
  template Var<S> square(Var<S>);                                                             \
  template Var<S> sum(Var<S>);                                                                \
  template Var<S> mean(Var<S>);                                                               \
  template Var<S> row_sum(Var<S>);                                                            \
  template Var<S> concat_cols(const std::vector<Var<S>>&);                                    \
  template Var<S> concat_rows(const std::vector<Var<S>>&);                                    \
  template Var<S> slice_cols(Var<S>, Index, Index);                                           \
  template Var<S> slice_rows(Var<S>, Index, Index);                                           \
  template Var<S> gather_rows(Var<S>, const std::vector<Index>&);                             \
  template Var<S> gaussian_kl_rows(Var<S>, Var<S>, Var<S>, Var<S>);                           \
  template Var<S> conv2d(Var<S>, Var<S>, Var<S>, const ConvGeometry&);                        \
  template Var<S> conv_transpose2d(Var<S>, Var<S>, Var<S>, const ConvGeometry&);

DKLROM_INSTANTIATE_AD(float)
DKLROM_INSTANTIATE_AD(double)

}  // namespace dklrom::ad
