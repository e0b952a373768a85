#include "dklrom/gp_layer.hpp"

#include <cmath>

namespace dklrom::gp {
namespace {

using MatD = Eigen::MatrixXd;
using VecD = Eigen::VectorXd;

template <typename Scalar>
MatD to_double(const Matrix<Scalar>& m) {
  return m.template cast<double>();
}

template <typename Scalar>
Matrix<Scalar> from_double(const MatD& m) {
  return m.cast<Scalar>();
}

MatD sq_dist(const MatD& a, const MatD& b) {
  const VecD na = a.rowwise().squaredNorm();
  const VecD nb = b.rowwise().squaredNorm();
  MatD d = (-2.0 * a * b.transpose()).colwise() + na;
  d.rowwise() += nb.transpose();
  return d.cwiseMax(0.0);
}

MatD lower_from_raw(const MatD& raw) {
  MatD l = raw.triangularView<Eigen::StrictlyLower>();
  l.diagonal() = raw.diagonal().array().exp().matrix();
  return l;
}

// Everything one head needs, recomputed from the tape values on demand.
struct Head {
  double s2 = 1.0;
  double ell = 1.0;
  MatD d_uu, k_uu;  // k_uu excludes jitter
  Eigen::LLT<MatD> llt;
  MatD l;  // variational factor
  VecD mu;
};

Head make_head(const MatD& z, const MatD& means, const MatD& raw, double log_s2, double log_l,
               Index h) {
  const Index m = z.rows();
  Head hd;
  hd.s2 = std::exp(log_s2);
  hd.ell = std::exp(log_l);
  hd.d_uu = sq_dist(z, z);
  hd.k_uu = hd.s2 * (-0.5 * hd.d_uu.array() / (hd.ell * hd.ell)).exp();
  double jitter = kBaseJitter;
  while (true) {
    MatD kj = hd.k_uu;
    kj.diagonal().array() += jitter;
    hd.llt.compute(kj);
    if (hd.llt.info() == Eigen::Success) break;
    if (jitter >= kMaxJitter) throw NumericalError("svgp: K_uu Cholesky failed after max jitter");
    jitter *= 10.0;
  }
  hd.l = lower_from_raw(raw.middleRows(h * m, m));
  hd.mu = means.col(h);
  return hd;
}

// Pushes a gradient G on K = s2 exp(-D / 2l^2) (K(a, b)) into the inputs and hyperparameters.
void kernel_backward(const MatD& g, const MatD& k, const MatD& d, double ell, const MatD& a,
                     const MatD& b, bool symmetric, MatD* da, MatD* db, double& d_log_s2,
                     double& d_log_l) {
  const MatD w = g.cwiseProduct(k);
  d_log_s2 += w.sum();
  d_log_l += (w.cwiseProduct(d)).sum() / (ell * ell);
  const double c = -1.0 / (ell * ell);
  if (symmetric) {
    if (da == nullptr) return;
    const MatD ws = w + w.transpose();
    *da += c * (ws.rowwise().sum().asDiagonal() * a - ws * a);
    return;
  }
  if (da != nullptr) *da += c * (w.rowwise().sum().asDiagonal() * a - w * b);
  if (db != nullptr) *db += c * (w.colwise().sum().transpose().asDiagonal() * b - w.transpose() * a);
}

void check_inputs(Index feature_dim, const MatD& z, const MatD& means, const MatD& raw,
                  const MatD& log_s2, const MatD& log_l) {
  const Index m = z.rows();
  const Index heads = means.cols();
  if (feature_dim != z.cols()) throw ValidationError("svgp: feature dim does not match inducing locations");
  if (means.rows() != m) throw ValidationError("svgp: var_means must have n_ind rows");
  if (raw.rows() != heads * m || raw.cols() != m) throw ValidationError("svgp: chol_raw shape");
  if (log_s2.rows() != 1 || log_s2.cols() != heads || log_l.rows() != 1 || log_l.cols() != heads) {
    throw ValidationError("svgp: kernel hyperparameters must be 1 x heads");
  }
}

}  // namespace

template <typename Scalar>
Matrix<Scalar> factor_from_raw(const Matrix<Scalar>& raw_block) {
  return from_double<Scalar>(lower_from_raw(to_double(raw_block)));
}

template <typename Scalar>
Matrix<Scalar> raw_from_factor(const Matrix<Scalar>& factor) {
  MatD f = to_double(factor);
  MatD raw = f.triangularView<Eigen::StrictlyLower>();
  raw.diagonal() = f.diagonal().array().log().matrix();
  return from_double<Scalar>(raw);
}

template <typename Scalar>
SvgpOutputs<Scalar> svgp_predict(ad::Var<Scalar> features, const SvgpInputs<Scalar>& in) {
  auto& tape = features.tape();
  const MatD x = to_double(features.value());
  const MatD z = to_double(in.locations.value());
  const MatD means = to_double(in.var_means.value());
  const MatD raw = to_double(in.chol_raw.value());
  const MatD log_s2 = to_double(in.log_signal.value());
  const MatD log_l = to_double(in.log_length.value());
  check_inputs(x.cols(), z, means, raw, log_s2, log_l);
  if (!x.allFinite()) throw ValidationError("svgp: non-finite features");
  const Index n = x.rows();
  const Index heads = means.cols();

  MatD packed(n, 2 * heads);
  for (Index h = 0; h < heads; ++h) {
    Head hd = make_head(z, means, raw, log_s2(0, h), log_l(0, h), h);
    const MatD kuf = hd.s2 * (-0.5 * sq_dist(z, x).array() / (hd.ell * hd.ell)).exp();
    const MatD a = hd.llt.solve(kuf);
    const MatD lt_a = hd.l.transpose() * a;
    packed.col(h) = a.transpose() * hd.mu;
    const VecD var = (hd.s2 - kuf.cwiseProduct(a).colwise().sum().array() +
                      lt_a.colwise().squaredNorm().array())
                         .matrix()
                         .transpose();
    packed.col(heads + h) = var.cwiseMax(0.0);
  }

  const std::vector<std::size_t> ids = {features.id(),      in.locations.id(), in.var_means.id(),
                                        in.chol_raw.id(),   in.log_signal.id(), in.log_length.id()};
  auto out = tape.record(from_double<Scalar>(packed), ids, [ids, heads](ad::Tape<Scalar>& t, std::size_t self) {
    const MatD x = to_double(t.value(ids[0]));
    const MatD z = to_double(t.value(ids[1]));
    const MatD means = to_double(t.value(ids[2]));
    const MatD raw = to_double(t.value(ids[3]));
    const MatD log_s2 = to_double(t.value(ids[4]));
    const MatD log_l = to_double(t.value(ids[5]));
    const MatD grad = to_double(t.grad(self));
    const Index m = z.rows();
    const Index n = x.rows();

    MatD dx = MatD::Zero(n, x.cols());
    MatD dz = MatD::Zero(m, z.cols());
    MatD dmeans = MatD::Zero(m, heads);
    MatD draw = MatD::Zero(raw.rows(), raw.cols());
    MatD dlog_s2 = MatD::Zero(1, heads);
    MatD dlog_l = MatD::Zero(1, heads);
    const bool want_x = t.needs_grad(ids[0]);
    const bool want_z = t.needs_grad(ids[1]);

    for (Index h = 0; h < heads; ++h) {
      Head hd = make_head(z, means, raw, log_s2(0, h), log_l(0, h), h);
      const MatD d_uf = sq_dist(z, x);
      const MatD kuf = hd.s2 * (-0.5 * d_uf.array() / (hd.ell * hd.ell)).exp();
      const MatD a = hd.llt.solve(kuf);
      const MatD sa = hd.l * (hd.l.transpose() * a);
      const MatD c = hd.llt.solve(sa);
      const VecD beta = hd.llt.solve(hd.mu);

      const VecD gm = grad.col(h);
      VecD gv = grad.col(heads + h);
      const VecD var = hd.s2 - kuf.cwiseProduct(a).colwise().sum().transpose().array() +
                       (hd.l.transpose() * a).colwise().squaredNorm().transpose().array();
      for (Index j = 0; j < n; ++j) {
        if (var(j) < 0.0) gv(j) = 0.0;
      }

      dmeans.col(h) = a * gm;
      const MatD a_gv = a * gv.asDiagonal();
      const MatD ds = a_gv * a.transpose();
      MatD dl = (2.0 * ds * hd.l).triangularView<Eigen::Lower>();
      dl.diagonal() = dl.diagonal().cwiseProduct(hd.l.diagonal());
      draw.middleRows(h * m, m) += dl;

      const MatD dkuf = beta * gm.transpose() + 2.0 * (c - a) * gv.asDiagonal();
      const MatD dkuu = -(a * gm) * beta.transpose() + ds - 2.0 * c * gv.asDiagonal() * a.transpose();

      double d_s2 = gv.sum() * hd.s2;  // k(x, x) = s2
      double d_l = 0.0;
      kernel_backward(dkuf, kuf, d_uf, hd.ell, z, x, false, want_z ? &dz : nullptr,
                      want_x ? &dx : nullptr, d_s2, d_l);
      kernel_backward(dkuu, hd.k_uu, hd.d_uu, hd.ell, z, z, true, want_z ? &dz : nullptr, nullptr,
                      d_s2, d_l);
      dlog_s2(0, h) = d_s2;
      dlog_l(0, h) = d_l;
    }
    if (want_x) t.accumulate(ids[0], from_double<Scalar>(dx));
    if (want_z) t.accumulate(ids[1], from_double<Scalar>(dz));
    t.accumulate(ids[2], from_double<Scalar>(dmeans));
    t.accumulate(ids[3], from_double<Scalar>(draw));
    t.accumulate(ids[4], from_double<Scalar>(dlog_s2));
    t.accumulate(ids[5], from_double<Scalar>(dlog_l));
  });
  return {ad::slice_cols(out, 0, heads), ad::slice_cols(out, heads, heads)};
}

template <typename Scalar>
ad::Var<Scalar> svgp_kl(const SvgpInputs<Scalar>& in) {
  auto& tape = in.locations.tape();
  const MatD z = to_double(in.locations.value());
  const MatD means = to_double(in.var_means.value());
  const MatD raw = to_double(in.chol_raw.value());
  const MatD log_s2 = to_double(in.log_signal.value());
  const MatD log_l = to_double(in.log_length.value());
  check_inputs(z.cols(), z, means, raw, log_s2, log_l);
  const Index m = z.rows();
  const Index heads = means.cols();

  double total = 0.0;
  for (Index h = 0; h < heads; ++h) {
    Head hd = make_head(z, means, raw, log_s2(0, h), log_l(0, h), h);
    const MatD lk = hd.llt.matrixL();
    const MatD m_ls = lk.triangularView<Eigen::Lower>().solve(hd.l);
    const VecD m_mu = lk.triangularView<Eigen::Lower>().solve(hd.mu);
    const double log_det_k = 2.0 * lk.diagonal().array().log().sum();
    const double log_det_s = 2.0 * raw.middleRows(h * m, m).diagonal().sum();
    total += 0.5 * (m_ls.squaredNorm() + m_mu.squaredNorm() - static_cast<double>(m) + log_det_k -
                    log_det_s);
  }

  const std::vector<std::size_t> ids = {in.locations.id(), in.var_means.id(), in.chol_raw.id(),
                                        in.log_signal.id(), in.log_length.id()};
  return tape.record(Matrix<Scalar>::Constant(1, 1, static_cast<Scalar>(total)), ids,
                     [ids, heads](ad::Tape<Scalar>& t, std::size_t self) {
    const double g = static_cast<double>(t.grad(self)(0, 0));
    const MatD z = to_double(t.value(ids[0]));
    const MatD means = to_double(t.value(ids[1]));
    const MatD raw = to_double(t.value(ids[2]));
    const MatD log_s2 = to_double(t.value(ids[3]));
    const MatD log_l = to_double(t.value(ids[4]));
    const Index m = z.rows();
    MatD dz = MatD::Zero(m, z.cols());
    MatD dmeans = MatD::Zero(m, heads);
    MatD draw = MatD::Zero(raw.rows(), raw.cols());
    MatD dlog_s2 = MatD::Zero(1, heads);
    MatD dlog_l = MatD::Zero(1, heads);
    const bool want_z = t.needs_grad(ids[0]);
    for (Index h = 0; h < heads; ++h) {
      Head hd = make_head(z, means, raw, log_s2(0, h), log_l(0, h), h);
      const MatD k_inv = hd.llt.solve(MatD::Identity(m, m));
      const VecD beta = k_inv * hd.mu;
      dmeans.col(h) = g * beta;
      MatD dl = (g * (k_inv * hd.l)).triangularView<Eigen::Lower>();
      dl.diagonal() -= g * hd.l.diagonal().cwiseInverse();
      dl.diagonal() = dl.diagonal().cwiseProduct(hd.l.diagonal());
      draw.middleRows(h * m, m) = dl;
      const MatD s = hd.l * hd.l.transpose();
      const MatD dkuu = 0.5 * g * (k_inv - k_inv * s * k_inv - beta * beta.transpose());
      double d_s2 = 0.0;
      double d_l = 0.0;
      kernel_backward(dkuu, hd.k_uu, hd.d_uu, hd.ell, z, z, true, want_z ? &dz : nullptr, nullptr,
                      d_s2, d_l);
      dlog_s2(0, h) = d_s2;
      dlog_l(0, h) = d_l;
    }
    if (want_z) t.accumulate(ids[0], from_double<Scalar>(dz));
    t.accumulate(ids[1], from_double<Scalar>(dmeans));
    t.accumulate(ids[2], from_double<Scalar>(draw));
    t.accumulate(ids[3], from_double<Scalar>(dlog_s2));
    t.accumulate(ids[4], from_double<Scalar>(dlog_l));
  });
}

#define DKLROM_INSTANTIATE_SVGP(S)                                                   \
  template SvgpOutputs<S> svgp_predict(ad::Var<S>, const SvgpInputs<S>&);            \
  template ad::Var<S> svgp_kl(const SvgpInputs<S>&);                                 \
  template Matrix<S> factor_from_raw(const Matrix<S>&);                              \
  template Matrix<S> raw_from_factor(const Matrix<S>&);

DKLROM_INSTANTIATE_SVGP(float)
DKLROM_INSTANTIATE_SVGP(double)

}  // namespace dklrom::gp
