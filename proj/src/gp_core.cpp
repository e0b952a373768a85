#include "dklrom/gp_core.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace dklrom::gp {
namespace {

template <typename Scalar>
using Dense = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* what) {
  if (!m.allFinite()) throw ValidationError(std::string(what) + ": non-finite input");
}

template <typename Scalar>
bool positive_finite(Scalar v) {
  return std::isfinite(static_cast<double>(v)) && v > Scalar(0);
}

}  // namespace

template <typename Scalar>
KernelParams<Scalar> KernelParams<Scalar>::make(Scalar signal_variance, Scalar length_scale,
                                                Scalar mean) {
  KernelParams p{signal_variance, length_scale, mean};
  p.validate();
  return p;
}

template <typename Scalar>
void KernelParams<Scalar>::validate() const {
  if (!positive_finite(signal_variance)) throw ValidationError("signal_variance must be > 0");
  if (!positive_finite(length_scale)) throw ValidationError("length_scale must be > 0");
  if (!std::isfinite(static_cast<double>(mean))) throw ValidationError("mean must be finite");
}

template <typename Scalar>
NoiseParam<Scalar> NoiseParam<Scalar>::make(Scalar variance) {
  if (!positive_finite(variance)) throw ValidationError("noise variance must be > 0");
  return NoiseParam{variance};
}

template <typename Scalar>
void InducingState<Scalar>::validate() const {
  const Index m = locations.rows();
  if (m < 1) throw ValidationError("InducingState: need at least one inducing point");
  if (var_mean.size() != m) throw ValidationError("InducingState: var_mean size mismatch");
  if (var_cov_factor.rows() != m || var_cov_factor.cols() != m) {
    throw ValidationError("InducingState: var_cov_factor must be n_ind x n_ind");
  }
  for (Index i = 0; i < m; ++i) {
    if (!(var_cov_factor(i, i) > Scalar(0))) {
      throw ValidationError("InducingState: factor diagonal must be strictly positive");
    }
  }
}

template <typename Scalar>
InducingState<Scalar> InducingState<Scalar>::prior_matching(const Matrix<Scalar>& locations,
                                                            const KernelParams<Scalar>& params) {
  InducingState s;
  s.locations = locations;
  s.var_mean = Vector<Scalar>::Zero(locations.rows());
  auto chol = robust_cholesky<Scalar>(se_kernel(locations, locations, params), kBaseJitter);
  s.var_cov_factor = chol.llt.matrixL();
  return s;
}

template <typename Scalar>
CholeskyResult<Scalar> robust_cholesky(const Matrix<Scalar>& k, double initial_jitter) {
  if (k.rows() != k.cols()) throw ValidationError("robust_cholesky: matrix must be square");
  const Index n = k.rows();
  Dense<Scalar> base = k;
  double jitter = initial_jitter;
  while (true) {
    Dense<Scalar> kj = base;
    kj.diagonal().array() += static_cast<Scalar>(jitter);
    CholeskyResult<Scalar> r;
    r.llt.compute(kj);
    if (r.llt.info() == Eigen::Success && r.llt.matrixL().toDenseMatrix().diagonal().minCoeff() > Scalar(0)) {
      r.jitter = static_cast<Scalar>(jitter);
      return r;
    }
    if (jitter >= kMaxJitter) break;
    jitter = jitter <= 0.0 ? kBaseJitter : jitter * 10.0;
  }
  std::ostringstream msg;
  msg << "Cholesky failed after jitter " << kMaxJitter << " (n=" << n;
  if (n > 0) {
    msg << ", diag min=" << base.diagonal().minCoeff() << ", diag max=" << base.diagonal().maxCoeff();
    Eigen::SelfAdjointEigenSolver<Dense<Scalar>> eig(base, Eigen::EigenvaluesOnly);
    msg << ", eig min=" << eig.eigenvalues().minCoeff() << ", eig max=" << eig.eigenvalues().maxCoeff();
  }
  msg << ")";
  throw NumericalError(msg.str());
}

template <typename Scalar>
Matrix<Scalar> squared_distances(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  if (a.cols() != b.cols()) throw ValidationError("squared_distances: feature dim mismatch");
  Matrix<Scalar> d(a.rows(), b.rows());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < b.rows(); ++j) {
      // Plain loop so that d(a, b) == d(b, a) bit for bit.
      Scalar acc = 0;
      for (Index k = 0; k < a.cols(); ++k) acc += (a(i, k) - b(j, k)) * (a(i, k) - b(j, k));
      d(i, j) = acc;
    }
  }
  return d;
}

template <typename Scalar>
Matrix<Scalar> se_kernel(const Matrix<Scalar>& a, const Matrix<Scalar>& b,
                         const KernelParams<Scalar>& params) {
  params.validate();
  if (a.cols() < 1) throw ValidationError("se_kernel: feature dim must be >= 1");
  require_finite(a, "se_kernel");
  require_finite(b, "se_kernel");
  const Scalar inv = Scalar(-0.5) / (params.length_scale * params.length_scale);
  return (params.signal_variance * (squared_distances(a, b).array() * inv).exp()).matrix();
}

template <typename Scalar>
GaussianBelief<Scalar> exact_gp_posterior(const Matrix<Scalar>& x_train, const Vector<Scalar>& y,
                                          const Matrix<Scalar>& x_test,
                                          const KernelParams<Scalar>& params,
                                          const NoiseParam<Scalar>& noise) {
  if (x_train.rows() != y.size()) throw ValidationError("exact_gp_posterior: X/y size mismatch");
  GaussianBelief<Scalar> out;
  Matrix<Scalar> kss = se_kernel(x_test, x_test, params);
  if (x_train.rows() == 0) {
    out.mean = Vector<Scalar>::Constant(x_test.rows(), params.mean);
    out.covariance = kss;
    out.variance = kss.diagonal();
    return out;
  }
  if (x_train.cols() != x_test.cols()) throw ValidationError("exact_gp_posterior: feature dim mismatch");
  Matrix<Scalar> k = se_kernel(x_train, x_train, params);
  k.diagonal().array() += noise.variance;
  auto chol = robust_cholesky(k, 0.0);
  Dense<Scalar> ks = se_kernel(x_train, x_test, params);
  Vector<Scalar> centered = y.array() - params.mean;
  Vector<Scalar> alpha = chol.llt.solve(centered);
  out.mean = (ks.transpose() * alpha).array() + params.mean;
  Dense<Scalar> v = chol.llt.matrixL().solve(ks);
  out.covariance = kss - v.transpose() * v;
  out.variance = out.covariance.diagonal();
  return out;
}

template <typename Scalar>
Scalar log_marginal_likelihood(const Matrix<Scalar>& x, const Vector<Scalar>& y,
                               const KernelParams<Scalar>& params, const NoiseParam<Scalar>& noise) {
  if (x.rows() < 1) throw ValidationError("log_marginal_likelihood: need n >= 1");
  if (x.rows() != y.size()) throw ValidationError("log_marginal_likelihood: X/y size mismatch");
  Matrix<Scalar> k = se_kernel(x, x, params);
  k.diagonal().array() += noise.variance;
  auto chol = robust_cholesky(k, 0.0);
  Vector<Scalar> centered = y.array() - params.mean;
  Vector<Scalar> alpha = chol.llt.solve(centered);
  const Dense<Scalar> l = chol.llt.matrixL();
  const Scalar log_det = Scalar(2) * l.diagonal().array().log().sum();
  const Scalar n = static_cast<Scalar>(x.rows());
  return Scalar(-0.5) * centered.dot(alpha) - Scalar(0.5) * log_det -
         Scalar(0.5) * n * std::log(Scalar(2) * std::numbers::pi_v<Scalar>);
}

template <typename Scalar>
LmlGradient<Scalar> log_marginal_likelihood_gradient(const Matrix<Scalar>& x,
                                                     const Vector<Scalar>& y,
                                                     const KernelParams<Scalar>& params,
                                                     const NoiseParam<Scalar>& noise) {
  if (x.rows() != y.size() || x.rows() < 1) {
    throw ValidationError("log_marginal_likelihood_gradient: bad sizes");
  }
  const Matrix<Scalar> k = se_kernel(x, x, params);
  const Matrix<Scalar> d2 = squared_distances(x, x);
  Matrix<Scalar> ky = k;
  ky.diagonal().array() += noise.variance;
  auto chol = robust_cholesky(ky, 0.0);
  Vector<Scalar> centered = y.array() - params.mean;
  Vector<Scalar> alpha = chol.llt.solve(centered);
  const Index n = x.rows();
  Dense<Scalar> inv = chol.llt.solve(Dense<Scalar>::Identity(n, n));
  Dense<Scalar> w = alpha * alpha.transpose() - inv;
  const Scalar l = params.length_scale;
  Dense<Scalar> dk_ds2 = k / params.signal_variance;
  Dense<Scalar> dk_dl = (k.array() * d2.array() / (l * l * l)).matrix();
  LmlGradient<Scalar> g;
  g.signal_variance = Scalar(0.5) * (w.array() * dk_ds2.array()).sum();
  g.length_scale = Scalar(0.5) * (w.array() * dk_dl.array()).sum();
  g.noise_variance = Scalar(0.5) * w.trace();
  return g;
}

template <typename Scalar>
GaussianBelief<Scalar> variational_gp_predict(const Matrix<Scalar>& features,
                                              const InducingState<Scalar>& inducing,
                                              const KernelParams<Scalar>& params) {
  inducing.validate();
  if (features.cols() != inducing.feature_dim()) {
    throw ValidationError("variational_gp_predict: feature dim does not match inducing locations");
  }
  auto chol = robust_cholesky<Scalar>(se_kernel(inducing.locations, inducing.locations, params),
                                      kBaseJitter);
  const Dense<Scalar> kuf = se_kernel(inducing.locations, features, params);
  const Dense<Scalar> a = chol.llt.solve(kuf);  // K_uu^-1 K_uf
  const Dense<Scalar> lt_a = inducing.var_cov_factor.transpose() * a;
  GaussianBelief<Scalar> out;
  out.mean = (a.transpose() * inducing.var_mean).array() + params.mean;
  out.variance.resize(features.rows());
  for (Index j = 0; j < features.rows(); ++j) {
    const Scalar v = params.signal_variance - kuf.col(j).dot(a.col(j)) + lt_a.col(j).squaredNorm();
    out.variance(j) = std::max(v, Scalar(0));
  }
  return out;
}

template <typename Scalar>
Scalar inducing_kl(const InducingState<Scalar>& inducing, const KernelParams<Scalar>& params) {
  inducing.validate();
  const Index m = inducing.size();
  auto chol = robust_cholesky<Scalar>(se_kernel(inducing.locations, inducing.locations, params),
                                      kBaseJitter);
  const Dense<Scalar> lk = chol.llt.matrixL();
  const Dense<Scalar> ls = inducing.var_cov_factor.template triangularView<Eigen::Lower>();
  // tr(K^-1 S) = |Lk^-1 Ls|_F^2
  const Dense<Scalar> m_ls = lk.template triangularView<Eigen::Lower>().solve(ls);
  const Vector<Scalar> m_mu = lk.template triangularView<Eigen::Lower>().solve(inducing.var_mean);
  const Scalar log_det_k = Scalar(2) * lk.diagonal().array().log().sum();
  const Scalar log_det_s = Scalar(2) * ls.diagonal().array().log().sum();
  const Scalar kl = Scalar(0.5) * (m_ls.squaredNorm() + m_mu.squaredNorm() -
                                   static_cast<Scalar>(m) + log_det_k - log_det_s);
  return std::max(kl, Scalar(0));
}

template <typename Scalar>
Scalar diag_gaussian_kl(const GaussianBelief<Scalar>& p, const GaussianBelief<Scalar>& q) {
  if (p.dim() != q.dim() || p.variance.size() != p.dim() || q.variance.size() != q.dim()) {
    throw ValidationError("diag_gaussian_kl: dimension mismatch");
  }
  if ((p.variance.array() <= Scalar(0)).any() || (q.variance.array() <= Scalar(0)).any()) {
    throw ValidationError("diag_gaussian_kl: variances must be positive");
  }
  const auto vp = p.variance.array();
  const auto vq = q.variance.array();
  const auto diff = p.mean.array() - q.mean.array();
  return (Scalar(0.5) * (vq / vp).log() + (vp + diff.square()) / (Scalar(2) * vq) - Scalar(0.5)).sum();
}

#define DKLROM_INSTANTIATE_GP(S)                                                                 \
  template struct KernelParams<S>;                                                               \
  template struct NoiseParam<S>;                                                                 \
  template struct InducingState<S>;                                                              \
  template CholeskyResult<S> robust_cholesky(const Matrix<S>&, double);                          \
  template Matrix<S> squared_distances(const Matrix<S>&, const Matrix<S>&);                      \
  template Matrix<S> se_kernel(const Matrix<S>&, const Matrix<S>&, const KernelParams<S>&);      \
  template GaussianBelief<S> exact_gp_posterior(const Matrix<S>&, const Vector<S>&,              \
                                                const Matrix<S>&, const KernelParams<S>&,        \
                                                const NoiseParam<S>&);                           \
  template S log_marginal_likelihood(const Matrix<S>&, const Vector<S>&, const KernelParams<S>&, \
                                     const NoiseParam<S>&);                                      \
  template LmlGradient<S> log_marginal_likelihood_gradient(                                      \
      const Matrix<S>&, const Vector<S>&, const KernelParams<S>&, const NoiseParam<S>&);         \
  template GaussianBelief<S> variational_gp_predict(const Matrix<S>&, const InducingState<S>&,   \
                                                    const KernelParams<S>&);                     \
  template S inducing_kl(const InducingState<S>&, const KernelParams<S>&);                       \
  template S diag_gaussian_kl(const GaussianBelief<S>&, const GaussianBelief<S>&);

DKLROM_INSTANTIATE_GP(float)
DKLROM_INSTANTIATE_GP(double)

}  // namespace dklrom::gp
