#pragma once

// Gaussian-process primitives: the squared-exponential kernel, exact GP
// regression (used as a desk-scale reference), and the inducing-point
// variational GP used by the encoder and dynamics heads.
//
// All functions are pure and templated on the scalar type; float and double
// are instantiated.

#include "dklrom/autodiff.hpp"
#include "dklrom/errors.hpp"

#include <Eigen/Cholesky>

namespace dklrom::gp {

/// Base diagonal jitter for inducing-point covariances; escalated x10 on failure.
inline constexpr double kBaseJitter = 1e-6;
inline constexpr double kMaxJitter = 1e-2;

template <typename Scalar>
struct KernelParams {
  Scalar signal_variance = Scalar(1);
  Scalar length_scale = Scalar(1);
  Scalar mean = Scalar(0);

  /// Throws ValidationError unless both scales are positive and finite.
  static KernelParams make(Scalar signal_variance, Scalar length_scale, Scalar mean = Scalar(0));
  void validate() const;
};

template <typename Scalar>
struct NoiseParam {
  Scalar variance = Scalar(1);

  static NoiseParam make(Scalar variance);
};

/// q(v) = N(var_mean, L L^T) over the function values at `locations`.
template <typename Scalar>
struct InducingState {
  Matrix<Scalar> locations;       // n_ind x F
  Vector<Scalar> var_mean;        // n_ind
  Matrix<Scalar> var_cov_factor;  // n_ind x n_ind, lower triangular

  Index size() const { return locations.rows(); }
  Index feature_dim() const { return locations.cols(); }
  void validate() const;

  /// Variational state equal to the GP prior at `locations` (zero mean,
  /// factor = Cholesky of the jittered prior covariance).
  static InducingState prior_matching(const Matrix<Scalar>& locations,
                                      const KernelParams<Scalar>& params);
};

/// Diagonal marginals, plus the full covariance when it is available.
template <typename Scalar>
struct GaussianBelief {
  Vector<Scalar> mean;
  Vector<Scalar> variance;
  Matrix<Scalar> covariance;  // empty for diagonal beliefs

  Index dim() const { return mean.size(); }
  bool has_covariance() const { return covariance.size() > 0; }
};

template <typename Scalar>
struct CholeskyResult {
  Eigen::LLT<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> llt;
  Scalar jitter = Scalar(0);
};

/// Factorises K + jitter*I, starting at `initial_jitter` (or 0) and growing x10
/// up to kMaxJitter. Throws NumericalError with diagonal diagnostics on failure.
template <typename Scalar>
CholeskyResult<Scalar> robust_cholesky(const Matrix<Scalar>& k, double initial_jitter);

template <typename Scalar>
Matrix<Scalar> squared_distances(const Matrix<Scalar>& a, const Matrix<Scalar>& b);

/// k(a, b) = s2 exp(-|a-b|^2 / (2 l^2)).
template <typename Scalar>
Matrix<Scalar> se_kernel(const Matrix<Scalar>& a, const Matrix<Scalar>& b,
                         const KernelParams<Scalar>& params);

/// Posterior over noise-free outputs at `x_test` (full covariance). With no
/// training rows this returns the prior.
template <typename Scalar>
GaussianBelief<Scalar> exact_gp_posterior(const Matrix<Scalar>& x_train, const Vector<Scalar>& y,
                                          const Matrix<Scalar>& x_test,
                                          const KernelParams<Scalar>& params,
                                          const NoiseParam<Scalar>& noise);

template <typename Scalar>
Scalar log_marginal_likelihood(const Matrix<Scalar>& x, const Vector<Scalar>& y,
                               const KernelParams<Scalar>& params, const NoiseParam<Scalar>& noise);

template <typename Scalar>
struct LmlGradient {
  Scalar signal_variance;
  Scalar length_scale;
  Scalar noise_variance;
};

/// Analytic gradient of the log marginal likelihood w.r.t. (s2, l, noise).
template <typename Scalar>
LmlGradient<Scalar> log_marginal_likelihood_gradient(const Matrix<Scalar>& x,
                                                     const Vector<Scalar>& y,
                                                     const KernelParams<Scalar>& params,
                                                     const NoiseParam<Scalar>& noise);

/// Predictive marginals of the variational GP at each feature row.
template <typename Scalar>
GaussianBelief<Scalar> variational_gp_predict(const Matrix<Scalar>& features,
                                              const InducingState<Scalar>& inducing,
                                              const KernelParams<Scalar>& params);

/// KL[q(v) || p(v)] against the GP prior at the inducing locations.
template <typename Scalar>
Scalar inducing_kl(const InducingState<Scalar>& inducing, const KernelParams<Scalar>& params);

/// KL[p || q] for diagonal Gaussians, summed over dimensions.
template <typename Scalar>
Scalar diag_gaussian_kl(const GaussianBelief<Scalar>& p, const GaussianBelief<Scalar>& q);

}  // namespace dklrom::gp
