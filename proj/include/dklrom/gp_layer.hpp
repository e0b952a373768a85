#pragma once

// Multi-head inducing-point GP layer as differentiable tape operations.
//
// All heads share the inducing locations; each head has its own variational
// mean column, Cholesky factor block and SE-kernel hyperparameters. The
// factor blocks are stored raw: the strictly lower triangle is used as is and
// the diagonal holds log L_ii. The GP prior mean is zero. Internally the math
// runs in double precision regardless of Scalar.

#include "dklrom/autodiff.hpp"
#include "dklrom/gp_core.hpp"

#include <vector>

namespace dklrom::gp {

template <typename Scalar>
struct SvgpInputs {
  ad::Var<Scalar> locations;   // m x F
  ad::Var<Scalar> var_means;   // m x heads
  ad::Var<Scalar> chol_raw;    // (heads * m) x m
  ad::Var<Scalar> log_signal;  // 1 x heads, log s2
  ad::Var<Scalar> log_length;  // 1 x heads, log l
};

template <typename Scalar>
struct SvgpOutputs {
  ad::Var<Scalar> mean;      // n x heads
  ad::Var<Scalar> variance;  // n x heads, latent-function variance (no noise)
};

template <typename Scalar>
SvgpOutputs<Scalar> svgp_predict(ad::Var<Scalar> features, const SvgpInputs<Scalar>& in);

/// Sum over heads of KL[q(v) || p(v)].
template <typename Scalar>
ad::Var<Scalar> svgp_kl(const SvgpInputs<Scalar>& in);

/// Lower-triangular factor of one head from its raw block.
template <typename Scalar>
Matrix<Scalar> factor_from_raw(const Matrix<Scalar>& raw_block);

/// Raw block (log diagonal) for a lower-triangular factor with positive diagonal.
template <typename Scalar>
Matrix<Scalar> raw_from_factor(const Matrix<Scalar>& factor);

}  // namespace dklrom::gp
