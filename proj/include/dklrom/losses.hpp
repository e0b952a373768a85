#pragma once

// Training objectives: measurement reconstruction, multi-step latent
// regularisation, multi-step next-measurement reconstruction and the
// variational KL of all GP heads, combined with scalar weights.

#include "dklrom/autodiff.hpp"
#include "dklrom/data.hpp"
#include "dklrom/models.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace dklrom {

struct LossWeights {
  double w_reg = 1.0;
  double w_var = 1e-2;
  Index horizon = 3;  // T

  void validate() const;
};

struct LossBreakdown {
  double recon = 0;
  double reg = 0;
  double recon_next = 0;
  double vi = 0;
  double total = 0;  // recon + w_reg * reg + recon_next + w_var * vi, formed in double
};

/// Windows regrouped by time: frames[l] is B x |x| for window position l.
template <typename Scalar>
struct WindowBatch {
  std::vector<Matrix<Scalar>> frames;    // L entries
  std::vector<Matrix<Scalar>> controls;  // L-1 entries, B x |u|
  Matrix<Scalar> params;                 // B x |p|
  std::vector<std::uint64_t> keys;       // one per item, seeds its noise stream

  Index size() const { return params.rows(); }
  Index length() const { return static_cast<Index>(frames.size()); }
};

/// Throws ValidationError if the windows disagree in length or widths.
template <typename Scalar>
WindowBatch<Scalar> make_batch(const std::vector<SequenceWindow>& windows);

/// Reparameterisation noise for one loss evaluation. Item b draws from
/// derived_stream(base_seed, keys[b]): first (H+T) x |z| values for the frame
/// samples, then T x |z| for the predicted-latent samples. Each item's noise
/// therefore does not depend on its position in the batch.
template <typename Scalar>
struct LossNoise {
  std::vector<Matrix<Scalar>> frame;  // H+T entries, B x |z|
  std::vector<Matrix<Scalar>> step;   // T entries, B x |z|
};

template <typename Scalar>
LossNoise<Scalar> draw_loss_noise(const WindowBatch<Scalar>& batch, Index history, Index horizon,
                                  Index latent_dim, std::uint64_t base_seed);

template <typename Scalar>
struct LossTerms {
  ad::Var<Scalar> recon;
  ad::Var<Scalar> reg;
  ad::Var<Scalar> recon_next;
  ad::Var<Scalar> vi;
  ad::Var<Scalar> total;
};

/// Records every term on `tape` from one shared forward pass.
///
/// recon: mean over all (H+T)*B frames of 1/2 |x - dec(z)|^2 + |x|/2 log(2 pi),
///   z sampled from the encoder belief of that frame.
/// reg: (1/T) sum_i batch-mean KL[enc(x_{H+i-1}) || dyn(history_i)].
/// recon_next: (1/T) sum_i batch-mean |x_{H+i-1} - dec(zhat_i)|^2, zhat_i a
///   sample of dyn(history_i).
/// history_1 holds the encoder samples of frames 0..H-1; each later history
///   drops its oldest entry and appends the previous zhat.
/// vi: KL of every encoder and dynamics head against its prior.
template <typename Scalar>
LossTerms<Scalar> loss_terms(ad::Tape<Scalar>& tape, ModelBundle<Scalar>& bundle,
                             const WindowBatch<Scalar>& batch, const LossWeights& weights,
                             const LossNoise<Scalar>& noise);

template <typename Scalar>
LossBreakdown evaluate_terms(const LossTerms<Scalar>& terms, const LossWeights& weights);

/// One rng draw (the noise base seed) per call.
template <typename Scalar>
LossBreakdown total_loss(const ModelBundle<Scalar>& bundle, const WindowBatch<Scalar>& batch,
                         const LossWeights& weights, std::mt19937_64& rng);

template <typename Scalar>
LossBreakdown total_loss(const ModelBundle<Scalar>& bundle, const WindowBatch<Scalar>& batch,
                         const LossWeights& weights, const LossNoise<Scalar>& noise);

/// Single-frame form: one latent sample per row of x_batch (B x |x|), noise
/// drawn directly from rng in row-major order.
template <typename Scalar>
double recon_loss(const ModelBundle<Scalar>& bundle, const Matrix<Scalar>& x_batch, std::mt19937_64& rng);

// Component accessors: each consumes the rng exactly as total_loss does, so
// the same rng state reproduces the matching term of the breakdown.
template <typename Scalar>
double recon_loss(const ModelBundle<Scalar>& bundle, const WindowBatch<Scalar>& batch,
                  const LossWeights& weights, std::mt19937_64& rng);
template <typename Scalar>
double reg_loss_multistep(const ModelBundle<Scalar>& bundle, const WindowBatch<Scalar>& batch,
                          const LossWeights& weights, std::mt19937_64& rng);
template <typename Scalar>
double recon_next_multistep(const ModelBundle<Scalar>& bundle, const WindowBatch<Scalar>& batch,
                            const LossWeights& weights, std::mt19937_64& rng);

template <typename Scalar>
double vi_loss(const ModelBundle<Scalar>& bundle);

}  // namespace dklrom
