#pragma once

// The three learned components: a deep-kernel variational GP encoder from
// measurements to latent Gaussian beliefs, a transposed-convolution decoder
// back to [0,1] measurements, and an LSTM deep-kernel GP forward model over
// latent histories. Plus reparameterised latent sampling and autoregressive
// rollouts.

#include "dklrom/autodiff.hpp"
#include "dklrom/gp_core.hpp"
#include "dklrom/gp_layer.hpp"
#include "dklrom/nn.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace dklrom {

/// Architecture of a ModelBundle plus its initialisation settings.
struct ModelConfig {
  Index channels = 3;
  Index height = 84;
  Index width = 84;
  Index latent_dim = 20;
  Index feature_dim = 20;
  std::vector<Index> conv_channels;  // empty: derived from the input size
  Index lstm_hidden = 256;
  Index history = 20;
  Index control_dim = 1;
  Index param_dim = 0;
  Index inducing_points = 100;
  double init_obs_noise = 1e-2;
  double init_proc_noise = 1e-2;
  std::uint64_t seed = 0;

  Index measurement_dim() const { return channels * height * width; }
  /// Conv widths actually used (conv_channels or the size-based default).
  std::vector<Index> resolved_conv_channels() const;
  /// Text summary of the shape-determining fields; parameters saved under one
  /// fingerprint only load into a bundle with the same fingerprint.
  std::string fingerprint() const;
  void validate() const;
};

/// 32-64-128-256 for inputs up to ~100 px, one extra 256 layer per doubling beyond.
std::vector<Index> default_conv_channels(Index height, Index width);

/// Per-dimension Gaussian marginals over z.
template <typename Scalar>
struct LatentBelief {
  Vector<Scalar> mean;
  Vector<Scalar> variance;
};

/// A batch of beliefs, one row per item.
template <typename Scalar>
struct LatentBeliefs {
  Matrix<Scalar> mean;      // B x |z|
  Matrix<Scalar> variance;  // B x |z|

  Index size() const { return mean.rows(); }
  LatentBelief<Scalar> item(Index i) const {
    return {mean.row(i).transpose(), variance.row(i).transpose()};
  }
};

/// Tape handles for a batch of beliefs.
template <typename Scalar>
struct BeliefVars {
  ad::Var<Scalar> mean;
  ad::Var<Scalar> variance;
};

/// |z| single-output SVGP heads sharing inducing locations.
template <typename Scalar>
struct GpHeads {
  ad::Parameter<Scalar> locations;   // n_ind x F
  ad::Parameter<Scalar> var_means;   // n_ind x heads
  ad::Parameter<Scalar> chol_raw;    // heads*n_ind x n_ind
  ad::Parameter<Scalar> log_signal;  // 1 x heads
  ad::Parameter<Scalar> log_length;  // 1 x heads

  GpHeads() = default;
  GpHeads(const std::string& name, Index heads, Index n_ind, Index feature_dim,
          std::mt19937_64& rng);

  Index heads() const { return var_means.value.cols(); }
  Index inducing_points() const { return locations.value.rows(); }

  gp::SvgpInputs<Scalar> bind(ad::Tape<Scalar>& tape);
  gp::KernelParams<Scalar> kernel(Index head) const;
  gp::InducingState<Scalar> inducing(Index head) const;
  void set_inducing(Index head, const gp::InducingState<Scalar>& state);
  /// Places inducing points at `features` rows, sets every length scale to
  /// `length_scale` and resets each head to its prior.
  void reset_to_prior(const Matrix<Scalar>& features, Scalar length_scale);
  void collect(nn::ParamList<Scalar>& out);
};

template <typename Scalar>
struct EncoderModel {
  std::vector<nn::Conv2d<Scalar>> convs;
  nn::Linear<Scalar> to_features;
  GpHeads<Scalar> heads;
  ad::Parameter<Scalar> log_noise;  // log sigma_phi^2

  EncoderModel() = default;
  EncoderModel(const ModelConfig& cfg, std::mt19937_64& rng);

  /// Deep features g(x) (B x F).
  ad::Var<Scalar> features(ad::Tape<Scalar>& tape, ad::Var<Scalar> x);
  BeliefVars<Scalar> forward(ad::Tape<Scalar>& tape, ad::Var<Scalar> x);
  Scalar noise_variance() const;
  void collect(nn::ParamList<Scalar>& out);
};

template <typename Scalar>
struct DecoderModel {
  nn::Linear<Scalar> from_latent;
  std::vector<nn::ConvTranspose2d<Scalar>> deconvs;
  Index seed_channels = 0;

  DecoderModel() = default;
  DecoderModel(const ModelConfig& cfg, std::mt19937_64& rng);

  ad::Var<Scalar> forward(ad::Tape<Scalar>& tape, ad::Var<Scalar> z);
  void collect(nn::ParamList<Scalar>& out);
};

template <typename Scalar>
struct DynamicsModel {
  nn::Lstm<Scalar> lstm;
  nn::Linear<Scalar> to_features;
  GpHeads<Scalar> heads;
  ad::Parameter<Scalar> log_noise;  // log sigma_xi^2
  Index history = 1;
  Index control_dim = 0;
  Index param_dim = 0;

  DynamicsModel() = default;
  DynamicsModel(const ModelConfig& cfg, std::mt19937_64& rng);

  /// z_hist/u_hist: one B-row matrix per step, oldest first, exactly `history`
  /// entries. p: B x |p|.
  ad::Var<Scalar> features(ad::Tape<Scalar>& tape, const std::vector<ad::Var<Scalar>>& z_hist,
                           const std::vector<ad::Var<Scalar>>& u_hist, ad::Var<Scalar> p);
  BeliefVars<Scalar> forward(ad::Tape<Scalar>& tape, const std::vector<ad::Var<Scalar>>& z_hist,
                             const std::vector<ad::Var<Scalar>>& u_hist, ad::Var<Scalar> p);
  Scalar noise_variance() const;
  void collect(nn::ParamList<Scalar>& out);
};

template <typename Scalar>
struct ModelBundle {
  ModelConfig config;
  EncoderModel<Scalar> encoder;
  DecoderModel<Scalar> decoder;
  DynamicsModel<Scalar> dynamics;

  ModelBundle() = default;
  explicit ModelBundle(const ModelConfig& cfg);

  Index latent_dim() const { return config.latent_dim; }
  nn::ParamList<Scalar> parameters();
  std::vector<const ad::Parameter<Scalar>*> parameters() const;
};

// ---------------------------------------------------------------------------
// Inference (no gradients).

/// Beliefs for each row of x_batch (B x |x|). Variance = GP variance + sigma_phi^2.
template <typename Scalar>
LatentBeliefs<Scalar> encode(const EncoderModel<Scalar>& model, const Matrix<Scalar>& x_batch);

/// z = mean + sqrt(variance) * eps, eps ~ N(0, I).
template <typename Scalar>
Vector<Scalar> sample_latent(const LatentBelief<Scalar>& belief, std::mt19937_64& rng);

template <typename Scalar>
Matrix<Scalar> sample_latent(const LatentBeliefs<Scalar>& beliefs, std::mt19937_64& rng);

/// Mean of the unit-covariance Gaussian over x for each row of z (B x |z|).
template <typename Scalar>
Matrix<Scalar> decode(const DecoderModel<Scalar>& model, const Matrix<Scalar>& z);

/// Left-pads a history shorter than `history` by repeating its first entry.
/// Throws ValidationError on an empty or over-long history.
template <typename Scalar>
std::vector<Matrix<Scalar>> pad_history(const std::vector<Matrix<Scalar>>& hist, Index history);

/// Belief over z_{t+1}. z_hist/u_hist hold B-row matrices, oldest first.
template <typename Scalar>
LatentBeliefs<Scalar> predict_next(const DynamicsModel<Scalar>& model,
                                   const std::vector<Matrix<Scalar>>& z_hist,
                                   const std::vector<Matrix<Scalar>>& u_hist,
                                   const Matrix<Scalar>& p);

template <typename Scalar>
struct RolloutResult {
  std::vector<std::vector<LatentBelief<Scalar>>> beliefs;  // [path][step]
  std::vector<Matrix<Scalar>> decoded;                     // [path] K x |x|
};

/// Encodes `x_init_hist` (H x |x|), then for each path repeatedly samples the
/// current belief, decodes, and feeds the sample back through the dynamics.
/// `history_controls` holds the H-1 controls between the initial frames;
/// `controls` the K controls applied from the last initial frame onwards.
/// Path s draws from its own stream seeded by (seed, s).
template <typename Scalar>
RolloutResult<Scalar> rollout(const ModelBundle<Scalar>& bundle, const Matrix<Scalar>& x_init_hist,
                              const Matrix<Scalar>& history_controls,
                              const Matrix<Scalar>& controls, const Vector<Scalar>& p,
                              Index n_samples, std::uint64_t seed);

/// Fills a rows x cols matrix with standard normal draws, row-major order.
template <typename Scalar>
Matrix<Scalar> standard_normal(Index rows, Index cols, std::mt19937_64& rng);

/// Stream for one independent path / item derived from a base seed and key.
std::mt19937_64 derived_stream(std::uint64_t base, std::uint64_t key_a, std::uint64_t key_b = 0);

}  // namespace dklrom
