#pragma once

#include "dklrom/losses.hpp"
#include "dklrom/models.hpp"

#include <random>

namespace tiny {

using dklrom::Index;
using dklrom::Matrix;

inline dklrom::ModelConfig config() {
  dklrom::ModelConfig c;
  c.channels = 1;
  c.height = 8;
  c.width = 8;
  c.latent_dim = 2;
  c.feature_dim = 3;
  c.conv_channels = {2, 3};
  c.lstm_hidden = 4;
  c.history = 2;
  c.control_dim = 1;
  c.param_dim = 1;
  c.inducing_points = 4;
  c.seed = 11;
  return c;
}

template <typename Scalar>
Matrix<Scalar> uniform(Index r, Index c, std::mt19937_64& rng, double lo = 0, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  Matrix<Scalar> m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(d(rng));
  return m;
}

/// Random batch of `b` windows of `length` frames for `cfg`.
template <typename Scalar>
dklrom::WindowBatch<Scalar> random_batch(const dklrom::ModelConfig& cfg, Index b, Index length,
                                         std::mt19937_64& rng) {
  dklrom::WindowBatch<Scalar> batch;
  for (Index l = 0; l < length; ++l) batch.frames.push_back(uniform<Scalar>(b, cfg.measurement_dim(), rng));
  for (Index l = 0; l + 1 < length; ++l) batch.controls.push_back(uniform<Scalar>(b, cfg.control_dim, rng, -2, 2));
  batch.params = uniform<Scalar>(b, cfg.param_dim, rng, 0.5, 1.5);
  for (Index i = 0; i < b; ++i) batch.keys.push_back(1000 + static_cast<std::uint64_t>(i) * 7);
  return batch;
}

}  // namespace tiny
