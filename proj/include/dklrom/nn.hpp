#pragma once

// Neural-network building blocks on top of the autodiff tape. Each layer owns
// named Parameters; `bind` places them on a tape once per forward pass and
// returns lightweight handles used by `forward`.

#include "dklrom/autodiff.hpp"

#include <random>
#include <string>
#include <vector>

namespace dklrom::nn {

template <typename Scalar>
using ParamList = std::vector<ad::Parameter<Scalar>*>;

template <typename Scalar>
struct Linear {
  ad::Parameter<Scalar> weight;  // out x in
  ad::Parameter<Scalar> bias;    // 1 x out

  Linear() = default;
  Linear(const std::string& name, Index in, Index out, std::mt19937_64& rng);

  struct Bound {
    ad::Var<Scalar> weight, bias;
  };
  Bound bind(ad::Tape<Scalar>& tape);
  static ad::Var<Scalar> forward(const Bound& b, ad::Var<Scalar> x) {
    return ad::linear(x, b.weight, b.bias);
  }

  Index in_features() const { return weight.value.cols(); }
  Index out_features() const { return weight.value.rows(); }
  void collect(ParamList<Scalar>& out) { out.push_back(&weight); out.push_back(&bias); }
};

template <typename Scalar>
struct Conv2d {
  ad::Parameter<Scalar> weight;  // out_c x (in_c k k)
  ad::Parameter<Scalar> bias;    // 1 x out_c
  ad::ConvGeometry geometry;

  Conv2d() = default;
  Conv2d(const std::string& name, const ad::ConvGeometry& g, std::mt19937_64& rng);

  struct Bound {
    ad::Var<Scalar> weight, bias;
    ad::ConvGeometry geometry;
  };
  Bound bind(ad::Tape<Scalar>& tape);
  static ad::Var<Scalar> forward(const Bound& b, ad::Var<Scalar> x) {
    return ad::conv2d(x, b.weight, b.bias, b.geometry);
  }
  void collect(ParamList<Scalar>& out) { out.push_back(&weight); out.push_back(&bias); }
};

template <typename Scalar>
struct ConvTranspose2d {
  ad::Parameter<Scalar> weight;  // in_c x (out_c k k)
  ad::Parameter<Scalar> bias;    // 1 x out_c
  ad::ConvGeometry geometry;

  ConvTranspose2d() = default;
  ConvTranspose2d(const std::string& name, const ad::ConvGeometry& g, std::mt19937_64& rng);

  struct Bound {
    ad::Var<Scalar> weight, bias;
    ad::ConvGeometry geometry;
  };
  Bound bind(ad::Tape<Scalar>& tape);
  static ad::Var<Scalar> forward(const Bound& b, ad::Var<Scalar> x) {
    return ad::conv_transpose2d(x, b.weight, b.bias, b.geometry);
  }
  void collect(ParamList<Scalar>& out) { out.push_back(&weight); out.push_back(&bias); }
};

/// Single-layer LSTM. Gate order in the stacked weights: input, forget, cell, output.
template <typename Scalar>
struct Lstm {
  ad::Parameter<Scalar> w_input;   // 4h x in
  ad::Parameter<Scalar> w_hidden;  // 4h x h
  ad::Parameter<Scalar> bias;      // 1 x 4h

  Lstm() = default;
  Lstm(const std::string& name, Index in, Index hidden, std::mt19937_64& rng);

  Index input_size() const { return w_input.value.cols(); }
  Index hidden_size() const { return w_hidden.value.cols(); }

  /// Runs the sequence (one B x in matrix per step) from zero state and
  /// returns the final hidden state (B x h).
  ad::Var<Scalar> forward(ad::Tape<Scalar>& tape, const std::vector<ad::Var<Scalar>>& steps);

  void collect(ParamList<Scalar>& out) {
    out.push_back(&w_input);
    out.push_back(&w_hidden);
    out.push_back(&bias);
  }
};

}  // namespace dklrom::nn
