#include "dklrom/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace dklrom::nn {
namespace {

template <typename Scalar>
Matrix<Scalar> uniform_init(Index rows, Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix<Scalar> m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = static_cast<Scalar>(dist(rng));
  return m;
}

}  // namespace

template <typename Scalar>
Linear<Scalar>::Linear(const std::string& name, Index in, Index out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = ad::Parameter<Scalar>(name + ".weight", uniform_init<Scalar>(out, in, bound, rng));
  bias = ad::Parameter<Scalar>(name + ".bias", uniform_init<Scalar>(1, out, bound, rng));
}

template <typename Scalar>
typename Linear<Scalar>::Bound Linear<Scalar>::bind(ad::Tape<Scalar>& tape) {
  return {tape.parameter(weight), tape.parameter(bias)};
}

template <typename Scalar>
Conv2d<Scalar>::Conv2d(const std::string& name, const ad::ConvGeometry& g, std::mt19937_64& rng)
    : geometry(g) {
  const Index fan_in = g.in_channels * g.kernel * g.kernel;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  weight = ad::Parameter<Scalar>(name + ".weight",
                                 uniform_init<Scalar>(g.out_channels, fan_in, bound, rng));
  bias = ad::Parameter<Scalar>(name + ".bias", uniform_init<Scalar>(1, g.out_channels, bound, rng));
}

template <typename Scalar>
typename Conv2d<Scalar>::Bound Conv2d<Scalar>::bind(ad::Tape<Scalar>& tape) {
  return {tape.parameter(weight), tape.parameter(bias), geometry};
}

template <typename Scalar>
ConvTranspose2d<Scalar>::ConvTranspose2d(const std::string& name, const ad::ConvGeometry& g,
                                         std::mt19937_64& rng)
    : geometry(g) {
  // Each output pixel receives about in_c * (k/stride)^2 contributions.
  const double fan_in = static_cast<double>(g.in_channels * g.kernel * g.kernel) /
                        static_cast<double>(g.stride * g.stride);
  const double bound = 1.0 / std::sqrt(fan_in);
  weight = ad::Parameter<Scalar>(
      name + ".weight",
      uniform_init<Scalar>(g.in_channels, g.out_channels * g.kernel * g.kernel, bound, rng));
  bias = ad::Parameter<Scalar>(name + ".bias", uniform_init<Scalar>(1, g.out_channels, bound, rng));
}

template <typename Scalar>
typename ConvTranspose2d<Scalar>::Bound ConvTranspose2d<Scalar>::bind(ad::Tape<Scalar>& tape) {
  return {tape.parameter(weight), tape.parameter(bias), geometry};
}

template <typename Scalar>
Lstm<Scalar>::Lstm(const std::string& name, Index in, Index hidden, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  w_input = ad::Parameter<Scalar>(name + ".w_input", uniform_init<Scalar>(4 * hidden, in, bound, rng));
  w_hidden =
      ad::Parameter<Scalar>(name + ".w_hidden", uniform_init<Scalar>(4 * hidden, hidden, bound, rng));
  Matrix<Scalar> b = uniform_init<Scalar>(1, 4 * hidden, bound, rng);
  // Forget-gate bias starts at 1 so early gradients pass through the cell.
  b.middleCols(hidden, hidden).array() += Scalar(1);
  bias = ad::Parameter<Scalar>(name + ".bias", std::move(b));
}

template <typename Scalar>
ad::Var<Scalar> Lstm<Scalar>::forward(ad::Tape<Scalar>& tape,
                                      const std::vector<ad::Var<Scalar>>& steps) {
  if (steps.empty()) throw std::invalid_argument("Lstm::forward: empty sequence");
  const Index batch = steps.front().rows();
  const Index h = hidden_size();
  auto wi = tape.parameter(w_input);
  auto wh = tape.parameter(w_hidden);
  auto b = tape.parameter(bias);
  auto zero_h = tape.constant(Matrix<Scalar>::Zero(1, 4 * h));
  ad::Var<Scalar> hidden = tape.constant(Matrix<Scalar>::Zero(batch, h));
  ad::Var<Scalar> cell = tape.constant(Matrix<Scalar>::Zero(batch, h));
  for (std::size_t s = 0; s < steps.size(); ++s) {
    if (steps[s].cols() != input_size()) throw std::invalid_argument("Lstm::forward: input width");
    auto gates = ad::linear(steps[s], wi, b);
    if (s > 0) gates = ad::add(gates, ad::linear(hidden, wh, zero_h));
    auto in_gate = ad::sigmoid(ad::slice_cols(gates, 0, h));
    auto forget_gate = ad::sigmoid(ad::slice_cols(gates, h, h));
    auto candidate = ad::tanh(ad::slice_cols(gates, 2 * h, h));
    auto out_gate = ad::sigmoid(ad::slice_cols(gates, 3 * h, h));
    cell = s > 0 ? ad::add(ad::mul(forget_gate, cell), ad::mul(in_gate, candidate))
                 : ad::mul(in_gate, candidate);
    hidden = ad::mul(out_gate, ad::tanh(cell));
  }
  return hidden;
}

template struct Linear<float>;
template struct Linear<double>;
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct ConvTranspose2d<float>;
template struct ConvTranspose2d<double>;
template struct Lstm<float>;
template struct Lstm<double>;

}  // namespace dklrom::nn
