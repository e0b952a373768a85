#include "dklrom/tsne.hpp"

#include "dklrom/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace dklrom {

void TsneOptions::validate() const {
  if (!(perplexity > 1.0)) throw ValidationError("tsne: perplexity must exceed 1");
  if (iterations < 1 || exaggeration_iterations < 0) throw ValidationError("tsne: bad iteration counts");
  if (!(learning_rate >= 0.0) || !(early_exaggeration >= 1.0)) throw ValidationError("tsne: bad step settings");
}

Matrix<double> tsne_affinities(const Matrix<double>& x, double perplexity) {
  const Index n = x.rows();
  if (n < 2) throw ValidationError("tsne: need at least 2 points");
  if (!(perplexity < static_cast<double>(n)))
    throw ValidationError("tsne: perplexity " + std::to_string(perplexity) + " needs more than " +
                          std::to_string(n) + " points");
  Matrix<double> d2(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) d2(i, j) = (x.row(i) - x.row(j)).squaredNorm();

  const double target = std::log(perplexity);
  Matrix<double> p = Matrix<double>::Zero(n, n);
  Vector<double> row(n);
  for (Index i = 0; i < n; ++i) {
    // bisection on the precision beta = 1 / (2 sigma^2)
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double dmin = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < n; ++j)
      if (j != i) dmin = std::min(dmin, d2(i, j));
    for (int it = 0; it < 200; ++it) {
      double sum = 0.0, weighted = 0.0;
      for (Index j = 0; j < n; ++j) {
        row(j) = j == i ? 0.0 : std::exp(-beta * (d2(i, j) - dmin));
        sum += row(j);
        weighted += row(j) * (d2(i, j) - dmin);
      }
      const double entropy = std::log(sum) + beta * weighted / sum;
      row /= sum;
      if (std::abs(entropy - target) < 1e-10) break;
      if (entropy > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    p.row(i) = row.transpose();
  }
  Matrix<double> sym = (p + p.transpose()) / (2.0 * static_cast<double>(n));
  return sym.cwiseMax(1e-12);
}

Matrix<double> tsne(const Matrix<double>& x, const TsneOptions& options) {
  options.validate();
  const Index n = x.rows();
  const Matrix<double> p = tsne_affinities(x, options.perplexity);
  const double eta = options.learning_rate > 0.0
                         ? options.learning_rate
                         : std::max(static_cast<double>(n) / options.early_exaggeration / 4.0, 50.0);

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1e-4);
  Matrix<double> y(n, 2);
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < 2; ++k) y(i, k) = normal(rng);

  Matrix<double> update = Matrix<double>::Zero(n, 2);
  Matrix<double> gains = Matrix<double>::Ones(n, 2);
  Matrix<double> num(n, n), grad(n, 2);
  for (Index it = 0; it < options.iterations; ++it) {
    const double exaggeration = it < options.exaggeration_iterations ? options.early_exaggeration : 1.0;
    const double momentum = it < options.exaggeration_iterations ? 0.5 : 0.8;
    double z = 0.0;
    for (Index i = 0; i < n; ++i) {
      num(i, i) = 0.0;
      for (Index j = i + 1; j < n; ++j) {
        const double v = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
        num(i, j) = num(j, i) = v;
        z += 2.0 * v;
      }
    }
    grad.setZero();
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double w = (exaggeration * p(i, j) - num(i, j) / z) * num(i, j);
        grad.row(i) += 4.0 * w * (y.row(i) - y.row(j));
      }
    }
    for (Index i = 0; i < n; ++i) {
      for (Index k = 0; k < 2; ++k) {
        const bool same_sign = (grad(i, k) > 0) == (update(i, k) > 0);
        gains(i, k) = std::max(0.01, same_sign ? gains(i, k) * 0.8 : gains(i, k) + 0.2);
        update(i, k) = momentum * update(i, k) - eta * gains(i, k) * grad(i, k);
      }
    }
    y += update;
    y.rowwise() -= y.colwise().mean();
  }
  if (!y.allFinite()) throw NumericalError("tsne: embedding diverged");
  return y;
}

}  // namespace dklrom
