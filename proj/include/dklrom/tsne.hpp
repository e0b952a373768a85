#pragma once

// Exact t-SNE (O(n^2) per iteration), adequate for a few thousand points.

#include "dklrom/autodiff.hpp"

#include <cstdint>

namespace dklrom {

struct TsneOptions {
  double perplexity = 30.0;
  Index iterations = 1000;
  double learning_rate = 0.0;  // 0: max(n / early_exaggeration / 4, 50)
  double early_exaggeration = 12.0;
  Index exaggeration_iterations = 250;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Conditional affinities p_{j|i} matching `perplexity` per row, symmetrised
/// and normalised to sum to 1.
Matrix<double> tsne_affinities(const Matrix<double>& x, double perplexity);

/// One 2-D point per row of x. Throws ValidationError unless perplexity < n.
Matrix<double> tsne(const Matrix<double>& x, const TsneOptions& options = {});

}  // namespace dklrom
