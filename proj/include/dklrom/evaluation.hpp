#pragma once

// Evaluation of trained bundles: denoising and one-step prediction metrics,
// autoregressive rollout comparisons, rollout-ensemble uncertainty maps and
// 2-D t-SNE projections of encoded latent means.

#include "dklrom/data.hpp"
#include "dklrom/image_io.hpp"
#include "dklrom/models.hpp"
#include "dklrom/tsne.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

namespace dklrom {

/// 10 log10(1 / MSE) with peak 1. With summed the denominator is the sum
/// of squared errors instead. Returns +inf when the error is exactly zero.
template <typename Scalar>
double psnr(const Matrix<Scalar>& clean, const Matrix<Scalar>& hat, bool summed = false);

/// Sum of absolute differences over all entries.
template <typename Scalar>
double l1_metric(const Matrix<Scalar>& clean, const Matrix<Scalar>& hat);

enum class Target { kInput, kSame, kNext };
std::string target_name(Target t);

struct MetricRow {
  std::string system;
  Index H = 0;
  Index T = 0;
  double noise = 0.0;  // sigma_x^2
  Target target = Target::kSame;
  double psnr_db = 0.0;
  double l1 = 0.0;
  Index windows = 0;

  bool psnr_infinite() const { return std::isinf(psnr_db); }
};

/// A trained bundle and the multi-step horizon it was trained with.
struct EvalModel {
  const ModelBundle<float>* bundle = nullptr;
  Index horizon = 0;
};

struct ReconstructionOptions {
  Index min_windows = 50;
  Index max_windows = 200;
  bool psnr_summed = false;
  std::uint64_t seed = 0;
};

/// For every model and noise level: the noisy input itself, encode/decode of
/// the noisy frame x_t, and the one-step prediction of x_{t+1} from the noisy
/// history, all scored against the clean frames and averaged per frame. All
/// models see the same target frames and the same noise draws. Latent means
/// are used throughout, so the table is deterministic.
std::vector<MetricRow> evaluate_reconstruction(const std::vector<EvalModel>& models, const TrajectoryDataset& test,
                                               const std::vector<double>& noise_levels,
                                               const ReconstructionOptions& options = {});

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);

struct RolloutComparison {
  Matrix<float> predicted;  // K x |x|
  Matrix<float> truth;      // K x |x|, clean
  Vector<double> l1;        // per step
  Vector<double> psnr_db;
  img::Image strip;         // rows: noisy input history, prediction, truth (boxed green)
};

/// Mean-path rollout: the noisy history is encoded, then each predicted
/// belief mean is fed back as the next latent. Throws ValidationError if the
/// trajectory holds fewer than H + K frames.
RolloutComparison rollout_compare(const ModelBundle<float>& bundle, const TrajectoryDataset& ds, Index trajectory,
                                  double noise_sigma2, Index steps, std::uint64_t seed);

/// Decodes the K x |z| latents and scores them against frames H..H+K-1.
/// Shared by rollout_compare; lets tests inject latents directly.
RolloutComparison compare_latents(const ModelBundle<float>& bundle, const TrajectoryDataset& ds, Index trajectory,
                                  const Matrix<float>& noisy_history, const Matrix<float>& latents);

struct UncertaintyMaps {
  std::vector<double> noise_levels;
  std::vector<std::vector<Matrix<float>>> std_maps;  // [noise][step], height x width
  std::vector<double> mean_std;                      // per noise level
  double vmax = 0.0;                                 // shared colour scale
  img::Image figure;                                 // one row per noise level
};

/// Pixelwise standard deviation over n_rollouts sampled rollouts of K steps,
/// averaged over channels. Every noise level uses the same noise and path
/// seeds so only sigma^2 changes between rows.
UncertaintyMaps uncertainty_heatmaps(const ModelBundle<float>& bundle, const TrajectoryDataset& ds,
                                     Index trajectory, const std::vector<double>& noise_levels,
                                     Index n_rollouts = 30, Index steps = 60, std::uint64_t seed = 0);

struct ProjectionOptions {
  Index max_points = 600;
  Index theta1_bins = 4;  // pendulum only
  TsneOptions tsne;
};

struct LatentProjection {
  Matrix<double> embedding;  // n x 2
  Vector<double> color;      // theta2 (pendulum) or timestep
  std::vector<Index> group;  // theta1 bin, or 0
  std::string color_by;
  img::Image plot;
};

/// t-SNE of encoded latent means of clean frames spread evenly over the
/// dataset. Pendulum points are coloured by theta2 with one panel per theta1
/// bin; otherwise by timestep. Throws ValidationError with fewer than 50 frames.
LatentProjection latent_projection(const ModelBundle<float>& bundle, const TrajectoryDataset& ds,
                                   const ProjectionOptions& options = {});

nlohmann::json to_json(const MetricRow& row);

}  // namespace dklrom
