#pragma once

// Joint minibatch optimisation of every network weight, kernel
// hyperparameter and variational state, plus the loss-weight grid search.

#include "dklrom/data.hpp"
#include "dklrom/losses.hpp"
#include "dklrom/models.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace dklrom {

struct TrainConfig {
  ModelConfig model;
  LossWeights weights;
  std::string system = "pendulum";
  Index batch_size = 32;
  double lr_network = 3e-4;
  double lr_gp = 1e-2;
  Index max_steps = 30000;
  double noise_sigma2 = 0.0;
  Index eval_interval = 1000;  // 0 disables evaluation and checkpoints
  Index eval_batches = 4;      // validation minibatches per evaluation
  double grad_clip = 10.0;     // global gradient-norm bound, 0 disables
  Index warmup_steps = 0;      // w_reg and w_var ramp up linearly over these steps
  std::uint64_t seed = 0;
  bool deterministic = true;   // single-threaded linear algebra
  std::filesystem::path checkpoint_dir;  // empty: no periodic checkpoints

  void validate() const;
  /// Throws ConfigError unless the dataset shapes fit the model and H+T <= N.
  void check_dataset(const TrajectoryDataset& ds) const;
};

struct TrainStep {
  Index step = 0;
  LossBreakdown loss;
  double grad_norm = 0;  // before clipping
  double seconds = 0;    // wall-clock since the start of training
};

struct EvalSnapshot {
  Index step = 0;
  LossBreakdown loss;  // averaged over the fixed validation batches
};

struct TrainLog {
  std::vector<TrainStep> steps;
  std::vector<EvalSnapshot> evals;
  double wall_seconds = 0;
};

struct TrainResult {
  ModelBundle<float> bundle;
  TrainLog log;
};

/// Adam with bias correction and one learning rate per parameter group.
template <typename Scalar>
class Adam {
 public:
  Adam(nn::ParamList<Scalar> params, double lr_network, double lr_gp, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void step();
  Index steps_taken() const { return t_; }

 private:
  nn::ParamList<Scalar> params_;
  std::vector<Matrix<Scalar>> m_, v_;
  double lr_network_, lr_gp_, beta1_, beta2_, eps_;
  Index t_ = 0;
};

/// Global L2 norm of all gradients.
template <typename Scalar>
double gradient_norm(const nn::ParamList<Scalar>& params);

/// Scales all gradients so their global norm is at most max_norm; returns the norm before scaling.
template <typename Scalar>
double clip_gradients(const nn::ParamList<Scalar>& params, double max_norm);

/// Sets the decoder's output bias to the logit of each channel's mean
/// intensity in `ds`, so an untrained decoder starts near the average frame.
void initialise_output_bias(ModelBundle<float>& bundle, const TrajectoryDataset& ds);

/// Re-initialises both GP layers from deep features of randomly drawn windows.
/// Each feature output layer is first rescaled so those features are
/// standardised per dimension. Inducing locations go to distinct feature rows
/// and length scales to the median pairwise feature distance. Variational
/// factors start at a tenth of the prior Cholesky factor; encoder means at the
/// standardised features, dynamics means at the encoding of the next frame.
void initialise_inducing(ModelBundle<float>& bundle, const TrajectoryDataset& ds, const TrainConfig& cfg,
                         std::mt19937_64& rng);

using StepCallback = std::function<void(const TrainStep&)>;

/// Throws NumericalError (with the offending step's loss components and
/// parameter norms) as soon as the loss or a gradient is non-finite.
TrainResult train(const TrainConfig& cfg, const TrajectoryDataset& train_ds,
                  const TrajectoryDataset* validation = nullptr, const StepCallback& on_step = {});

/// Mean breakdown over `batches` minibatches drawn from a stream seeded by `seed`.
LossBreakdown held_out_loss(const ModelBundle<float>& bundle, const TrajectoryDataset& ds, const TrainConfig& cfg,
                            Index batches, std::uint64_t seed);

struct GridPoint {
  double w_reg = 1.0;
  double w_var = 1e-2;
};

struct GridRow {
  GridPoint point;
  LossBreakdown held_out;  // total uses this point's weights
  double score = 0;        // recon + reg + recon_next on held-out windows
};

struct GridSearchResult {
  std::vector<GridRow> rows;  // one per grid point, in grid order
  std::size_t best = 0;       // argmin of score
};

/// Trains one model per grid point (same seed and budget) on a trajectory-level
/// split of `ds` and scores each on the held-out part.
GridSearchResult grid_search_weights(const TrainConfig& cfg, const TrajectoryDataset& ds,
                                     const std::vector<GridPoint>& grid, double validation_fraction = 0.2);

}  // namespace dklrom
