#pragma once

// Trajectory datasets: in-memory layout, on-disk persistence, noisy window
// sampling for minibatches, and trajectory-level train/test splits.

#include "dklrom/autodiff.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace dklrom {

inline constexpr int kDatasetFormatVersion = 1;

struct TrajectoryDataset {
  std::string system;
  Index channels = 0;
  Index height = 0;
  Index width = 0;
  Index control_dim = 0;
  Index param_dim = 0;
  std::vector<Matrix<float>> measurements;  // per trajectory, N x |x|, values in [0,1]
  std::vector<Matrix<float>> controls;      // per trajectory, (N-1) x |u|
  Matrix<float> params;                     // M x |p|
  std::vector<Matrix<float>> states;        // optional ground truth, N x state_dim
  std::vector<std::string> state_names;
  std::vector<Index> ids;                   // original trajectory ids (survive splits)
  std::uint64_t seed = 0;
  double frame_dt = 0.0;
  std::map<std::string, double> settings;   // generator parameters, recorded in meta

  Index trajectories() const { return static_cast<Index>(measurements.size()); }
  Index steps() const { return measurements.empty() ? 0 : measurements.front().rows(); }
  Index measurement_dim() const { return channels * height * width; }
  bool has_states() const { return !states.empty(); }

  /// Throws ValidationError on inconsistent shapes or non-finite / out-of-range values.
  void validate() const;
  /// The subset of trajectories at the given positions.
  TrajectoryDataset select(const std::vector<Index>& positions) const;
};

/// Writes `meta.json` plus one binary array per field into `dir` (created if needed).
void save_dataset(const TrajectoryDataset& ds, const std::filesystem::path& dir);

/// Throws FormatError on a bad header, version, checksum or shape; nothing is
/// returned unless every array loads and validates.
TrajectoryDataset load_dataset(const std::filesystem::path& dir);

struct SequenceWindow {
  Matrix<float> x_seq;  // (H+T) x |x|
  Matrix<float> u_seq;  // (H+T-1) x |u|
  Vector<float> p;      // |p|
  Index trajectory = 0; // position in the dataset
  Index offset = 0;

  /// Key used to derive per-window noise streams in the losses.
  std::uint64_t key() const {
    return (static_cast<std::uint64_t>(trajectory) << 32) ^ static_cast<std::uint64_t>(offset);
  }
};

/// B windows drawn uniformly over valid (trajectory, offset) pairs, with fresh
/// measurement noise of variance noise_sigma2 on every frame.
std::vector<SequenceWindow> sample_windows(const TrajectoryDataset& ds, Index batch, Index history,
                                           Index horizon, double noise_sigma2, std::mt19937_64& rng);

/// The window at a fixed position, noise applied as in sample_windows.
SequenceWindow make_window(const TrajectoryDataset& ds, Index trajectory, Index offset, Index length,
                           double noise_sigma2, std::mt19937_64& rng);

struct DatasetSplit {
  TrajectoryDataset train;
  TrajectoryDataset test;
};

/// Shuffles trajectory positions and puts round(fraction * M) (at least 1) in test.
DatasetSplit split(const TrajectoryDataset& ds, double test_fraction, std::mt19937_64& rng);

}  // namespace dklrom
