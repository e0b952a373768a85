#pragma once

// Ground-truth generators: an actuated double pendulum rendered to RGB frames
// and a lambda-omega reaction-diffusion system on a periodic grid, plus the
// additive measurement-noise model.

#include "dklrom/autodiff.hpp"
#include "dklrom/data.hpp"

#include <cstdint>
#include <random>
#include <string>

namespace dklrom::sim {

struct PendulumParams {
  double m1 = 1.0;
  double m2 = 1.0;
  double l1 = 1.0;
  double l2 = 1.0;
  double g = 9.81;
  double dt = 1e-3;         // RK4 step
  double frame_dt = 0.02;   // time between recorded frames
  double torque_max = 2.0;
  Index image_size = 84;    // rendered frames are image_size^2 x 3

  void validate() const;
};

/// Angles from the downward vertical.
struct PendulumState {
  double theta1 = 0.0;
  double theta2 = 0.0;
  double omega1 = 0.0;
  double omega2 = 0.0;
};

PendulumState pendulum_deriv(const PendulumState& s, double u1, const PendulumParams& p);

/// One RK4 step of size p.dt with u1 held constant. Throws NumericalError on NaN.
PendulumState pendulum_step(const PendulumState& s, double u1, const PendulumParams& p);

/// Kinetic plus potential energy, potential measured from the hanging rest position.
double pendulum_energy(const PendulumState& s, const PendulumParams& p);

/// Channel-major 3 x n x n frame in [0,1] (one row). Link 1 is drawn in red,
/// link 2 in green, on a black background; the pivot sits at the image centre.
Matrix<float> render_pendulum(const PendulumState& s, const PendulumParams& p);

struct RDParams {
  double beta = 1.0;
  double d = 0.1;
  Index grid_n = 128;
  double domain_half = 10.0;
  double dt = 0.025;
  Index save_every = 20;
  bool positive_beta = false;  // +beta in the v equation instead of -beta
  bool v0_equals_u0 = false;       // v0 = u0 instead of the quadrature (sin) field

  double spacing() const { return 2.0 * domain_half / static_cast<double>(grid_n); }
  /// Throws ConfigError if the grid is invalid or dt exceeds 0.9 h^2 / (8 d).
  void validate() const;
};

struct RDState {
  Eigen::MatrixXd u;
  Eigen::MatrixXd v;
};

/// 5-point Laplacian with periodic wrap, scaled by 1/h^2. Rows index y, columns x.
Eigen::MatrixXd periodic_laplacian(const Eigen::MatrixXd& f, double h);

RDState rd_rhs(const RDState& s, const RDParams& p);
RDState rd_initial_condition(const RDParams& p);
RDState rd_step(const RDState& s, const RDParams& p);

/// Two-channel frame ((u+1)/2, (v+1)/2) clipped to [0,1], channel-major.
Matrix<float> rd_measurement(const RDState& s);

/// x + N(0, sigma2) per entry, clipped to [0,1]. sigma2 = 0 returns x unchanged.
template <typename Scalar>
Matrix<Scalar> add_noise(const Matrix<Scalar>& x, double sigma2, std::mt19937_64& rng);

enum class System { kPendulum, kReactionDiffusion };

System parse_system(const std::string& name);
std::string system_name(System s);

struct GenerationConfig {
  PendulumParams pendulum;
  RDParams rd;
  double beta_min = 0.5;
  double beta_max = 1.5;
};

/// M trajectories of N frames. Trajectory m draws from its own stream seeded by
/// (seed, m), so the result does not depend on generation order.
TrajectoryDataset generate_dataset(System system, Index trajectories, Index steps,
                                   const GenerationConfig& cfg, std::uint64_t seed);

}  // namespace dklrom::sim
