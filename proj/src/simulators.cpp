#include "dklrom/simulators.hpp"

#include "dklrom/errors.hpp"
#include "dklrom/models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace dklrom::sim {

using std::numbers::pi;

void PendulumParams::validate() const {
  for (double v : {m1, m2, l1, l2, g, dt, frame_dt, torque_max}) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("pendulum parameters must be positive and finite");
  }
  if (image_size < 8) throw ConfigError("pendulum image_size must be >= 8");
}

PendulumState pendulum_deriv(const PendulumState& s, double u1, const PendulumParams& p) {
  const double d = s.theta1 - s.theta2;
  const double den = 2 * p.m1 + p.m2 - p.m2 * std::cos(2 * s.theta1 - 2 * s.theta2);
  const double w1 = s.omega1, w2 = s.omega2;
  PendulumState out;
  out.theta1 = w1;
  out.theta2 = w2;
  out.omega1 = (-p.g * (2 * p.m1 + p.m2) * std::sin(s.theta1) -
                p.m2 * p.g * std::sin(s.theta1 - 2 * s.theta2) -
                2 * std::sin(d) * p.m2 * (w2 * w2 * p.l2 + w1 * w1 * p.l1 * std::cos(d))) /
                   (p.l1 * den) +
               u1;
  out.omega2 = 2 * std::sin(d) *
               (w1 * w1 * p.l1 * (p.m1 + p.m2) + p.g * (p.m1 + p.m2) * std::cos(s.theta1) +
                w2 * w2 * p.l2 * p.m2 * std::cos(d)) /
               (p.l2 * den);
  return out;
}

namespace {

PendulumState axpy(const PendulumState& s, double h, const PendulumState& k) {
  return {s.theta1 + h * k.theta1, s.theta2 + h * k.theta2, s.omega1 + h * k.omega1,
          s.omega2 + h * k.omega2};
}

}  // namespace

PendulumState pendulum_step(const PendulumState& s, double u1, const PendulumParams& p) {
  const double h = p.dt;
  const auto k1 = pendulum_deriv(s, u1, p);
  const auto k2 = pendulum_deriv(axpy(s, h / 2, k1), u1, p);
  const auto k3 = pendulum_deriv(axpy(s, h / 2, k2), u1, p);
  const auto k4 = pendulum_deriv(axpy(s, h, k3), u1, p);
  PendulumState out;
  out.theta1 = s.theta1 + h / 6 * (k1.theta1 + 2 * k2.theta1 + 2 * k3.theta1 + k4.theta1);
  out.theta2 = s.theta2 + h / 6 * (k1.theta2 + 2 * k2.theta2 + 2 * k3.theta2 + k4.theta2);
  out.omega1 = s.omega1 + h / 6 * (k1.omega1 + 2 * k2.omega1 + 2 * k3.omega1 + k4.omega1);
  out.omega2 = s.omega2 + h / 6 * (k1.omega2 + 2 * k2.omega2 + 2 * k3.omega2 + k4.omega2);
  if (!std::isfinite(out.theta1) || !std::isfinite(out.theta2) || !std::isfinite(out.omega1) ||
      !std::isfinite(out.omega2)) {
    std::ostringstream msg;
    msg << "pendulum integration produced a non-finite state from (" << s.theta1 << ", " << s.theta2
        << ", " << s.omega1 << ", " << s.omega2 << ") with u1=" << u1;
    throw NumericalError(msg.str());
  }
  return out;
}

double pendulum_energy(const PendulumState& s, const PendulumParams& p) {
  const double kinetic = 0.5 * (p.m1 + p.m2) * p.l1 * p.l1 * s.omega1 * s.omega1 +
                         0.5 * p.m2 * p.l2 * p.l2 * s.omega2 * s.omega2 +
                         p.m2 * p.l1 * p.l2 * s.omega1 * s.omega2 * std::cos(s.theta1 - s.theta2);
  const double potential = (p.m1 + p.m2) * p.g * p.l1 * (1 - std::cos(s.theta1)) +
                           p.m2 * p.g * p.l2 * (1 - std::cos(s.theta2));
  return kinetic + potential;
}

namespace {

// Anti-aliased capsule of half-width `radius` from (ax, ay) to (bx, by), written
// with max() into one channel plane.
void draw_capsule(float* plane, Index n, double ax, double ay, double bx, double by, double radius) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  const double reach = radius + 1.0;
  const Index x0 = std::max<Index>(0, static_cast<Index>(std::floor(std::min(ax, bx) - reach)));
  const Index x1 = std::min<Index>(n - 1, static_cast<Index>(std::ceil(std::max(ax, bx) + reach)));
  const Index y0 = std::max<Index>(0, static_cast<Index>(std::floor(std::min(ay, by) - reach)));
  const Index y1 = std::min<Index>(n - 1, static_cast<Index>(std::ceil(std::max(ay, by) + reach)));
  for (Index y = y0; y <= y1; ++y) {
    for (Index x = x0; x <= x1; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      double t = len2 > 0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double ex = px - (ax + t * dx), ey = py - (ay + t * dy);
      const double cover = std::clamp(radius + 0.5 - std::sqrt(ex * ex + ey * ey), 0.0, 1.0);
      float& dst = plane[y * n + x];
      dst = std::max(dst, static_cast<float>(cover));
    }
  }
}

}  // namespace

Matrix<float> render_pendulum(const PendulumState& s, const PendulumParams& p) {
  const Index n = p.image_size;
  Matrix<float> img = Matrix<float>::Zero(1, 3 * n * n);
  const double nd = static_cast<double>(n);
  const double scale = 0.4 * nd / (p.l1 + p.l2);
  const double radius = 0.03 * nd;
  const double cx = nd / 2, cy = nd / 2;
  // Image y grows downwards, so the hanging direction is +y.
  const double jx = cx + scale * p.l1 * std::sin(s.theta1);
  const double jy = cy + scale * p.l1 * std::cos(s.theta1);
  const double ex = jx + scale * p.l2 * std::sin(s.theta2);
  const double ey = jy + scale * p.l2 * std::cos(s.theta2);
  draw_capsule(img.data(), n, cx, cy, jx, jy, radius);
  draw_capsule(img.data() + n * n, n, jx, jy, ex, ey, radius);
  return img;
}

// ---------------------------------------------------------------------------

void RDParams::validate() const {
  if (grid_n < 8 || (grid_n & (grid_n - 1)) != 0) throw ConfigError("rd grid_n must be a power of two >= 8");
  if (!(domain_half > 0.0)) throw ConfigError("rd domain_half must be positive");
  if (!(d >= 0.0) || !(dt > 0.0)) throw ConfigError("rd needs d >= 0 and dt > 0");
  if (save_every < 1) throw ConfigError("rd save_every must be >= 1");
  const double h = spacing();
  if (d > 0.0 && dt > 0.9 * h * h / (8.0 * d)) {
    std::ostringstream msg;
    msg << "rd dt=" << dt << " exceeds the explicit stability bound " << 0.9 * h * h / (8.0 * d)
        << " for h=" << h << ", d=" << d;
    throw ConfigError(msg.str());
  }
}

Eigen::MatrixXd periodic_laplacian(const Eigen::MatrixXd& f, double h) {
  const Index r = f.rows(), c = f.cols();
  Eigen::MatrixXd out(r, c);
  const double inv = 1.0 / (h * h);
  for (Index j = 0; j < c; ++j) {
    const Index jl = (j + c - 1) % c, jr = (j + 1) % c;
    for (Index i = 0; i < r; ++i) {
      const Index iu = (i + r - 1) % r, id = (i + 1) % r;
      out(i, j) = (f(iu, j) + f(id, j) + f(i, jl) + f(i, jr) - 4.0 * f(i, j)) * inv;
    }
  }
  return out;
}

RDState rd_rhs(const RDState& s, const RDParams& p) {
  const double h = p.spacing();
  const Eigen::ArrayXXd u = s.u.array(), v = s.v.array();
  const Eigen::ArrayXXd a2 = u.square() + v.square();
  const double sign = p.positive_beta ? 1.0 : -1.0;
  RDState out;
  out.u = ((1.0 - a2) * u + p.beta * a2 * v).matrix() + p.d * periodic_laplacian(s.u, h);
  out.v = (sign * p.beta * a2 * u + (1.0 - a2) * v).matrix() + p.d * periodic_laplacian(s.v, h);
  return out;
}

RDState rd_initial_condition(const RDParams& p) {
  const Index n = p.grid_n;
  const double h = p.spacing();
  RDState s{Eigen::MatrixXd(n, n), Eigen::MatrixXd(n, n)};
  for (Index i = 0; i < n; ++i) {
    const double y = -p.domain_half + static_cast<double>(i) * h;
    for (Index j = 0; j < n; ++j) {
      const double x = -p.domain_half + static_cast<double>(j) * h;
      const double r = std::sqrt(x * x + y * y);
      const double phase = std::atan2(y, x) - r;
      s.u(i, j) = std::tanh(r) * std::cos(phase);
      s.v(i, j) = p.v0_equals_u0 ? s.u(i, j) : std::tanh(r) * std::sin(phase);
    }
  }
  return s;
}

RDState rd_step(const RDState& s, const RDParams& p) {
  p.validate();
  const double h = p.dt;
  auto shifted = [](const RDState& a, double w, const RDState& k) {
    return RDState{a.u + w * k.u, a.v + w * k.v};
  };
  const auto k1 = rd_rhs(s, p);
  const auto k2 = rd_rhs(shifted(s, h / 2, k1), p);
  const auto k3 = rd_rhs(shifted(s, h / 2, k2), p);
  const auto k4 = rd_rhs(shifted(s, h, k3), p);
  RDState out{s.u + h / 6 * (k1.u + 2 * k2.u + 2 * k3.u + k4.u),
              s.v + h / 6 * (k1.v + 2 * k2.v + 2 * k3.v + k4.v)};
  if (!out.u.allFinite() || !out.v.allFinite())
    throw NumericalError("reaction-diffusion step produced non-finite values");
  return out;
}

Matrix<float> rd_measurement(const RDState& s) {
  const Index n = s.u.rows() * s.u.cols();
  Matrix<float> out(1, 2 * n);
  // Row-major flattening of each (y, x) field.
  for (Index i = 0; i < s.u.rows(); ++i)
    for (Index j = 0; j < s.u.cols(); ++j) {
      const Index k = i * s.u.cols() + j;
      out(0, k) = static_cast<float>(std::clamp((s.u(i, j) + 1.0) / 2.0, 0.0, 1.0));
      out(0, n + k) = static_cast<float>(std::clamp((s.v(i, j) + 1.0) / 2.0, 0.0, 1.0));
    }
  return out;
}

template <typename Scalar>
Matrix<Scalar> add_noise(const Matrix<Scalar>& x, double sigma2, std::mt19937_64& rng) {
  if (!(sigma2 >= 0.0)) throw ValidationError("add_noise: variance must be >= 0");
  if (sigma2 == 0.0) return x;
  std::normal_distribution<double> dist(0.0, std::sqrt(sigma2));
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const double v = static_cast<double>(x.data()[i]) + dist(rng);
    out.data()[i] = static_cast<Scalar>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

template Matrix<float> add_noise(const Matrix<float>&, double, std::mt19937_64&);
template Matrix<double> add_noise(const Matrix<double>&, double, std::mt19937_64&);

System parse_system(const std::string& name) {
  if (name == "pendulum") return System::kPendulum;
  if (name == "reaction_diffusion" || name == "rd") return System::kReactionDiffusion;
  throw ConfigError("unknown system '" + name + "' (expected pendulum or reaction_diffusion)");
}

std::string system_name(System s) {
  return s == System::kPendulum ? "pendulum" : "reaction_diffusion";
}

namespace {

void generate_pendulum(TrajectoryDataset& ds, Index m, Index steps, const PendulumParams& p,
                       std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(0.0, 2 * pi);
  std::uniform_real_distribution<double> torque(-p.torque_max, p.torque_max);
  const Index substeps = std::max<Index>(1, std::llround(p.frame_dt / p.dt));
  PendulumState s;
  s.theta1 = pi - angle(rng);  // (-pi, pi]
  s.theta2 = pi - angle(rng);
  Matrix<float>& x = ds.measurements[static_cast<std::size_t>(m)];
  Matrix<float>& u = ds.controls[static_cast<std::size_t>(m)];
  Matrix<float>& st = ds.states[static_cast<std::size_t>(m)];
  auto record = [&](Index k) {
    x.row(k) = render_pendulum(s, p);
    st.row(k) << static_cast<float>(s.theta1), static_cast<float>(s.theta2),
        static_cast<float>(s.omega1), static_cast<float>(s.omega2);
  };
  record(0);
  for (Index k = 0; k + 1 < steps; ++k) {
    const double torque_k = torque(rng);
    u(k, 0) = static_cast<float>(torque_k);
    for (Index j = 0; j < substeps; ++j) s = pendulum_step(s, torque_k, p);
    record(k + 1);
  }
}

void generate_rd(TrajectoryDataset& ds, Index m, Index steps, RDParams p, double beta_min,
                 double beta_max, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> beta(beta_min, beta_max);
  p.beta = beta(rng);
  ds.params(m, 0) = static_cast<float>(p.beta);
  Matrix<float>& x = ds.measurements[static_cast<std::size_t>(m)];
  RDState s = rd_initial_condition(p);
  x.row(0) = rd_measurement(s);
  for (Index k = 1; k < steps; ++k) {
    for (Index j = 0; j < p.save_every; ++j) s = rd_step(s, p);
    x.row(k) = rd_measurement(s);
  }
}

}  // namespace

TrajectoryDataset generate_dataset(System system, Index trajectories, Index steps,
                                   const GenerationConfig& cfg, std::uint64_t seed) {
  if (trajectories < 1 || steps < 1) throw ValidationError("generate_dataset: M and N must be >= 1");
  TrajectoryDataset ds;
  ds.system = system_name(system);
  ds.seed = seed;
  const auto m_count = static_cast<std::size_t>(trajectories);
  ds.ids.resize(m_count);
  for (Index m = 0; m < trajectories; ++m) ds.ids[static_cast<std::size_t>(m)] = m;
  if (system == System::kPendulum) {
    const auto& p = cfg.pendulum;
    p.validate();
    ds.channels = 3;
    ds.height = ds.width = p.image_size;
    ds.control_dim = 1;
    ds.param_dim = 0;
    ds.frame_dt = p.frame_dt;
    ds.settings = {{"m1", p.m1}, {"m2", p.m2}, {"l1", p.l1}, {"l2", p.l2}, {"g", p.g},
                   {"dt", p.dt}, {"frame_dt", p.frame_dt}, {"torque_max", p.torque_max}};
    ds.state_names = {"theta1", "theta2", "omega1", "omega2"};
    ds.measurements.assign(m_count, Matrix<float>(steps, ds.measurement_dim()));
    ds.controls.assign(m_count, Matrix<float>(steps - 1, 1));
    ds.states.assign(m_count, Matrix<float>(steps, 4));
    ds.params = Matrix<float>(trajectories, 0);
    for (Index m = 0; m < trajectories; ++m) {
      auto rng = derived_stream(seed, static_cast<std::uint64_t>(m));
      generate_pendulum(ds, m, steps, p, rng);
    }
  } else {
    const auto& p = cfg.rd;
    p.validate();
    if (!(cfg.beta_min <= cfg.beta_max)) throw ConfigError("beta_min must not exceed beta_max");
    ds.channels = 2;
    ds.height = ds.width = p.grid_n;
    ds.control_dim = 0;
    ds.param_dim = 1;
    ds.frame_dt = p.dt * static_cast<double>(p.save_every);
    ds.settings = {{"d", p.d},
                   {"dt", p.dt},
                   {"save_every", static_cast<double>(p.save_every)},
                   {"domain_half", p.domain_half},
                   {"beta_min", cfg.beta_min},
                   {"beta_max", cfg.beta_max},
                   {"positive_beta", p.positive_beta ? 1.0 : 0.0},
                   {"v0_equals_u0", p.v0_equals_u0 ? 1.0 : 0.0}};
    ds.measurements.assign(m_count, Matrix<float>(steps, ds.measurement_dim()));
    ds.controls.assign(m_count, Matrix<float>(steps - 1, 0));
    ds.params = Matrix<float>(trajectories, 1);
    for (Index m = 0; m < trajectories; ++m) {
      auto rng = derived_stream(seed, static_cast<std::uint64_t>(m));
      generate_rd(ds, m, steps, p, cfg.beta_min, cfg.beta_max, rng);
    }
  }
  return ds;
}

}  // namespace dklrom::sim
