// Acceptance suite: one PASS/FAIL line per criterion.
//
//   dklrom_acceptance [--work DIR] [N ...]
//
// With no numbers every criterion runs. Criteria 5 to 7 share one desk-scale
// training run; its datasets, checkpoints and metrics land in the work
// directory (default: <tmp>/dklrom_acceptance).

#include "dklrom/checkpoint.hpp"
#include "dklrom/config.hpp"
#include "dklrom/data.hpp"
#include "dklrom/evaluation.hpp"
#include "dklrom/gp_core.hpp"
#include "dklrom/losses.hpp"
#include "dklrom/models.hpp"
#include "dklrom/simulators.hpp"
#include "dklrom/training.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace dklrom;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

fs::path g_work;

// ---------------------------------------------------------------------------
// 1. exact GP against a dense-matrix oracle

double se(double a, double b, double s2, double l) { return s2 * std::exp(-(a - b) * (a - b) / (2 * l * l)); }

Eigen::MatrixXd dense_k(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double s2, double l) {
  Eigen::MatrixXd k(a.size(), b.size());
  for (Index i = 0; i < a.size(); ++i)
    for (Index j = 0; j < b.size(); ++j) k(i, j) = se(a(i), b(j), s2, l);
  return k;
}

Outcome gp_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> s2d(0.3, 2.0), ld(0.3, 1.5), nd(1e-3, 0.3), md(-1.0, 1.0);
  double worst_mean = 0, worst_cov = 0, worst_lml = 0;
  for (int problem = 0; problem < 20; ++problem) {
    const double s2 = s2d(rng), l = ld(rng), noise = nd(rng), mu = md(rng);
    Eigen::VectorXd x(5), y(5), xs(7);
    for (Index i = 0; i < 5; ++i) x(i) = 2.0 * n01(rng);
    for (Index i = 0; i < 5; ++i) y(i) = n01(rng);
    for (Index i = 0; i < 7; ++i) xs(i) = 2.0 * n01(rng);

    const auto kp = gp::KernelParams<double>::make(s2, l, mu);
    const auto np = gp::NoiseParam<double>::make(noise);
    const Matrix<double> xm = x, xsm = xs;
    const auto post = gp::exact_gp_posterior(xm, Vector<double>(y), xsm, kp, np);
    const double lml = gp::log_marginal_likelihood(xm, Vector<double>(y), kp, np);

    const Eigen::MatrixXd ky = dense_k(x, x, s2, l) + noise * Eigen::MatrixXd::Identity(5, 5);
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(ky);
    const Eigen::MatrixXd kinv = lu.inverse();
    const Eigen::MatrixXd ks = dense_k(x, xs, s2, l);
    const Eigen::VectorXd r = y.array() - mu;
    const Eigen::VectorXd mean = (ks.transpose() * kinv * r).array() + mu;
    const Eigen::MatrixXd cov = dense_k(xs, xs, s2, l) - ks.transpose() * kinv * ks;
    const double oracle_lml =
        -0.5 * r.dot(kinv * r) - 0.5 * std::log(lu.determinant()) - 2.5 * std::log(2 * std::numbers::pi);

    worst_mean = std::max(worst_mean, (Eigen::VectorXd(post.mean) - mean).cwiseAbs().maxCoeff());
    worst_cov = std::max(worst_cov, (Eigen::MatrixXd(post.covariance) - cov).cwiseAbs().maxCoeff());
    worst_lml = std::max(worst_lml, std::abs(lml - oracle_lml));
  }
  const double secs = seconds_since(t0);
  const double worst = std::max({worst_mean, worst_cov, worst_lml});
  return {worst < 1e-8 && secs < 5.0, "max |mean err| " + fmt(worst_mean) + ", |cov err| " + fmt(worst_cov) +
                                          ", |lml err| " + fmt(worst_lml) + " (tol 1e-8, limit 5 s)"};
}

// ---------------------------------------------------------------------------
// 2. variational GP and KL identities

Outcome variational() {
  std::mt19937_64 rng(202);
  std::normal_distribution<double> n01(0.0, 1.0);
  double worst_prior = 0, worst_kl = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const Index m = 6, f = 3;
    Matrix<double> z(m, f), xs(9, f);
    for (Index i = 0; i < z.size(); ++i) z.data()[i] = n01(rng);
    for (Index i = 0; i < xs.size(); ++i) xs.data()[i] = n01(rng);
    const auto kp = gp::KernelParams<double>::make(0.5 + trial * 0.2, 0.7 + trial * 0.1);
    const auto state = gp::InducingState<double>::prior_matching(z, kp);
    const auto pred = gp::variational_gp_predict(xs, state, kp);
    worst_prior = std::max(worst_prior, pred.mean.cwiseAbs().maxCoeff());
    worst_prior = std::max(worst_prior, (pred.variance.array() - kp.signal_variance).abs().maxCoeff());
    worst_kl = std::max(worst_kl, std::abs(gp::inducing_kl(state, kp)));
  }

  // Monte-Carlo estimate of E_p[log p(x) - log q(x)].
  std::uniform_real_distribution<double> var(0.3, 2.0);
  const Index d = 20;
  const int samples = 1000000;
  int within = 0;
  double worst_z = 0;
  for (int pair = 0; pair < 10; ++pair) {
    gp::GaussianBelief<double> p{Vector<double>(d), Vector<double>(d), {}};
    gp::GaussianBelief<double> q{Vector<double>(d), Vector<double>(d), {}};
    for (Index i = 0; i < d; ++i) {
      p.mean(i) = n01(rng);
      q.mean(i) = n01(rng);
      p.variance(i) = var(rng);
      q.variance(i) = var(rng);
    }
    const double exact = gp::diag_gaussian_kl(p, q);
    double sum = 0, sum_sq = 0;
    for (int s = 0; s < samples; ++s) {
      double lr = 0;
      for (Index i = 0; i < d; ++i) {
        const double eps = n01(rng);
        const double x = p.mean(i) + std::sqrt(p.variance(i)) * eps;
        const double zq = (x - q.mean(i)) / std::sqrt(q.variance(i));
        lr += 0.5 * (std::log(q.variance(i)) - std::log(p.variance(i))) - 0.5 * eps * eps + 0.5 * zq * zq;
      }
      sum += lr;
      sum_sq += lr * lr;
    }
    const double mean = sum / samples;
    const double se_mc = std::sqrt((sum_sq / samples - mean * mean) / samples);
    const double z_score = std::abs(mean - exact) / se_mc;
    worst_z = std::max(worst_z, z_score);
    if (z_score < 3.0) ++within;
  }
  const bool pass = worst_prior < 1e-8 && worst_kl < 1e-10 && within == 10;
  return {pass, "prior err " + fmt(worst_prior) + " (tol 1e-8), prior KL " + fmt(worst_kl) +
                    " (tol 1e-10), MC within 3 SE " + std::to_string(within) + "/10 (worst " + fmt(worst_z) +
                    " SE)"};
}

// ---------------------------------------------------------------------------
// 3. loss gradients against central differences

ModelConfig tiny_config() {
  ModelConfig c;
  c.channels = 1;
  c.height = c.width = 8;
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
WindowBatch<Scalar> random_batch(const ModelConfig& cfg, Index b, Index length, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0), ctrl(-2.0, 2.0), par(0.5, 1.5);
  auto fill = [&](Index r, Index c, auto& dist) {
    Matrix<Scalar> m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
    return m;
  };
  WindowBatch<Scalar> batch;
  for (Index l = 0; l < length; ++l) batch.frames.push_back(fill(b, cfg.measurement_dim(), unit));
  for (Index l = 0; l + 1 < length; ++l) batch.controls.push_back(fill(b, cfg.control_dim, ctrl));
  batch.params = fill(b, cfg.param_dim, par);
  for (Index i = 0; i < b; ++i) batch.keys.push_back(500 + static_cast<std::uint64_t>(i));
  return batch;
}

Outcome gradients() {
  const auto t0 = Clock::now();
  ModelBundle<double> m(tiny_config());
  std::mt19937_64 rng(303);
  std::normal_distribution<double> n01(0.0, 1.0);
  // Move the GP states off their prior so every gradient is non-trivial.
  for (auto* p : {&m.encoder.heads.var_means, &m.dynamics.heads.var_means})
    for (Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = 0.5 * n01(rng);
  const Index horizon = 2;
  const auto batch = random_batch<double>(m.config, 2, m.config.history + horizon, rng);
  const LossWeights w{1.0, 0.1, horizon};
  const auto noise = draw_loss_noise(batch, m.config.history, horizon, m.config.latent_dim, 9);

  auto params = m.parameters();
  for (auto* p : params) p->zero_grad();
  {
    ad::Tape<double> tape;
    tape.backward(loss_terms(tape, m, batch, w, noise).total);
  }

  const double h = 1e-6, atol = 1e-6;
  double worst_nn = 0, worst_gp = 0;
  std::string where;
  Index checked = 0;
  std::mt19937 pick(5);
  for (auto* p : params) {
    std::vector<Index> idx(static_cast<std::size_t>(p->value.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Index>(i);
    std::shuffle(idx.begin(), idx.end(), pick);
    if (idx.size() > 12) idx.resize(12);
    for (Index k : idx) {
      double& v = p->value.data()[k];
      const double saved = v;
      v = saved + h;
      const double up = total_loss(m, batch, w, noise).total;
      v = saved - h;
      const double down = total_loss(m, batch, w, noise).total;
      v = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p->grad.data()[k];
      const double err = std::abs(analytic - numeric) / std::max(std::abs(numeric), atol);
      double& worst = p->group == ad::ParamGroup::kGaussianProcess ? worst_gp : worst_nn;
      if (err > worst) {
        worst = err;
        where = p->name + "[" + std::to_string(k) + "]";
      }
      ++checked;
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_nn < 1e-3 && worst_gp < 1e-3 && secs < 60.0;
  return {pass, std::to_string(params.size()) + " tensors, " + std::to_string(checked) + " entries; worst rel err nn " +
                    fmt(worst_nn) + ", gp " + fmt(worst_gp) + " at " + where + " (tol 1e-3, limit 60 s)"};
}

// ---------------------------------------------------------------------------
// 4. simulator physics

Eigen::MatrixXd roll(const Eigen::MatrixXd& f, Index dr, Index dc) {
  Eigen::MatrixXd out(f.rows(), f.cols());
  for (Index i = 0; i < f.rows(); ++i)
    for (Index j = 0; j < f.cols(); ++j) out((i + dr) % f.rows(), (j + dc) % f.cols()) = f(i, j);
  return out;
}

Outcome physics() {
  const auto t0 = Clock::now();
  sim::PendulumParams pp;
  pp.dt = 1e-3;
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi), rate(-2.0, 2.0);
  double drift = 0;
  for (int ic = 0; ic < 10; ++ic) {
    sim::PendulumState s{angle(rng), angle(rng), rate(rng), rate(rng)};
    const double e0 = sim::pendulum_energy(s, pp);
    for (int i = 0; i < 10000; ++i) {
      s = sim::pendulum_step(s, 0.0, pp);
      drift = std::max(drift, std::abs(sim::pendulum_energy(s, pp) - e0) / std::abs(e0));
    }
  }

  // Uniform fields obey dA/dt = A (1 - A^2): A^2(t) = 1 / (1 + (1/A0^2 - 1) e^{-2t}).
  sim::RDParams rp;
  rp.grid_n = 8;
  const Index n = rp.grid_n;
  sim::RDState s{Eigen::MatrixXd::Constant(n, n, 0.5), Eigen::MatrixXd::Zero(n, n)};
  const auto steps = std::llround(1.0 / rp.dt);
  for (long long i = 0; i < steps; ++i) s = sim::rd_step(s, rp);
  const double a2 = s.u(0, 0) * s.u(0, 0) + s.v(0, 0) * s.v(0, 0);
  const double amp_err = std::abs(a2 - 1.0 / (1.0 + 3.0 * std::exp(-2.0)));

  sim::RDParams sp;
  sp.grid_n = 32;
  std::uniform_real_distribution<double> field(-1.0, 1.0);
  sim::RDState r{Eigen::MatrixXd::NullaryExpr(32, 32, [&] { return field(rng); }),
                 Eigen::MatrixXd::NullaryExpr(32, 32, [&] { return field(rng); })};
  double shift_err = 0;
  for (auto [dr, dc] : {std::pair<Index, Index>{3, 5}, {0, 1}, {17, 0}}) {
    const auto a = sim::rd_step(sim::RDState{roll(r.u, dr, dc), roll(r.v, dr, dc)}, sp);
    const auto b = sim::rd_step(r, sp);
    shift_err = std::max({shift_err, (a.u - roll(b.u, dr, dc)).cwiseAbs().maxCoeff(),
                          (a.v - roll(b.v, dr, dc)).cwiseAbs().maxCoeff()});
  }
  const double secs = seconds_since(t0);
  const bool pass = drift < 1e-4 && amp_err < 1e-4 && shift_err < 1e-10 && secs < 30.0;
  return {pass, "energy drift " + fmt(drift) + " (tol 1e-4), amplitude err " + fmt(amp_err) +
                    " (tol 1e-4), shift err " + fmt(shift_err) + " (tol 1e-10), " + fmt(secs) + " s (limit 30 s)"};
}

// ---------------------------------------------------------------------------
// 5-7. desk-scale training runs

constexpr double kDeskNoise = 0.0625;

struct DeskRun {
  TrajectoryDataset train_ds, test_ds;
  ModelBundle<float> h4, h1;
  double data_seconds = 0, h4_seconds = 0, h1_seconds = 0, eval_seconds = 0;
  std::vector<MetricRow> rows;

  double psnr(Index h, Target t) const {
    for (const auto& r : rows)
      if (r.H == h && r.target == t && r.noise == kDeskNoise) return r.psnr_db;
    throw std::runtime_error("missing metric row");
  }
};

TrainConfig desk_config(Index history) {
  auto cfg = preset("desk-pendulum").train;
  cfg.model.history = history;
  cfg.noise_sigma2 = kDeskNoise;
  cfg.eval_interval = 0;
  cfg.deterministic = true;
  cfg.seed = 21;
  return cfg;
}

ModelBundle<float> train_logged(const TrainConfig& cfg, const TrajectoryDataset& ds, const std::string& tag) {
  const auto result = train(cfg, ds, nullptr, [&](const TrainStep& s) {
    if (s.step % 500 == 0)
      std::cerr << "  [" << tag << "] step " << s.step << " loss " << s.loss.total << " (" << fmt(s.seconds) << " s)\n";
  });
  save_checkpoint(result.bundle, g_work / ("checkpoint_" + tag), cfg);
  return result.bundle;
}

DeskRun& desk() {
  static std::optional<DeskRun> run;
  if (run) return *run;
  run.emplace();
  auto& r = *run;
  fs::create_directories(g_work);

  auto t0 = Clock::now();
  const auto gen = preset("desk-pendulum");
  r.train_ds = sim::generate_dataset(sim::System::kPendulum, 16, 60, gen.generation, 11);
  r.test_ds = sim::generate_dataset(sim::System::kPendulum, 4, 60, gen.generation, 12);
  save_dataset(r.train_ds, g_work / "train_data");
  save_dataset(r.test_ds, g_work / "test_data");
  r.data_seconds = seconds_since(t0);

  t0 = Clock::now();
  r.h4 = train_logged(desk_config(4), r.train_ds, "h4");
  r.h4_seconds = seconds_since(t0);
  t0 = Clock::now();
  r.h1 = train_logged(desk_config(1), r.train_ds, "h1");
  r.h1_seconds = seconds_since(t0);

  t0 = Clock::now();
  r.rows = evaluate_reconstruction({{&r.h4, 2}, {&r.h1, 2}}, r.test_ds, {0.0, kDeskNoise, 0.25});
  write_metrics_csv(g_work / "metrics.csv", r.rows);
  r.eval_seconds = seconds_since(t0);
  return r;
}

Outcome denoising() {
  auto& r = desk();
  const double input = r.psnr(4, Target::kInput), same = r.psnr(4, Target::kSame);
  const double secs = r.data_seconds + r.h4_seconds + r.eval_seconds;
  const bool pass = same >= input + 2.0 && secs < 20 * 60.0;
  return {pass, "H=4 x_t PSNR " + fmt(same, 4) + " dB vs noisy input " + fmt(input, 4) + " dB (need +2 dB), " +
                    fmt(secs) + " s (limit 1200 s)"};
}

Outcome history_trend() {
  auto& r = desk();
  const double next4 = r.psnr(4, Target::kNext), next1 = r.psnr(1, Target::kNext);
  const double gap4 = r.psnr(4, Target::kSame) - next4, gap1 = r.psnr(1, Target::kSame) - next1;
  const double secs = r.data_seconds + r.h4_seconds + r.h1_seconds + r.eval_seconds;
  const bool pass = next4 >= next1 - 0.5 && gap1 >= gap4 && secs < 40 * 60.0;
  return {pass, "next-step PSNR H=4 " + fmt(next4, 4) + " vs H=1 " + fmt(next1, 4) + " dB; same-to-next gap H=1 " +
                    fmt(gap1, 4) + " vs H=4 " + fmt(gap4, 4) + " dB; " + fmt(secs) + " s (limit 2400 s)"};
}

Outcome uncertainty_trend() {
  auto& r = desk();
  const std::vector<double> noises{0.0, kDeskNoise, 0.25};
  std::vector<double> mean_std(noises.size(), 0.0);
  const Index trajectories = r.test_ds.trajectories();
  const Index steps = std::min<Index>(20, r.test_ds.steps() - r.h4.config.history);
  for (Index t = 0; t < trajectories; ++t) {
    const auto maps = uncertainty_heatmaps(r.h4, r.test_ds, t, noises, 30, steps, 7);
    for (std::size_t k = 0; k < noises.size(); ++k) mean_std[k] += maps.mean_std[k] / static_cast<double>(trajectories);
  }
  bool monotone = true;
  for (std::size_t k = 1; k < mean_std.size(); ++k) monotone = monotone && mean_std[k] >= mean_std[k - 1];
  std::string detail = "mean rollout std at sigma2 0/0.0625/0.25:";
  for (double m : mean_std) detail += " " + fmt(m, 5);
  return {monotone, detail + " (" + std::to_string(trajectories) + " trajectories, 30 rollouts, " +
                        std::to_string(steps) + " steps)"};
}

// ---------------------------------------------------------------------------
// 8. loss identities and reproducibility

bool bitwise_equal(const ModelBundle<float>& a, const ModelBundle<float>& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const auto& x = pa[i]->value;
    const auto& y = pb[i]->value;
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    for (Index k = 0; k < x.size(); ++k)
      if (std::bit_cast<std::uint32_t>(x.data()[k]) != std::bit_cast<std::uint32_t>(y.data()[k])) return false;
  }
  return true;
}

TrainConfig tiny_train(Index steps) {
  auto p = preset("tiny");
  p.train.max_steps = steps;
  p.train.deterministic = true;
  p.train.seed = 3;
  return p.train;
}

TrajectoryDataset tiny_data() {
  const auto p = preset("tiny");
  return sim::generate_dataset(sim::System::kPendulum, 4, 20, p.generation, 5);
}

Outcome loss_invariants() {
  std::mt19937_64 rng(808);
  std::uniform_real_distribution<double> wd(0.0, 2.0);
  double worst_recombine = 0, min_reg = INFINITY, min_vi = INFINITY;
  int evaluations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto cfg = tiny_config();
    cfg.seed = 2000 + static_cast<std::uint64_t>(trial);
    ModelBundle<double> m(cfg);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (Index i = 0; i < m.encoder.heads.var_means.value.size(); ++i)
      m.encoder.heads.var_means.value.data()[i] = n01(rng);
    for (Index i = 0; i < m.dynamics.heads.chol_raw.value.size(); ++i)
      m.dynamics.heads.chol_raw.value.data()[i] += 0.3 * n01(rng);
    const LossWeights w{wd(rng), wd(rng), 2};
    const auto batch = random_batch<double>(cfg, 3, cfg.history + 2, rng);
    const auto r = total_loss(m, batch, w, rng);
    const double recombined = r.recon + w.w_reg * r.reg + r.recon_next + w.w_var * r.vi;
    worst_recombine = std::max(worst_recombine, std::abs(recombined - r.total));
    min_reg = std::min(min_reg, r.reg);
    min_vi = std::min(min_vi, r.vi);
    ++evaluations;
  }

  const auto ds = tiny_data();
  const auto a = train(tiny_train(50), ds);
  const auto b = train(tiny_train(50), ds);
  const bool same = bitwise_equal(a.bundle, b.bundle) &&
                    std::bit_cast<std::uint64_t>(a.log.steps.back().loss.total) ==
                        std::bit_cast<std::uint64_t>(b.log.steps.back().loss.total);

  const bool pass = worst_recombine < 1e-10 && min_reg >= 0.0 && min_vi >= 0.0 && same;
  return {pass, "recombination err " + fmt(worst_recombine) + " (tol 1e-10), min reg " + fmt(min_reg) + ", min vi " +
                    fmt(min_vi) + " over " + std::to_string(evaluations) + " evaluations, 50-step train " +
                    (same ? "bit-identical" : "DIFFERS")};
}

// ---------------------------------------------------------------------------
// 9. persistence round trips

bool same_dataset(const TrajectoryDataset& a, const TrajectoryDataset& b) {
  auto eq = [](const auto& x, const auto& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].rows() != y[i].rows() || x[i].cols() != y[i].cols()) return false;
      if (std::memcmp(x[i].data(), y[i].data(), sizeof(float) * static_cast<std::size_t>(x[i].size())) != 0)
        return false;
    }
    return true;
  };
  return a.system == b.system && a.ids == b.ids && a.seed == b.seed && a.settings == b.settings &&
         eq(a.measurements, b.measurements) && eq(a.controls, b.controls) &&
         eq(a.states, b.states) && a.params.rows() == b.params.rows() && a.params.cols() == b.params.cols() &&
         std::memcmp(a.params.data(), b.params.data(), sizeof(float) * static_cast<std::size_t>(a.params.size())) == 0;
}

Outcome round_trips() {
  const fs::path dir = g_work / "round_trip";
  fs::remove_all(dir);
  fs::create_directories(dir);

  sim::GenerationConfig gen;
  gen.pendulum.image_size = 16;
  gen.rd.grid_n = 16;
  const auto pend = sim::generate_dataset(sim::System::kPendulum, 3, 12, gen, 1);
  const auto rd = sim::generate_dataset(sim::System::kReactionDiffusion, 2, 4, gen, 2);
  save_dataset(pend, dir / "pend");
  save_dataset(rd, dir / "rd");
  const bool data_ok = same_dataset(pend, load_dataset(dir / "pend")) && same_dataset(rd, load_dataset(dir / "rd"));

  const auto cfg = tiny_train(20);
  const auto ds = tiny_data();
  const auto trained = train(cfg, ds).bundle;
  save_checkpoint(trained, dir / "ckpt", cfg);
  const auto loaded = load_checkpoint(dir / "ckpt", &trained.config);
  const bool ckpt_ok = bitwise_equal(trained, loaded.bundle);

  std::mt19937_64 data_rng(9);
  const auto batch = random_batch<float>(trained.config, 4, cfg.model.history + cfg.weights.horizon, data_rng);
  std::mt19937_64 ra(77), rb(77);
  const auto la = total_loss(trained, batch, cfg.weights, ra);
  const auto lb = total_loss(loaded.bundle, batch, cfg.weights, rb);
  const bool loss_ok = std::bit_cast<std::uint64_t>(la.total) == std::bit_cast<std::uint64_t>(lb.total);

  fs::remove_all(dir);
  return {data_ok && ckpt_ok && loss_ok, std::string("dataset ") + (data_ok ? "bitwise" : "DIFFERS") +
                                             ", checkpoint " + (ckpt_ok ? "bitwise" : "DIFFERS") + ", reloaded loss " +
                                             (loss_ok ? "identical" : "DIFFERS")};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  g_work = fs::temp_directory_path() / "dklrom_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      g_work = argv[++i];
    } else {
      try {
        selected.insert(std::stoi(a));
      } catch (const std::exception&) {
        std::cerr << "usage: dklrom_acceptance [--work DIR] [criterion ...]\n";
        return 2;
      }
    }
  }

  const std::vector<Criterion> criteria{
      {1, "gp oracle equivalence", gp_oracle},
      {2, "variational correctness", variational},
      {3, "loss gradients", gradients},
      {4, "physics fidelity", physics},
      {5, "denoising trend", denoising},
      {6, "history-length trend", history_trend},
      {7, "uncertainty grows with noise", uncertainty_trend},
      {8, "loss invariants", loss_invariants},
      {9, "round trips", round_trips},
  };

  int failed = 0, ran = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    ++ran;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("[%s] %d %s | %s | %.1f s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
