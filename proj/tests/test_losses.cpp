#include "dklrom/errors.hpp"
#include "dklrom/losses.hpp"

#include "tiny_model.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

using namespace dklrom;
using tiny::random_batch;

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

double kl_scalar(double m1, double v1, double m2, double v2) {
  return 0.5 * (std::log(v2 / v1) + (v1 + (m1 - m2) * (m1 - m2)) / v2 - 1.0);
}

struct Reference {
  double recon = 0, reg = 0, recon_next = 0;
  std::vector<double> step_kl;
};

// Unrolled re-implementation through the public inference functions.
Reference reference(const ModelBundle<double>& m, const WindowBatch<double>& batch, Index horizon,
                    const LossNoise<double>& noise) {
  const auto& cfg = m.config;
  const Index h = cfg.history, b = batch.size(), len = h + horizon;
  Reference r;
  std::vector<Matrix<double>> z(static_cast<std::size_t>(len));
  for (Index l = 0; l < len; ++l) {
    const auto k = static_cast<std::size_t>(l);
    const auto enc = encode(m.encoder, batch.frames[k]);
    z[k] = enc.mean + (enc.variance.array().sqrt() * noise.frame[k].array()).matrix();
    const Matrix<double> xr = decode(m.decoder, z[k]);
    for (Index i = 0; i < b; ++i) {
      double sq = 0;
      for (Index j = 0; j < xr.cols(); ++j) sq += std::pow(batch.frames[k](i, j) - xr(i, j), 2);
      r.recon += 0.5 * sq + static_cast<double>(xr.cols()) * kHalfLog2Pi;
    }
  }
  r.recon /= static_cast<double>(len * b);

  std::vector<Matrix<double>> hist(z.begin(), z.begin() + h);
  for (Index i = 1; i <= horizon; ++i) {
    std::vector<Matrix<double>> u_hist(batch.controls.begin() + (i - 1), batch.controls.begin() + (h + i - 1));
    const auto dyn = predict_next(m.dynamics, hist, u_hist, batch.params);
    const auto target = static_cast<std::size_t>(h + i - 1);
    const auto enc = encode(m.encoder, batch.frames[target]);
    double kl = 0;
    for (Index row = 0; row < b; ++row)
      for (Index d = 0; d < cfg.latent_dim; ++d)
        kl += kl_scalar(enc.mean(row, d), enc.variance(row, d), dyn.mean(row, d), dyn.variance(row, d));
    r.step_kl.push_back(kl / static_cast<double>(b));
    r.reg += kl / static_cast<double>(b * horizon);
    const Matrix<double> z_hat =
        dyn.mean + (dyn.variance.array().sqrt() * noise.step[static_cast<std::size_t>(i - 1)].array()).matrix();
    const Matrix<double> xn = decode(m.decoder, z_hat);
    r.recon_next += (batch.frames[target] - xn).squaredNorm() / static_cast<double>(b * horizon);
    hist.erase(hist.begin());
    hist.push_back(z_hat);
  }
  return r;
}

// Decoder output becomes sigmoid(bias) everywhere.
void make_decoder_constant(ModelBundle<double>& m, double bias) {
  auto& last = m.decoder.deconvs.back();
  last.weight.value.setZero();
  last.bias.value.setConstant(bias);
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

TEST_CASE("recon loss of a perfect reconstruction is the Gaussian constant") {
  ModelBundle<double> m(tiny::config());
  make_decoder_constant(m, 0.3);
  const Matrix<double> x = Matrix<double>::Constant(4, 64, sigmoid(0.3));
  std::mt19937_64 rng(1);
  CHECK(std::abs(recon_loss(m, x, rng) - 64 * kHalfLog2Pi) < 1e-12);
}

TEST_CASE("recon loss matches a scalar re-implementation") {
  ModelBundle<double> m(tiny::config());
  std::mt19937_64 data(4);
  for (int trial = 0; trial < 2; ++trial) {
    const auto x = tiny::uniform<double>(3, 64, data);
    std::mt19937_64 rng(10 + trial), copy(10 + trial);
    const double got = recon_loss(m, x, rng);
    const auto enc = encode(m.encoder, x);
    const Matrix<double> eps = standard_normal<double>(3, 2, copy);
    const Matrix<double> z = enc.mean + (enc.variance.array().sqrt() * eps.array()).matrix();
    const Matrix<double> xr = decode(m.decoder, z);
    double half_sq = 0;
    for (Index i = 0; i < 3; ++i)
      for (Index j = 0; j < 64; ++j) half_sq += 0.5 * (x(i, j) - xr(i, j)) * (x(i, j) - xr(i, j));
    CHECK(std::abs(got - (half_sq / 3 + 64 * kHalfLog2Pi)) < 1e-10);
    CHECK(got - 64 * kHalfLog2Pi >= 0.0);
  }
}

TEST_CASE("loss terms match the unrolled reference") {
  ModelBundle<double> m(tiny::config());
  std::mt19937_64 data(6);
  for (Index horizon : {1, 2, 3}) {
    const auto batch = random_batch<double>(m.config, 3, 2 + horizon, data);
    const LossWeights w{0.7, 0.2, horizon};
    const auto noise = draw_loss_noise(batch, 2, horizon, 2, 99);
    const auto got = total_loss(m, batch, w, noise);
    const auto ref = reference(m, batch, horizon, noise);
    CHECK(std::abs(got.recon - ref.recon) < 1e-10);
    CHECK(std::abs(got.reg - ref.reg) < 1e-10);
    CHECK(std::abs(got.recon_next - ref.recon_next) < 1e-10);
    CHECK(std::abs(got.vi - vi_loss(m)) < 1e-12);
    CHECK(std::abs(got.total - (got.recon + 0.7 * got.reg + got.recon_next + 0.2 * got.vi)) < 1e-10);
    if (horizon == 3) {
      const double mean3 = (ref.step_kl[0] + ref.step_kl[1] + ref.step_kl[2]) / 3.0;
      CHECK(std::abs(got.reg - mean3) < 1e-10);
    }
  }
}

TEST_CASE("single-step regulariser is one diagonal Gaussian KL") {
  ModelBundle<double> m(tiny::config());
  std::mt19937_64 data(8);
  const auto batch = random_batch<double>(m.config, 1, 3, data);
  const auto noise = draw_loss_noise(batch, 2, 1, 2, 5);
  const auto got = total_loss(m, batch, {1.0, 0.0, 1}, noise);
  std::vector<Matrix<double>> hist;
  for (Index l = 0; l < 2; ++l) {
    const auto e = encode(m.encoder, batch.frames[static_cast<std::size_t>(l)]);
    hist.push_back(e.mean + (e.variance.array().sqrt() * noise.frame[static_cast<std::size_t>(l)].array()).matrix());
  }
  const auto dyn = predict_next(m.dynamics, hist, {batch.controls[0], batch.controls[1]}, batch.params);
  const auto enc = encode(m.encoder, batch.frames[2]);
  const gp::GaussianBelief<double> p{enc.mean.row(0).transpose(), enc.variance.row(0).transpose(), {}};
  const gp::GaussianBelief<double> q{dyn.mean.row(0).transpose(), dyn.variance.row(0).transpose(), {}};
  CHECK(std::abs(got.reg - gp::diag_gaussian_kl(p, q)) < 1e-10);
}

TEST_CASE("regulariser vanishes when both beliefs coincide") {
  // Every head at its prior: both beliefs are N(0, signal + noise) for any input.
  ModelBundle<double> m(tiny::config());
  m.dynamics.log_noise.value = m.encoder.log_noise.value;
  std::mt19937_64 data(2);
  const auto batch = random_batch<double>(m.config, 4, 5, data);
  const auto r = total_loss(m, batch, {1.0, 1.0, 3}, data);
  CHECK(std::abs(r.reg) < 1e-12);
  CHECK(std::abs(r.vi) < 1e-9);
}

TEST_CASE("next-measurement loss vanishes for exact decoder outputs") {
  ModelBundle<double> m(tiny::config());
  make_decoder_constant(m, -0.4);
  std::mt19937_64 data(3);
  auto batch = random_batch<double>(m.config, 2, 5, data);
  for (auto& f : batch.frames) f.setConstant(sigmoid(-0.4));
  const auto r = total_loss(m, batch, {1.0, 1e-2, 3}, data);
  CHECK(r.recon_next == 0.0);
  CHECK(std::abs(r.recon - 64 * kHalfLog2Pi) < 1e-12);
}

TEST_CASE("vi loss") {
  ModelBundle<double> m(tiny::config());
  CHECK(std::abs(vi_loss(m)) < 1e-9);

  std::mt19937_64 rng(5);
  m.encoder.heads.var_means.value = tiny::uniform<double>(4, 2, rng, -1, 1);
  m.dynamics.heads.var_means.value = tiny::uniform<double>(4, 2, rng, -1, 1);
  m.dynamics.heads.chol_raw.value.diagonal().array() += 0.1;
  double sum = 0;
  for (auto* heads : {&m.encoder.heads, &m.dynamics.heads})
    for (Index h = 0; h < heads->heads(); ++h) sum += gp::inducing_kl(heads->inducing(h), heads->kernel(h));
  CHECK(std::abs(vi_loss(m) - sum) < 1e-9);

  // Shrinking one head's mean towards the prior mean.
  ModelBundle<double> path(tiny::config());
  const Vector<double> target = tiny::uniform<double>(4, 1, rng, -2, 2).col(0);
  double previous = INFINITY;
  for (double alpha : {1.0, 2.0 / 3.0, 1.0 / 3.0, 0.0}) {
    path.encoder.heads.var_means.value.col(0) = alpha * target;
    const double v = vi_loss(path);
    CHECK(v < previous);
    CHECK(v >= -1e-12);
    previous = v;
  }
}

TEST_CASE("total loss weights and component accessors") {
  ModelBundle<double> m(tiny::config());
  m.encoder.heads.var_means.value.setConstant(0.3);
  std::mt19937_64 data(12);
  const auto batch = random_batch<double>(m.config, 3, 5, data);
  const LossWeights w{0.5, 0.25, 3};
  std::mt19937_64 a(44);
  const auto r = total_loss(m, batch, w, a);
  std::mt19937_64 b1(44), b2(44), b3(44);
  CHECK(recon_loss(m, batch, w, b1) == r.recon);
  CHECK(reg_loss_multistep(m, batch, w, b2) == r.reg);
  CHECK(recon_next_multistep(m, batch, w, b3) == r.recon_next);
  CHECK(a() == b1());

  std::mt19937_64 c(44);
  const auto zero = total_loss(m, batch, {0.0, 0.0, 3}, c);
  CHECK(zero.total == zero.recon + zero.recon_next);
  CHECK(zero.recon == r.recon);

  // The taped total agrees with the breakdown.
  ad::Tape<double> tape;
  const auto noise = draw_loss_noise(batch, 2, 3, 2, 7);
  const auto terms = loss_terms(tape, m, batch, w, noise);
  const auto br = evaluate_terms(terms, w);
  CHECK(std::abs(terms.total.scalar() - br.total) < 1e-10);
}

TEST_CASE("total loss gradient matches finite differences") {
  ModelBundle<double> m(tiny::config());
  std::mt19937_64 data(21);
  m.encoder.heads.var_means.value = tiny::uniform<double>(4, 2, data, -1, 1);
  m.dynamics.heads.var_means.value = tiny::uniform<double>(4, 2, data, -1, 1);
  const auto batch = random_batch<double>(m.config, 2, 5, data);
  const LossWeights w{1.0, 0.1, 3};
  const auto noise = draw_loss_noise(batch, 2, 3, 2, 8);

  for (auto p : m.parameters()) p->zero_grad();
  {
    ad::Tape<double> tape;
    const auto terms = loss_terms(tape, m, batch, w, noise);
    tape.backward(terms.total);
  }
  for (auto* param : {&m.encoder.heads.log_length, &m.dynamics.heads.log_length, &m.encoder.log_noise,
                      &m.dynamics.log_noise}) {
    for (Index k = 0; k < param->value.size(); ++k) {
      const double analytic = param->grad.data()[k];
      const double h = 1e-6;
      const double saved = param->value.data()[k];
      param->value.data()[k] = saved + h;
      const double up = total_loss(m, batch, w, noise).total;
      param->value.data()[k] = saved - h;
      const double down = total_loss(m, batch, w, noise).total;
      param->value.data()[k] = saved;
      const double numeric = (up - down) / (2 * h);
      INFO(param->name << "[" << k << "] analytic " << analytic << " numeric " << numeric);
      CHECK(std::abs(analytic - numeric) <= 1e-3 * std::max(1.0, std::abs(numeric)));
    }
  }
}

TEST_CASE("KL terms are non-negative and everything is finite on random models") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    auto cfg = tiny::config();
    cfg.seed = 1000 + static_cast<std::uint64_t>(trial);
    ModelBundle<double> m(cfg);
    m.encoder.heads.var_means.value = tiny::uniform<double>(4, 2, rng, -2, 2);
    m.dynamics.heads.chol_raw.value += tiny::uniform<double>(8, 4, rng, -0.3, 0.3);
    const auto batch = random_batch<double>(cfg, 2, 4, rng);
    const auto r = total_loss(m, batch, {1.0, 1e-2, 2}, rng);
    CHECK(r.reg >= 0.0);
    CHECK(r.vi >= 0.0);
    CHECK(std::isfinite(r.total));
    CHECK(std::isfinite(r.recon));
    CHECK(std::isfinite(r.recon_next));
  }
}

TEST_CASE("loss is reproducible and invariant to batch order") {
  ModelBundle<double> m(tiny::config());
  std::mt19937_64 data(41);
  const auto batch = random_batch<double>(m.config, 5, 5, data);
  std::mt19937_64 a(3), b(3);
  const auto r1 = total_loss(m, batch, {}, a);
  const auto r2 = total_loss(m, batch, {}, b);
  CHECK(r1.total == r2.total);

  std::vector<Index> perm{3, 0, 4, 1, 2};
  auto shuffled = batch;
  for (std::size_t k = 0; k < perm.size(); ++k) {
    const auto src = perm[k];
    for (std::size_t l = 0; l < batch.frames.size(); ++l) shuffled.frames[l].row(static_cast<Index>(k)) = batch.frames[l].row(src);
    for (std::size_t l = 0; l < batch.controls.size(); ++l)
      shuffled.controls[l].row(static_cast<Index>(k)) = batch.controls[l].row(src);
    shuffled.params.row(static_cast<Index>(k)) = batch.params.row(src);
    shuffled.keys[k] = batch.keys[static_cast<std::size_t>(src)];
  }
  std::mt19937_64 c(3);
  const auto r3 = total_loss(m, shuffled, {}, c);
  CHECK(std::abs(r3.total - r1.total) < 1e-10 * std::abs(r1.total));
  CHECK(std::abs(r3.reg - r1.reg) < 1e-10);
}

TEST_CASE("float and double losses agree") {
  ModelBundle<double> md(tiny::config());
  ModelBundle<float> mf(tiny::config());
  std::mt19937_64 data(51);
  const auto bd = random_batch<double>(md.config, 2, 5, data);
  WindowBatch<float> bf;
  for (const auto& f : bd.frames) bf.frames.push_back(f.cast<float>());
  for (const auto& u : bd.controls) bf.controls.push_back(u.cast<float>());
  bf.params = bd.params.cast<float>();
  bf.keys = bd.keys;
  std::mt19937_64 a(1), b(1);
  const auto rd = total_loss(md, bd, {}, a);
  const auto rf = total_loss(mf, bf, {}, b);
  CHECK(std::abs(rd.total - rf.total) < 1e-3 * std::abs(rd.total));
}

TEST_CASE("loss input validation") {
  ModelBundle<double> m(tiny::config());
  std::mt19937_64 rng(1);
  const auto batch = random_batch<double>(m.config, 2, 4, rng);
  CHECK_THROWS_AS(total_loss(m, batch, {1.0, 1.0, 3}, rng), ConfigError);
  CHECK_THROWS_AS(total_loss(m, batch, {-1.0, 1.0, 2}, rng), ConfigError);
  CHECK_THROWS_AS(total_loss(m, batch, {1.0, 1.0, 0}, rng), ConfigError);
  auto bad = batch;
  bad.frames[1] = Matrix<double>::Zero(2, 10);
  CHECK_THROWS_AS(total_loss(m, bad, {1.0, 1.0, 2}, rng), ValidationError);
  const auto wrong_noise = draw_loss_noise(batch, 2, 1, 2, 0);
  CHECK_THROWS_AS(total_loss(m, batch, {1.0, 1.0, 2}, wrong_noise), ValidationError);
}

TEST_CASE("make_batch regroups windows by time") {
  TrajectoryDataset ds;
  ds.system = "test";
  ds.channels = 1;
  ds.height = 1;
  ds.width = 2;
  ds.control_dim = 1;
  ds.param_dim = 1;
  std::mt19937_64 rng(2);
  for (Index i = 0; i < 2; ++i) {
    ds.measurements.push_back(tiny::uniform<float>(6, 2, rng));
    ds.controls.push_back(tiny::uniform<float>(5, 1, rng));
    ds.ids.push_back(i);
  }
  ds.params = tiny::uniform<float>(2, 1, rng);
  std::vector<SequenceWindow> ws{make_window(ds, 1, 2, 4, 0.0, rng), make_window(ds, 0, 0, 4, 0.0, rng)};
  const auto b = make_batch<double>(ws);
  CHECK(b.size() == 2);
  CHECK(b.length() == 4);
  CHECK(b.controls.size() == 3);
  CHECK(b.frames[3](0, 1) == static_cast<double>(ds.measurements[1](5, 1)));
  CHECK(b.controls[2](1, 0) == static_cast<double>(ds.controls[0](2, 0)));
  CHECK(b.params(0, 0) == static_cast<double>(ds.params(1, 0)));
  CHECK(b.keys[0] == ws[0].key());
  ws[1].x_seq = Matrix<float>::Zero(3, 2);
  CHECK_THROWS_AS(make_batch<double>(ws), ValidationError);
}
