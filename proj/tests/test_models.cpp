#include "dklrom/models.hpp"

#include "fd_check.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace dklrom;
using ad::Tape;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.channels = 1;
  c.height = 8;
  c.width = 8;
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
Matrix<Scalar> uniform(Index r, Index c, std::mt19937_64& rng, double lo = 0, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  Matrix<Scalar> m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(d(rng));
  return m;
}

}  // namespace

TEST_CASE("default conv stacks and fingerprints") {
  CHECK(default_conv_channels(84, 84) == std::vector<Index>{32, 64, 128, 256});
  CHECK(default_conv_channels(128, 128) == std::vector<Index>{32, 64, 128, 256, 256});
  CHECK(default_conv_channels(8, 8).size() == 2);
  auto a = tiny_config(), b = tiny_config();
  b.seed = 99;
  CHECK(a.fingerprint() == b.fingerprint());
  b.latent_dim = 3;
  CHECK(a.fingerprint() != b.fingerprint());
  auto bad = tiny_config();
  bad.latent_dim = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = tiny_config();
  bad.conv_channels = {2, 2, 2, 2};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("decoder output matches the measurement shape of both systems") {
  for (auto [c, s] : {std::pair<Index, Index>{3, 84}, {2, 128}}) {
    ModelConfig cfg;
    cfg.channels = c;
    cfg.height = s;
    cfg.width = s;
    cfg.lstm_hidden = 8;
    cfg.inducing_points = 8;
    ModelBundle<float> bundle(cfg);
    std::mt19937_64 rng(1);
    const Matrix<float> z = standard_normal<float>(2, cfg.latent_dim, rng);
    const Matrix<float> x = decode(bundle.decoder, z);
    CHECK(x.rows() == 2);
    CHECK(x.cols() == c * s * s);
    const auto beliefs = encode(bundle.encoder, x);
    CHECK(beliefs.mean.cols() == 20);
  }
}

TEST_CASE("encode") {
  ModelBundle<double> bundle(tiny_config());
  std::mt19937_64 rng(2);
  const Matrix<double> x = uniform<double>(3, 64, rng);

  SUBCASE("identical inputs give bitwise identical beliefs") {
    Matrix<double> xx(2, 64);
    xx.row(0) = x.row(0);
    xx.row(1) = x.row(0);
    const auto b = encode(bundle.encoder, xx);
    CHECK(b.mean.row(0) == b.mean.row(1));
    CHECK(b.variance.row(0) == b.variance.row(1));
    const auto again = encode(bundle.encoder, xx);
    CHECK(again.mean == b.mean);
  }

  SUBCASE("untrained prior-matching heads give the prior belief") {
    const auto b = encode(bundle.encoder, x);
    const double noise = bundle.encoder.noise_variance();
    CHECK(noise == doctest::Approx(1e-2));
    CHECK(b.mean.cwiseAbs().maxCoeff() < 1e-8);
    CHECK((b.variance.array() - (1.0 + noise)).abs().maxCoeff() < 1e-8);
  }

  SUBCASE("variances never fall below the noise floor") {
    auto& heads = bundle.encoder.heads;
    heads.var_means.value = uniform<double>(4, 2, rng, -1, 1);
    heads.chol_raw.value.setConstant(-8.0);
    for (int trial = 0; trial < 5; ++trial) {
      const auto b = encode(bundle.encoder, uniform<double>(4, 64, rng));
      CHECK((b.variance.array() >= bundle.encoder.noise_variance()).all());
    }
  }

  SUBCASE("wrong measurement size") {
    CHECK_THROWS_AS(encode(bundle.encoder, uniform<double>(1, 63, rng)), ValidationError);
  }
}

TEST_CASE("sample_latent") {
  std::mt19937_64 rng(3);
  LatentBelief<double> point{Vector<double>::Constant(3, 0.4), Vector<double>::Zero(3)};
  CHECK(sample_latent(point, rng) == point.mean);

  LatentBelief<double> unit{Vector<double>::Zero(2), Vector<double>::Ones(2)};
  const int n = 100000;
  Vector<double> sum = Vector<double>::Zero(2), sq = Vector<double>::Zero(2);
  for (int i = 0; i < n; ++i) {
    const auto z = sample_latent(unit, rng);
    sum += z;
    sq += z.cwiseProduct(z);
  }
  const Vector<double> mean = sum / n;
  const Vector<double> var = sq / n - mean.cwiseProduct(mean);
  CHECK(mean.cwiseAbs().maxCoeff() < 0.02);
  CHECK((var.array() - 1.0).abs().maxCoeff() < 0.02);

  std::mt19937_64 a(42), b(42);
  CHECK(sample_latent(unit, a) == sample_latent(unit, b));
}

TEST_CASE("decode outputs are deterministic and lie in [0,1]") {
  ModelBundle<double> bundle(tiny_config());
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix<double> z = 3.0 * standard_normal<double>(1, 2, rng);
    const Matrix<double> x = decode(bundle.decoder, z);
    CHECK(x.minCoeff() >= 0.0);
    CHECK(x.maxCoeff() <= 1.0);
    if (trial == 0) CHECK(decode(bundle.decoder, z) == x);
  }
}

TEST_CASE("predict_next") {
  ModelBundle<double> bundle(tiny_config());
  auto& dyn = bundle.dynamics;
  std::mt19937_64 rng(5);
  dyn.heads.var_means.value = uniform<double>(4, 2, rng, -1, 1);
  const std::vector<Matrix<double>> z{standard_normal<double>(3, 2, rng), standard_normal<double>(3, 2, rng)};
  const std::vector<Matrix<double>> u{uniform<double>(3, 1, rng, -2, 2), uniform<double>(3, 1, rng, -2, 2)};
  const Matrix<double> p = uniform<double>(3, 1, rng);

  const auto b = predict_next(dyn, z, u, p);
  CHECK(b.size() == 3);
  CHECK(predict_next(dyn, z, u, p).mean == b.mean);
  CHECK((b.variance.array() >= dyn.noise_variance()).all());

  SUBCASE("batch permutation") {
    const std::vector<Index> perm{2, 0, 1};
    auto permute = [&](const Matrix<double>& m) {
      Matrix<double> out(m.rows(), m.cols());
      for (Index i = 0; i < 3; ++i) out.row(i) = m.row(perm[static_cast<std::size_t>(i)]);
      return out;
    };
    const auto bp = predict_next(dyn, {permute(z[0]), permute(z[1])}, {permute(u[0]), permute(u[1])}, permute(p));
    CHECK((bp.mean - permute(b.mean)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((bp.variance - permute(b.variance)).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("short histories are left-padded with the first entry") {
    const auto short_b = predict_next(dyn, {z[1]}, {u[1]}, p);
    const auto padded = predict_next(dyn, {z[1], z[1]}, {u[1], u[1]}, p);
    CHECK(short_b.mean == padded.mean);
  }

  SUBCASE("shape errors") {
    CHECK_THROWS_AS(predict_next(dyn, {z[0], z[1], z[0]}, {u[0], u[1], u[0]}, p), ValidationError);
    CHECK_THROWS_AS(predict_next(dyn, z, {u[0]}, p), ValidationError);
    CHECK_THROWS_AS(predict_next(dyn, z, {z[0], z[1]}, p), ValidationError);
    CHECK_THROWS_AS(predict_next(dyn, z, u, Matrix<double>(3, 2)), ValidationError);
    CHECK_THROWS_AS(predict_next<double>(dyn, {}, {}, p), ValidationError);
  }
}

TEST_CASE("rollout") {
  ModelBundle<double> bundle(tiny_config());
  std::mt19937_64 rng(6);
  bundle.dynamics.heads.var_means.value = uniform<double>(4, 2, rng, -1, 1);
  const Matrix<double> x0 = uniform<double>(2, 64, rng);
  const Matrix<double> hist_u = uniform<double>(1, 1, rng, -1, 1);
  const Matrix<double> controls = uniform<double>(5, 1, rng, -1, 1);
  Vector<double> p(1);
  p << 0.3;

  SUBCASE("same seed, same paths") {
    const auto a = rollout(bundle, x0, hist_u, controls, p, 2, 17);
    const auto b = rollout(bundle, x0, hist_u, controls, p, 2, 17);
    REQUIRE(a.decoded.size() == 2);
    CHECK(a.decoded[0].rows() == 5);
    CHECK(a.decoded[0] == b.decoded[0]);
    CHECK(a.decoded[1] == b.decoded[1]);
    CHECK(a.beliefs[1][4].mean == b.beliefs[1][4].mean);
  }

  SUBCASE("one step equals predict_next then decode") {
    const auto r = rollout<double>(bundle, x0, hist_u, controls.topRows(1), p, 1, 23);
    auto stream = derived_stream(23, 0);
    const auto init = encode(bundle.encoder, x0);
    const Matrix<double> z0 = sample_latent(init.item(0), stream).transpose();
    const Matrix<double> z1 = sample_latent(init.item(1), stream).transpose();
    const auto next = predict_next(bundle.dynamics, {z0, z1}, {hist_u, controls.topRows(1)},
                                   Matrix<double>(p.transpose()));
    const Matrix<double> z2 = sample_latent(next.item(0), stream).transpose();
    CHECK(r.beliefs[0][0].mean == next.item(0).mean);
    CHECK(r.decoded[0] == decode(bundle.decoder, z2));
  }

  SUBCASE("zero latent variance makes all paths coincide") {
    bundle.encoder.log_noise.value.setConstant(-200.0);
    bundle.dynamics.log_noise.value.setConstant(-200.0);
    bundle.encoder.heads.log_signal.value.setConstant(-200.0);
    bundle.dynamics.heads.log_signal.value.setConstant(-200.0);
    const auto r = rollout(bundle, x0, hist_u, controls, p, 4, 5);
    for (std::size_t s = 1; s < 4; ++s) CHECK((r.decoded[s] - r.decoded[0]).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("long rollouts stay finite") {
    const Matrix<double> many = uniform<double>(100, 1, rng, -2, 2);
    const auto r = rollout(bundle, x0, hist_u, many, p, 2, 3);
    for (const auto& path : r.beliefs)
      for (const auto& b : path) CHECK(b.mean.allFinite());
    CHECK(r.decoded[1].allFinite());
  }

  SUBCASE("argument errors") {
    CHECK_THROWS_AS(rollout(bundle, x0, hist_u, controls, p, 0, 1), ValidationError);
    CHECK_THROWS_AS(rollout(bundle, x0, Matrix<double>(0, 1), controls, p, 1, 1), ValidationError);
    CHECK_THROWS_AS(rollout(bundle, x0, hist_u, controls, Vector<double>(2), 1, 1), ValidationError);
  }
}

TEST_CASE("model gradients match finite differences") {
  ModelBundle<double> bundle(tiny_config());
  std::mt19937_64 rng(7);
  bundle.encoder.heads.var_means.value = uniform<double>(4, 2, rng, -1, 1);
  bundle.dynamics.heads.var_means.value = uniform<double>(4, 2, rng, -1, 1);
  // Spread the inducing points over the range the random features occupy.
  bundle.encoder.heads.locations.value *= 0.5;
  bundle.dynamics.heads.locations.value *= 0.3;
  const Matrix<double> x = uniform<double>(2, 64, rng);
  const Matrix<double> z = standard_normal<double>(2, 2, rng);
  const std::vector<Matrix<double>> zh{standard_normal<double>(2, 2, rng), standard_normal<double>(2, 2, rng)};
  const std::vector<Matrix<double>> uh{uniform<double>(2, 1, rng), uniform<double>(2, 1, rng)};
  const Matrix<double> p = uniform<double>(2, 1, rng);
  const Matrix<double> w_enc = standard_normal<double>(2, 2, rng);
  const Matrix<double> w_dec = uniform<double>(2, 64, rng, -1, 1);
  const Matrix<double> w_dyn = standard_normal<double>(2, 2, rng);

  auto loss = [&](Tape<double>& t) {
    const auto e = bundle.encoder.forward(t, t.constant(x));
    auto total = ad::add(ad::sum(ad::mul_const(e.mean, w_enc)), ad::sum(ad::log(e.variance)));
    total = ad::add(total, ad::sum(ad::mul_const(bundle.decoder.forward(t, t.constant(z)), w_dec)));
    std::vector<ad::Var<double>> zv{t.constant(zh[0]), t.constant(zh[1])};
    std::vector<ad::Var<double>> uv{t.constant(uh[0]), t.constant(uh[1])};
    const auto d = bundle.dynamics.forward(t, zv, uv, t.constant(p));
    total = ad::add(total, ad::sum(ad::mul_const(d.mean, w_dyn)));
    return ad::add(total, ad::sum(ad::sqrt(d.variance)));
  };
  const auto r = fd::check(bundle.parameters(), loss, 1e-6, 1e-7, 12);
  INFO(r.where);
  CHECK(r.worst < 1e-3);
}
