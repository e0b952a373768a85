#include "dklrom/errors.hpp"
#include "dklrom/evaluation.hpp"
#include "tiny_model.hpp"

#include <Eigen/QR>
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

using namespace dklrom;

namespace {

TrajectoryDataset synthetic(const ModelConfig& cfg, Index m, Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TrajectoryDataset ds;
  ds.system = "synthetic";
  ds.channels = cfg.channels;
  ds.height = cfg.height;
  ds.width = cfg.width;
  ds.control_dim = cfg.control_dim;
  ds.param_dim = cfg.param_dim;
  for (Index i = 0; i < m; ++i) {
    ds.measurements.push_back(tiny::uniform<float>(n, cfg.measurement_dim(), rng));
    ds.controls.push_back(tiny::uniform<float>(n - 1, cfg.control_dim, rng, -1, 1));
    ds.ids.push_back(i);
  }
  ds.params = tiny::uniform<float>(m, cfg.param_dim, rng, 0.5, 1.5);
  return ds;
}

void make_decoder_constant(ModelBundle<float>& b, float bias) {
  auto& last = b.decoder.deconvs.back();
  last.weight.value.setZero();
  last.bias.value.setConstant(bias);
}

// Latent beliefs collapse to their means.
void silence_latent_variance(ModelBundle<float>& b) {
  b.encoder.heads.log_signal.value.setConstant(-80.0f);
  b.dynamics.heads.log_signal.value.setConstant(-80.0f);
  b.encoder.log_noise.value.setConstant(-80.0f);
  b.dynamics.log_noise.value.setConstant(-80.0f);
}

double correlation(const Matrix<double>& a, const Matrix<double>& b) {
  const Eigen::ArrayXd x = Eigen::Map<const Eigen::ArrayXd>(a.data(), a.size());
  const Eigen::ArrayXd y = Eigen::Map<const Eigen::ArrayXd>(b.data(), b.size());
  const Eigen::ArrayXd dx = x - x.mean(), dy = y - y.mean();
  return (dx * dy).sum() / std::sqrt((dx * dx).sum() * (dy * dy).sum());
}

Matrix<double> distances(const Matrix<double>& y) {
  Matrix<double> d(y.rows(), y.rows());
  for (Index i = 0; i < y.rows(); ++i)
    for (Index j = 0; j < y.rows(); ++j) d(i, j) = (y.row(i) - y.row(j)).norm();
  return d;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("dklrom_eval_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("psnr hand values") {
  Matrix<double> clean = Matrix<double>::Ones(2, 2);
  Matrix<double> hat = Matrix<double>::Constant(2, 2, 0.9);
  CHECK(psnr(clean, hat) == doctest::Approx(20.0).epsilon(1e-12));
  // summed denominator: 10 log10(1 / 0.04)
  CHECK(psnr(clean, hat, true) == doctest::Approx(10.0 * std::log10(25.0)).epsilon(1e-12));
  CHECK(std::isinf(psnr(clean, clean)));
  CHECK(psnr(clean, clean) > 0);
  Matrix<double> worse = hat;
  worse(0, 0) = 0.5;
  CHECK(psnr(clean, worse) < psnr(clean, hat));
  CHECK_THROWS_AS(psnr(clean, Matrix<double>(Matrix<double>::Ones(1, 4))), ValidationError);
}

TEST_CASE("l1 hand values and triangle inequality") {
  Matrix<double> a = Matrix<double>::Ones(2, 2);
  CHECK(l1_metric(a, a) == 0.0);
  CHECK(l1_metric(a, Matrix<double>(Matrix<double>::Constant(2, 2, 0.9))) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK_THROWS_AS(l1_metric(a, Matrix<double>(Matrix<double>::Ones(4, 1))), ValidationError);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = tiny::uniform<double>(3, 7, rng), y = tiny::uniform<double>(3, 7, rng),
               z = tiny::uniform<double>(3, 7, rng);
    CHECK(l1_metric(x, z) <= l1_metric(x, y) + l1_metric(y, z) + 1e-12);
    CHECK(l1_metric(x, y) >= 0.0);
    CHECK((l1_metric(x, y) == 0.0) == std::isinf(psnr(x, y)));
  }
  const auto x = tiny::uniform<double>(3, 7, rng);
  CHECK((l1_metric(x, x) == 0.0) == std::isinf(psnr(x, x)));
}

TEST_CASE("reconstruction table plumbing with a perfect mock model") {
  auto cfg = tiny::config();
  ModelBundle<float> bundle(cfg);
  make_decoder_constant(bundle, 0.2f);
  // every frame equals the decoder's constant output
  auto ds = synthetic(cfg, 4, 20, 5);
  const Matrix<float> out = decode(bundle.decoder, Matrix<float>(Matrix<float>::Zero(1, cfg.latent_dim)));
  for (auto& x : ds.measurements) x.rowwise() = out.row(0);

  const auto rows = evaluate_reconstruction({{&bundle, 2}}, ds, {0.0, 0.0625});
  REQUIRE(rows.size() == 6);
  for (const auto& r : rows) {
    CHECK(r.windows >= 50);
    CHECK(r.H == 2);
    CHECK(r.T == 2);
    CHECK(r.system == "synthetic");
    if (r.noise == 0.0 || r.target != Target::kInput) {
      CHECK(r.psnr_infinite());
      CHECK(r.l1 == 0.0);
    } else {
      CHECK_FALSE(r.psnr_infinite());
      CHECK(r.l1 > 0.0);
    }
  }
}

TEST_CASE("reconstruction table covers every cell with both targets") {
  auto cfg = tiny::config();
  ModelBundle<float> h2(cfg);
  auto cfg1 = cfg;
  cfg1.history = 1;
  ModelBundle<float> h1(cfg1);
  const auto ds = synthetic(cfg, 4, 20, 6);
  const std::vector<double> noise{0.0, 0.0625, 0.25};
  const auto rows = evaluate_reconstruction({{&h1, 2}, {&h2, 3}}, ds, noise);
  REQUIRE(rows.size() == 2 * 3 * 3);
  for (Index h : {1, 2}) {
    for (double s : noise) {
      int same = 0, next = 0;
      for (const auto& r : rows) {
        if (r.H != h || r.noise != s) continue;
        CHECK(r.windows >= 50);
        if (r.target != Target::kInput || s > 0.0) CHECK(std::isfinite(r.psnr_db));
        CHECK(r.l1 >= 0.0);
        same += r.target == Target::kSame;
        next += r.target == Target::kNext;
      }
      CHECK(same == 1);
      CHECK(next == 1);
    }
  }
  // the input baseline depends only on the data and noise draws
  for (std::size_t k = 0; k < 9; k += 3) CHECK(rows[k].psnr_db == rows[9 + k].psnr_db);

  const auto again = evaluate_reconstruction({{&h1, 2}, {&h2, 3}}, ds, noise);
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].psnr_db == again[i].psnr_db);

  auto dir = temp_dir("csv");
  write_metrics_csv(dir / "metrics.csv", rows);
  std::ifstream is(dir / "metrics.csv");
  std::string line;
  std::getline(is, line);
  CHECK(line == "system,H,T,noise,target,psnr_db,l1");
  int count = 0;
  while (std::getline(is, line)) ++count;
  CHECK(count == 18);
}

TEST_CASE("reconstruction rejects too few windows and mismatched models") {
  auto cfg = tiny::config();
  ModelBundle<float> bundle(cfg);
  CHECK_THROWS_AS(evaluate_reconstruction({{&bundle, 2}}, synthetic(cfg, 2, 20, 1), {0.0}), ValidationError);
  auto other = cfg;
  other.height = other.width = 16;
  CHECK_THROWS_AS(evaluate_reconstruction({{&bundle, 2}}, synthetic(other, 4, 20, 1), {0.0}), ConfigError);
  CHECK_THROWS_AS(evaluate_reconstruction({{&bundle, 2}}, synthetic(cfg, 4, 20, 1), {-1.0}), ValidationError);
}

TEST_CASE("metric rows serialise infinite psnr") {
  MetricRow r;
  r.psnr_db = std::numeric_limits<double>::infinity();
  CHECK(to_json(r)["psnr_db"] == "inf");
  r.psnr_db = 12.5;
  CHECK(to_json(r)["psnr_db"] == 12.5);
  CHECK(to_json(r)["target"] == "x_t");
}

TEST_CASE("rollout comparison with injected oracle latents equals autoencoding error") {
  auto cfg = tiny::config();
  ModelBundle<float> bundle(cfg);
  const auto ds = synthetic(cfg, 2, 20, 8);
  const Index h = cfg.history, k = 6;
  const Matrix<float> truth = ds.measurements[1].middleRows(h, k);
  const Matrix<float> z = encode(bundle.encoder, truth).mean;
  const Matrix<float> recon = decode(bundle.decoder, z);
  const Matrix<float> hist = ds.measurements[1].topRows(h);
  const auto cmp = compare_latents(bundle, ds, 1, hist, z);
  REQUIRE(cmp.l1.size() == k);
  for (Index i = 0; i < k; ++i) {
    const Matrix<float> a = truth.row(i), b = recon.row(i);
    CHECK(cmp.l1(i) == doctest::Approx(l1_metric(a, b)).epsilon(1e-12));
    CHECK(cmp.psnr_db(i) == doctest::Approx(psnr(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("rollout comparison shapes, determinism and zero steps") {
  auto cfg = tiny::config();
  ModelBundle<float> bundle(cfg);
  const auto ds = synthetic(cfg, 2, 20, 9);
  const auto a = rollout_compare(bundle, ds, 0, 0.0625, 5, 17);
  const auto b = rollout_compare(bundle, ds, 0, 0.0625, 5, 17);
  CHECK(a.predicted.rows() == 5);
  CHECK(a.predicted == b.predicted);
  CHECK(a.strip.pixels == b.strip.pixels);
  const auto c = rollout_compare(bundle, ds, 0, 0.0625, 5, 18);
  CHECK(a.strip.pixels != c.strip.pixels);
  for (Index i = 0; i < 5; ++i) CHECK(a.l1(i) >= 0.0);

  const auto zero = rollout_compare(bundle, ds, 0, 0.0, 0, 17);
  CHECK(zero.l1.size() == 0);
  CHECK(zero.psnr_db.size() == 0);
  CHECK(zero.predicted.rows() == 0);
  CHECK(zero.strip.height < a.strip.height);
  CHECK(zero.strip.width > 0);

  CHECK_NOTHROW(rollout_compare(bundle, ds, 0, 0.0, 18, 1));
  CHECK_THROWS_AS(rollout_compare(bundle, ds, 0, 0.0, 19, 1), ValidationError);
  CHECK_THROWS_AS(rollout_compare(bundle, ds, 2, 0.0, 1, 1), ValidationError);
}

TEST_CASE("uncertainty maps are non-negative with a shared colour scale") {
  auto cfg = tiny::config();
  ModelBundle<float> bundle(cfg);
  const auto ds = synthetic(cfg, 2, 20, 10);
  const auto u = uncertainty_heatmaps(bundle, ds, 0, {0.0, 0.0625, 0.25}, 5, 6, 3);
  REQUIRE(u.std_maps.size() == 3);
  double vmax = 0.0;
  for (std::size_t n = 0; n < 3; ++n) {
    REQUIRE(u.std_maps[n].size() == 6);
    double sum = 0.0;
    for (const auto& m : u.std_maps[n]) {
      CHECK(m.rows() == cfg.height);
      CHECK(m.cols() == cfg.width);
      CHECK(m.minCoeff() >= 0.0f);
      vmax = std::max(vmax, static_cast<double>(m.maxCoeff()));
      sum += m.cast<double>().mean();
    }
    CHECK(u.mean_std[n] == doctest::Approx(sum / 6.0));
  }
  CHECK(u.vmax == vmax);
  CHECK(u.vmax > 0.0);
  CHECK_FALSE(u.figure.empty());

  const auto again = uncertainty_heatmaps(bundle, ds, 0, {0.0, 0.0625, 0.25}, 5, 6, 3);
  CHECK(again.mean_std == u.mean_std);

  CHECK_THROWS_AS(uncertainty_heatmaps(bundle, ds, 0, {0.0}, 1, 6, 3), ValidationError);
  CHECK_THROWS_AS(uncertainty_heatmaps(bundle, ds, 0, {0.0}, 2, 19, 3), ValidationError);
}

TEST_CASE("uncertainty maps vanish when latent variances are zero") {
  auto cfg = tiny::config();
  ModelBundle<float> bundle(cfg);
  silence_latent_variance(bundle);
  const auto ds = synthetic(cfg, 2, 20, 11);
  const auto u = uncertainty_heatmaps(bundle, ds, 1, {0.0, 0.25}, 4, 5, 3);
  for (const auto& maps : u.std_maps)
    for (const auto& m : maps) CHECK(m.maxCoeff() <= 1e-6f);
}

TEST_CASE("tsne affinities are a symmetric distribution") {
  std::mt19937_64 rng(2);
  const auto x = tiny::uniform<double>(40, 5, rng);
  const auto p = tsne_affinities(x, 10.0);
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK((p - p.transpose()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(p.minCoeff() > 0.0);
  CHECK_THROWS_AS(tsne_affinities(x, 40.0), ValidationError);
  CHECK_THROWS_AS(tsne(x, TsneOptions{.perplexity = 0.5}), ValidationError);
}

TEST_CASE("tsne separates clusters and ignores rigid input motions") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal;
  const Index per = 25, dim = 6;
  Matrix<double> x(3 * per, dim);
  for (Index c = 0; c < 3; ++c)
    for (Index i = 0; i < per; ++i)
      for (Index k = 0; k < dim; ++k) x(c * per + i, k) = normal(rng) + (k == c ? 12.0 : 0.0);

  TsneOptions opt;
  opt.perplexity = 20.0;
  opt.seed = 9;
  const auto y = tsne(x, opt);
  REQUIRE(y.rows() == x.rows());
  REQUIRE(y.cols() == 2);
  const auto d = distances(y);
  for (Index i = 0; i < y.rows(); ++i) {
    Index best = -1;
    for (Index j = 0; j < y.rows(); ++j)
      if (j != i && (best < 0 || d(i, j) < d(i, best))) best = j;
    CHECK(best / per == i / per);
  }

  // a duplicated input set under the same seed
  const Matrix<double> copy = x;
  CHECK(correlation(distances(tsne(copy, opt)), d) > 0.99);

  // rotating and shifting the inputs only perturbs the affinities by rounding,
  // which the optimisation amplifies somewhat
  Matrix<double> g(dim, dim);
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
  Matrix<double> moved = x * q;
  moved.rowwise() += Eigen::RowVectorXd::Constant(dim, 3.0);
  CHECK(correlation(distances(tsne(moved, opt)), d) > 0.95);

  // duplicated inputs land next to each other
  Matrix<double> twice(2 * x.rows(), dim);
  twice << x, x;
  const auto yy = tsne(twice, opt);
  const auto dd = distances(yy);
  Eigen::ArrayXd all = Eigen::Map<const Eigen::ArrayXd>(dd.data(), dd.size());
  std::sort(all.begin(), all.end());
  const double median = all(all.size() / 2);
  for (Index i = 0; i < x.rows(); ++i) CHECK(dd(i, i + x.rows()) < 0.1 * median);
}

TEST_CASE("latent projection gives one point per state") {
  auto cfg = tiny::config();
  ModelBundle<float> bundle(cfg);
  auto ds = synthetic(cfg, 3, 20, 12);
  ProjectionOptions opt;
  opt.tsne.iterations = 200;
  const auto p = latent_projection(bundle, ds, opt);
  CHECK(p.embedding.rows() == 60);
  CHECK(p.embedding.cols() == 2);
  CHECK(p.color_by == "timestep");
  CHECK(p.color.maxCoeff() == 19.0);
  const auto q = latent_projection(bundle, ds, opt);
  CHECK(p.plot.pixels == q.plot.pixels);

  ds.system = "pendulum";
  std::mt19937_64 rng(1);
  for (Index m = 0; m < 3; ++m) ds.states.push_back(tiny::uniform<float>(20, 4, rng, -7, 7));
  ds.state_names = {"theta1", "theta2", "omega1", "omega2"};
  const auto r = latent_projection(bundle, ds, opt);
  CHECK(r.color_by == "theta2");
  CHECK(r.color.maxCoeff() <= std::numbers::pi);
  CHECK(r.color.minCoeff() >= -std::numbers::pi);
  std::set<Index> groups(r.group.begin(), r.group.end());
  CHECK(groups.size() > 1);
  CHECK(*groups.rbegin() < opt.theta1_bins);

  CHECK_THROWS_AS(latent_projection(bundle, synthetic(cfg, 2, 20, 1), opt), ValidationError);
}

TEST_CASE("png round trip and image helpers") {
  img::Image im(5, 3, {10, 20, 30});
  im.set(4, 2, {255, 0, 7});
  auto dir = temp_dir("png");
  img::write_png(dir / "a.png", im);
  const auto back = img::read_png(dir / "a.png");
  CHECK(back.width == 5);
  CHECK(back.height == 3);
  CHECK(back.pixels == im.pixels);
  {
    std::ofstream os(dir / "bad.png");
    os << "not a png";
  }
  CHECK_THROWS_AS(img::read_png(dir / "bad.png"), FormatError);

  CHECK(img::colormap(0.0) == img::Rgb{68, 1, 84});
  CHECK(img::colormap(1.0) == img::Rgb{253, 231, 37});
  CHECK(img::colormap(7.0) == img::colormap(1.0));

  const float rgb[12] = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};  // 3 x 2 x 2
  const auto f = img::frame_to_image(rgb, 3, 2, 2);
  CHECK(f.at(0, 0) == img::Rgb{255, 0, 0});
  CHECK(f.at(1, 0) == img::Rgb{0, 255, 0});
  CHECK(f.at(0, 1) == img::Rgb{0, 0, 255});

  const auto t = img::tile({{im, im}, {im}}, 2);
  CHECK(t.width == 2 + 2 * (5 + 2));
  CHECK(t.height == 2 + 2 * (3 + 2));
  CHECK(img::upscale(im, 3).at(14, 8) == img::Rgb{255, 0, 7});
}
