#include "dklrom/evaluation.hpp"

#include "dklrom/errors.hpp"
#include "dklrom/simulators.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>

namespace dklrom {

template <typename Scalar>
double psnr(const Matrix<Scalar>& clean, const Matrix<Scalar>& hat, bool summed) {
  if (clean.rows() != hat.rows() || clean.cols() != hat.cols()) throw ValidationError("psnr: shape mismatch");
  if (clean.size() == 0) throw ValidationError("psnr: empty input");
  const double sse = (clean.template cast<double>() - hat.template cast<double>()).squaredNorm();
  if (sse == 0.0) return std::numeric_limits<double>::infinity();
  const double denom = summed ? sse : sse / static_cast<double>(clean.size());
  return 10.0 * std::log10(1.0 / denom);
}

template <typename Scalar>
double l1_metric(const Matrix<Scalar>& clean, const Matrix<Scalar>& hat) {
  if (clean.rows() != hat.rows() || clean.cols() != hat.cols()) throw ValidationError("l1: shape mismatch");
  return (clean.template cast<double>() - hat.template cast<double>()).cwiseAbs().sum();
}

template double psnr<float>(const Matrix<float>&, const Matrix<float>&, bool);
template double psnr<double>(const Matrix<double>&, const Matrix<double>&, bool);
template double l1_metric<float>(const Matrix<float>&, const Matrix<float>&);
template double l1_metric<double>(const Matrix<double>&, const Matrix<double>&);

std::string target_name(Target t) {
  switch (t) {
    case Target::kInput: return "input";
    case Target::kSame: return "x_t";
    case Target::kNext: return "x_t+1";
  }
  return "?";
}

namespace {

void check_compatible(const ModelConfig& cfg, const TrajectoryDataset& ds) {
  if (cfg.channels != ds.channels || cfg.height != ds.height || cfg.width != ds.width ||
      cfg.control_dim != ds.control_dim || cfg.param_dim != ds.param_dim)
    throw ConfigError("model " + cfg.fingerprint() + " does not match dataset shape " +
                      std::to_string(ds.channels) + "x" + std::to_string(ds.height) + "x" +
                      std::to_string(ds.width) + " u" + std::to_string(ds.control_dim) + " p" +
                      std::to_string(ds.param_dim));
}

// Noise on frame f of trajectory m comes from its own stream, so every caller
// sees the same draws for a given seed whatever the noise level.
Matrix<float> noisy_frame(const TrajectoryDataset& ds, Index m, Index f, double sigma2, std::uint64_t seed) {
  auto rng = derived_stream(seed, static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(f));
  return sim::add_noise<float>(ds.measurements[static_cast<std::size_t>(m)].row(f), sigma2, rng);
}

Matrix<float> noisy_history(const TrajectoryDataset& ds, Index m, Index h, double sigma2, std::uint64_t seed) {
  Matrix<float> out(h, ds.measurement_dim());
  for (Index f = 0; f < h; ++f) out.row(f) = noisy_frame(ds, m, f, sigma2, seed);
  return out;
}

Matrix<float> encode_means(const ModelBundle<float>& bundle, const Matrix<float>& x) {
  return encode(bundle.encoder, x).mean;
}

Index upscale_factor(Index height) { return std::max<Index>(1, 64 / std::max<Index>(1, height)); }

img::Image frame_image(const TrajectoryDataset& ds, const float* frame) {
  return img::upscale(img::frame_to_image(frame, ds.channels, ds.height, ds.width), upscale_factor(ds.height));
}

double wrap_angle(double a) { return std::atan2(std::sin(a), std::cos(a)); }

}  // namespace

std::vector<MetricRow> evaluate_reconstruction(const std::vector<EvalModel>& models, const TrajectoryDataset& test,
                                               const std::vector<double>& noise_levels,
                                               const ReconstructionOptions& options) {
  if (models.empty()) throw ValidationError("evaluate_reconstruction: no models");
  if (noise_levels.empty()) throw ValidationError("evaluate_reconstruction: no noise levels");
  for (double s : noise_levels)
    if (!(s >= 0.0)) throw ValidationError("evaluate_reconstruction: noise levels must be >= 0");
  Index h_max = 0;
  for (const auto& m : models) {
    if (!m.bundle) throw ValidationError("evaluate_reconstruction: null bundle");
    check_compatible(m.bundle->config, test);
    h_max = std::max(h_max, m.bundle->config.history);
  }

  // target frame t+1 for t in [h_max-1, N-2]
  std::vector<std::pair<Index, Index>> all;
  for (Index m = 0; m < test.trajectories(); ++m)
    for (Index t = h_max - 1; t + 1 < test.steps(); ++t) all.emplace_back(m, t);
  const Index available = static_cast<Index>(all.size());
  if (available < options.min_windows)
    throw ValidationError("evaluate_reconstruction: only " + std::to_string(available) + " windows available, " +
                          std::to_string(options.min_windows) + " required");
  std::vector<std::pair<Index, Index>> windows;
  const Index count = std::min(available, std::max(options.max_windows, options.min_windows));
  for (Index k = 0; k < count; ++k) windows.push_back(all[static_cast<std::size_t>(k * available / count)]);

  const Index dim = test.measurement_dim();
  const Index chunk = 32;
  std::vector<MetricRow> rows;
  for (const auto& model : models) {
    const auto& bundle = *model.bundle;
    const Index h = bundle.config.history;
    for (double sigma2 : noise_levels) {
      double sum_psnr[3] = {0, 0, 0}, sum_l1[3] = {0, 0, 0};
      for (std::size_t start = 0; start < windows.size(); start += chunk) {
        const Index b = std::min<Index>(chunk, static_cast<Index>(windows.size() - start));
        std::vector<Matrix<float>> hist(static_cast<std::size_t>(h), Matrix<float>(b, dim));
        std::vector<Matrix<float>> u_hist;
        if (test.control_dim > 0)
          u_hist.assign(static_cast<std::size_t>(h), Matrix<float>(b, test.control_dim));
        Matrix<float> p(b, test.param_dim), clean_t(b, dim), clean_next(b, dim);
        for (Index i = 0; i < b; ++i) {
          const auto [m, t] = windows[start + static_cast<std::size_t>(i)];
          const auto& x = test.measurements[static_cast<std::size_t>(m)];
          for (Index j = 0; j < h; ++j) {
            const Index f = t - h + 1 + j;
            hist[static_cast<std::size_t>(j)].row(i) = noisy_frame(test, m, f, sigma2, options.seed);
            if (test.control_dim > 0)
              u_hist[static_cast<std::size_t>(j)].row(i) = test.controls[static_cast<std::size_t>(m)].row(f);
          }
          if (test.param_dim > 0) p.row(i) = test.params.row(m);
          clean_t.row(i) = x.row(t);
          clean_next.row(i) = x.row(t + 1);
        }
        const Matrix<float>& noisy_t = hist.back();
        std::vector<Matrix<float>> z_hist;
        for (const auto& frames : hist) z_hist.push_back(encode_means(bundle, frames));
        const Matrix<float> same = decode(bundle.decoder, z_hist.back());
        const Matrix<float> next = decode(bundle.decoder, predict_next(bundle.dynamics, z_hist, u_hist, p).mean);
        for (Index i = 0; i < b; ++i) {
          const Matrix<float> ct = clean_t.row(i), cn = clean_next.row(i);
          const Matrix<float> outs[3] = {noisy_t.row(i), same.row(i), next.row(i)};
          const Matrix<float>* refs[3] = {&ct, &ct, &cn};
          for (int k = 0; k < 3; ++k) {
            sum_psnr[k] += psnr(*refs[k], outs[k], options.psnr_summed);
            sum_l1[k] += l1_metric(*refs[k], outs[k]);
          }
        }
      }
      const double n = static_cast<double>(windows.size());
      for (int k = 0; k < 3; ++k) {
        MetricRow r;
        r.system = test.system;
        r.H = h;
        r.T = model.horizon;
        r.noise = sigma2;
        r.target = static_cast<Target>(k);
        r.psnr_db = sum_psnr[k] / n;
        r.l1 = sum_l1[k] / n;
        r.windows = static_cast<Index>(windows.size());
        rows.push_back(r);
      }
    }
  }
  return rows;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  std::ofstream os(path);
  os << "system,H,T,noise,target,psnr_db,l1\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%ld,%ld,%.6g,%s,%s,%.6f\n", r.system.c_str(), static_cast<long>(r.H),
                  static_cast<long>(r.T), r.noise, target_name(r.target).c_str(),
                  r.psnr_infinite() ? "inf" : std::to_string(r.psnr_db).c_str(), r.l1);
    os << buf;
  }
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

nlohmann::json to_json(const MetricRow& r) {
  nlohmann::json j = {{"system", r.system}, {"H", r.H},   {"T", r.T},
                      {"noise", r.noise},   {"target", target_name(r.target)},
                      {"l1", r.l1},         {"windows", r.windows}};
  if (r.psnr_infinite())
    j["psnr_db"] = "inf";
  else
    j["psnr_db"] = r.psnr_db;
  return j;
}

RolloutComparison compare_latents(const ModelBundle<float>& bundle, const TrajectoryDataset& ds, Index trajectory,
                                  const Matrix<float>& noisy_history, const Matrix<float>& latents) {
  check_compatible(bundle.config, ds);
  if (trajectory < 0 || trajectory >= ds.trajectories()) throw ValidationError("rollout: trajectory out of range");
  const Index h = noisy_history.rows();
  const Index k = latents.rows();
  if (h + k > ds.steps())
    throw ValidationError("rollout: trajectory has " + std::to_string(ds.steps()) + " frames, " +
                          std::to_string(h + k) + " needed");
  const auto& x = ds.measurements[static_cast<std::size_t>(trajectory)];
  RolloutComparison out;
  out.predicted = k > 0 ? decode(bundle.decoder, latents) : Matrix<float>(0, ds.measurement_dim());
  out.truth = x.middleRows(h, k);
  out.l1.resize(k);
  out.psnr_db.resize(k);
  for (Index i = 0; i < k; ++i) {
    const Matrix<float> a = out.truth.row(i), b = out.predicted.row(i);
    out.l1(i) = l1_metric(a, b);
    out.psnr_db(i) = psnr(a, b);
  }

  std::vector<std::vector<img::Image>> rows(k > 0 ? 3 : 1);
  for (Index i = 0; i < h; ++i) rows[0].push_back(frame_image(ds, noisy_history.row(i).data()));
  for (Index i = 0; i < k; ++i) {
    rows[1].push_back(frame_image(ds, out.predicted.row(i).data()));
    rows[2].push_back(frame_image(ds, out.truth.row(i).data()));
  }
  const Index pad = 4;
  out.strip = img::tile(rows, pad);
  if (k > 0) {
    const Index th = rows[2].front().height;
    const Index top = pad + 2 * (th + pad);
    out.strip.draw_box(1, top - 3, pad + k * (th + pad) - 1, th + 6, {0, 170, 0}, 2);
  }
  return out;
}

RolloutComparison rollout_compare(const ModelBundle<float>& bundle, const TrajectoryDataset& ds, Index trajectory,
                                  double noise_sigma2, Index steps, std::uint64_t seed) {
  check_compatible(bundle.config, ds);
  const Index h = bundle.config.history;
  if (steps < 0) throw ValidationError("rollout: negative step count");
  if (trajectory < 0 || trajectory >= ds.trajectories()) throw ValidationError("rollout: trajectory out of range");
  if (h + steps > ds.steps())
    throw ValidationError("rollout: trajectory has " + std::to_string(ds.steps()) + " frames, " +
                          std::to_string(h + steps) + " needed");
  const auto m = static_cast<std::size_t>(trajectory);
  const Matrix<float> hist = noisy_history(ds, trajectory, h, noise_sigma2, seed);
  const Matrix<float> z0 = encode_means(bundle, hist);
  std::vector<Matrix<float>> z_all;
  for (Index i = 0; i < h; ++i) z_all.push_back(z0.row(i));
  Matrix<float> p(1, ds.param_dim);
  if (ds.param_dim > 0) p = ds.params.row(trajectory);
  Matrix<float> latents(steps, bundle.config.latent_dim);
  for (Index k = 0; k < steps; ++k) {
    std::vector<Matrix<float>> z_win(z_all.end() - h, z_all.end());
    std::vector<Matrix<float>> u_win;
    for (Index j = 0; j < h && ds.control_dim > 0; ++j) u_win.push_back(ds.controls[m].row(k + j));
    latents.row(k) = predict_next(bundle.dynamics, z_win, u_win, p).mean;
    z_all.push_back(latents.row(k));
  }
  return compare_latents(bundle, ds, trajectory, hist, latents);
}

UncertaintyMaps uncertainty_heatmaps(const ModelBundle<float>& bundle, const TrajectoryDataset& ds,
                                     Index trajectory, const std::vector<double>& noise_levels, Index n_rollouts,
                                     Index steps, std::uint64_t seed) {
  check_compatible(bundle.config, ds);
  if (n_rollouts < 2) throw ValidationError("uncertainty_heatmaps: n_rollouts must be >= 2");
  if (steps < 1) throw ValidationError("uncertainty_heatmaps: need at least one step");
  if (noise_levels.empty()) throw ValidationError("uncertainty_heatmaps: no noise levels");
  if (trajectory < 0 || trajectory >= ds.trajectories())
    throw ValidationError("uncertainty_heatmaps: trajectory out of range");
  const Index h = bundle.config.history;
  if (h + steps > ds.steps())
    throw ValidationError("uncertainty_heatmaps: trajectory has " + std::to_string(ds.steps()) + " frames, " +
                          std::to_string(h + steps) + " needed");
  const auto m = static_cast<std::size_t>(trajectory);
  const Index u = ds.control_dim;
  const Matrix<float> hist_u = u > 0 ? Matrix<float>(ds.controls[m].topRows(h - 1)) : Matrix<float>(h - 1, 0);
  const Matrix<float> future_u = u > 0 ? Matrix<float>(ds.controls[m].middleRows(h - 1, steps)) : Matrix<float>(steps, 0);
  Vector<float> p(ds.param_dim);
  if (ds.param_dim > 0) p = ds.params.row(trajectory).transpose();
  const Index plane = ds.height * ds.width;

  UncertaintyMaps out;
  out.noise_levels = noise_levels;
  for (double sigma2 : noise_levels) {
    const Matrix<float> x0 = noisy_history(ds, trajectory, h, sigma2, seed);
    const auto paths = rollout(bundle, x0, hist_u, future_u, p, n_rollouts, seed + 1);
    std::vector<Matrix<float>> maps;
    double total = 0.0;
    for (Index k = 0; k < steps; ++k) {
      Matrix<double> samples(n_rollouts, ds.measurement_dim());
      for (Index s = 0; s < n_rollouts; ++s)
        samples.row(s) = paths.decoded[static_cast<std::size_t>(s)].row(k).cast<double>();
      const Eigen::RowVectorXd mean = samples.colwise().mean();
      const Eigen::RowVectorXd var =
          (samples.rowwise() - mean).colwise().squaredNorm() / static_cast<double>(n_rollouts - 1);
      Matrix<float> map = Matrix<float>::Zero(ds.height, ds.width);
      for (Index c = 0; c < ds.channels; ++c)
        for (Index i = 0; i < plane; ++i)
          map(i / ds.width, i % ds.width) += static_cast<float>(std::sqrt(var(c * plane + i)) / ds.channels);
      total += map.cast<double>().mean();
      out.vmax = std::max(out.vmax, static_cast<double>(map.maxCoeff()));
      maps.push_back(std::move(map));
    }
    out.mean_std.push_back(total / static_cast<double>(steps));
    out.std_maps.push_back(std::move(maps));
  }

  // up to 8 evenly spaced steps per row, shared colour range [0, vmax]
  const Index cols = std::min<Index>(8, steps);
  const Index factor = upscale_factor(ds.height);
  std::vector<std::vector<img::Image>> rows;
  for (const auto& maps : out.std_maps) {
    std::vector<img::Image> row;
    for (Index c = 0; c < cols; ++c) {
      const Index k = cols > 1 ? c * (steps - 1) / (cols - 1) : 0;
      const auto& map = maps[static_cast<std::size_t>(k)];
      row.push_back(img::upscale(img::heatmap(map.data(), ds.height, ds.width, 0.0, out.vmax), factor));
    }
    row.push_back(img::colorbar(8, ds.height * factor));
    rows.push_back(std::move(row));
  }
  out.figure = img::tile(rows, 4);
  return out;
}

LatentProjection latent_projection(const ModelBundle<float>& bundle, const TrajectoryDataset& ds,
                                   const ProjectionOptions& options) {
  check_compatible(bundle.config, ds);
  const Index total = ds.trajectories() * ds.steps();
  constexpr Index kMinPoints = 50;
  if (total < kMinPoints)
    throw ValidationError("latent_projection: " + std::to_string(total) + " frames, at least 50 required");
  if (options.theta1_bins < 1) throw ValidationError("latent_projection: theta1_bins must be >= 1");
  const Index n = std::min(total, std::max(options.max_points, kMinPoints));
  std::vector<std::pair<Index, Index>> picks;
  for (Index k = 0; k < n; ++k) {
    const Index flat = k * total / n;
    picks.emplace_back(flat / ds.steps(), flat % ds.steps());
  }

  Matrix<float> frames(n, ds.measurement_dim());
  for (Index i = 0; i < n; ++i)
    frames.row(i) = ds.measurements[static_cast<std::size_t>(picks[static_cast<std::size_t>(i)].first)].row(
        picks[static_cast<std::size_t>(i)].second);
  Matrix<double> z(n, bundle.config.latent_dim);
  for (Index start = 0; start < n; start += 64) {
    const Index b = std::min<Index>(64, n - start);
    z.middleRows(start, b) = encode_means(bundle, frames.middleRows(start, b)).cast<double>();
  }

  LatentProjection out;
  out.embedding = tsne(z, options.tsne);
  out.color.resize(n);
  out.group.assign(static_cast<std::size_t>(n), 0);
  const bool by_angle = ds.system == "pendulum" && ds.has_states();
  const Index panels = by_angle ? options.theta1_bins : 1;
  double lo = 0.0, hi = static_cast<double>(ds.steps() - 1);
  if (by_angle) {
    out.color_by = "theta2";
    lo = -std::numbers::pi;
    hi = std::numbers::pi;
    for (Index i = 0; i < n; ++i) {
      const auto [m, f] = picks[static_cast<std::size_t>(i)];
      const auto& s = ds.states[static_cast<std::size_t>(m)];
      out.color(i) = wrap_angle(s(f, 1));
      const double t1 = (wrap_angle(s(f, 0)) + std::numbers::pi) / (2.0 * std::numbers::pi);
      out.group[static_cast<std::size_t>(i)] =
          std::clamp<Index>(static_cast<Index>(t1 * static_cast<double>(panels)), 0, panels - 1);
    }
  } else {
    out.color_by = "timestep";
    for (Index i = 0; i < n; ++i) out.color(i) = static_cast<double>(picks[static_cast<std::size_t>(i)].second);
  }

  std::vector<img::Image> row;
  const Index size = 320;
  for (Index g = 0; g < panels; ++g) {
    std::vector<bool> highlight(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) highlight[static_cast<std::size_t>(i)] = out.group[static_cast<std::size_t>(i)] == g;
    row.push_back(img::scatter(out.embedding, out.color, lo, hi, size, panels > 1 ? highlight : std::vector<bool>{}));
  }
  row.push_back(img::colorbar(12, size));
  out.plot = img::tile({row}, 6);
  return out;
}

}  // namespace dklrom
