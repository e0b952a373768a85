#include "dklrom/training.hpp"

#include "dklrom/checkpoint.hpp"
#include "dklrom/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace dklrom {

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr_network >= 0.0) || !(lr_gp >= 0.0)) throw ConfigError("learning rates must be >= 0");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (!(noise_sigma2 >= 0.0)) throw ConfigError("noise_sigma2 must be >= 0");
  if (eval_interval < 0 || eval_batches < 1) throw ConfigError("eval_interval must be >= 0 and eval_batches >= 1");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
}

void TrainConfig::check_dataset(const TrajectoryDataset& ds) const {
  auto mismatch = [](const std::string& what, Index model_v, Index data_v) {
    return ConfigError("dataset " + what + " is " + std::to_string(data_v) + " but the model expects " +
                       std::to_string(model_v));
  };
  if (ds.channels != model.channels) throw mismatch("channel count", model.channels, ds.channels);
  if (ds.height != model.height || ds.width != model.width) throw mismatch("frame height", model.height, ds.height);
  if (ds.control_dim != model.control_dim) throw mismatch("control width |u|", model.control_dim, ds.control_dim);
  if (ds.param_dim != model.param_dim) throw mismatch("parameter width |p|", model.param_dim, ds.param_dim);
  const Index need = model.history + weights.horizon;
  if (need > ds.steps())
    throw ConfigError("H+T=" + std::to_string(need) + " exceeds trajectory length N=" + std::to_string(ds.steps()));
}

// ---------------------------------------------------------------------------

template <typename Scalar>
Adam<Scalar>::Adam(nn::ParamList<Scalar> params, double lr_network, double lr_gp, double beta1, double beta2,
                   double eps)
    : params_(std::move(params)), lr_network_(lr_network), lr_gp_(lr_gp), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto* p : params_) {
    m_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
  }
}

template <typename Scalar>
void Adam<Scalar>::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    const double lr = p.group == ad::ParamGroup::kGaussianProcess ? lr_gp_ : lr_network_;
    if (lr == 0.0) continue;
    m_[i] = static_cast<Scalar>(beta1_) * m_[i] + static_cast<Scalar>(1.0 - beta1_) * p.grad;
    v_[i] = static_cast<Scalar>(beta2_) * v_[i] + static_cast<Scalar>(1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    const auto m_hat = m_[i].array() / static_cast<Scalar>(c1);
    const auto v_hat = v_[i].array() / static_cast<Scalar>(c2);
    p.value.array() -= static_cast<Scalar>(lr) * m_hat / (v_hat.sqrt() + static_cast<Scalar>(eps_));
  }
}

template <typename Scalar>
double gradient_norm(const nn::ParamList<Scalar>& params) {
  double sq = 0;
  for (const auto* p : params) sq += p->grad.template cast<double>().squaredNorm();
  return std::sqrt(sq);
}

template <typename Scalar>
double clip_gradients(const nn::ParamList<Scalar>& params, double max_norm) {
  const double norm = gradient_norm(params);
  if (max_norm > 0 && norm > max_norm && std::isfinite(norm)) {
    const auto f = static_cast<Scalar>(max_norm / norm);
    for (auto* p : params) p->grad *= f;
  }
  return norm;
}

template class Adam<float>;
template class Adam<double>;
template double gradient_norm<float>(const nn::ParamList<float>&);
template double gradient_norm<double>(const nn::ParamList<double>&);
template double clip_gradients<float>(const nn::ParamList<float>&, double);
template double clip_gradients<double>(const nn::ParamList<double>&, double);

// ---------------------------------------------------------------------------

namespace {

constexpr Index kChunk = 64;
constexpr float kInitFactorShrink = 0.1f;

double median_pairwise_distance(const Matrix<float>& f) {
  std::vector<double> d;
  for (Index i = 0; i < f.rows(); ++i)
    for (Index j = i + 1; j < f.rows(); ++j) d.push_back((f.row(i) - f.row(j)).cast<double>().norm());
  if (d.empty()) return 1.0;
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid > 1e-6 ? *mid : 1.0;
}

std::vector<Index> pick_indices(Index rows, Index n, std::mt19937_64& rng) {
  std::vector<Index> idx(static_cast<std::size_t>(rows));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<Index> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = idx[static_cast<std::size_t>(i % rows)];
  return out;
}

Matrix<float> gather(const Matrix<float>& all, const std::vector<Index>& idx) {
  Matrix<float> out(static_cast<Index>(idx.size()), all.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = all.row(idx[i]);
  return out;
}

// Variational means set to `targets` (n_ind x heads) and factors shrunk, so
// the posterior at the inducing locations starts close to those values.
void seed_posterior(GpHeads<float>& heads, const Matrix<float>& targets) {
  for (Index k = 0; k < heads.heads(); ++k) {
    auto state = heads.inducing(k);
    state.var_mean = targets.col(k);
    state.var_cov_factor *= kInitFactorShrink;
    heads.set_inducing(k, state);
  }
}

// Rescales a linear output layer in place so that `out`, its outputs on a
// sample, becomes zero mean and unit spread per column. `out` is updated too.
void standardise_outputs(nn::Linear<float>& layer, Matrix<float>& out) {
  const Eigen::RowVectorXf mean = out.colwise().mean();
  for (Index j = 0; j < out.cols(); ++j) {
    const double var = (out.col(j).array() - mean(j)).square().cast<double>().mean();
    // a constant column is only centred
    const double sd = std::sqrt(var);
    const auto scale = static_cast<float>(sd > 1e-6 ? 1.0 / sd : 1.0);
    layer.weight.value.row(j) *= scale;
    layer.bias.value(0, j) = (layer.bias.value(0, j) - mean(j)) * scale;
    out.col(j) = (out.col(j).array() - mean(j)) * scale;
  }
}

std::string parameter_report(ModelBundle<float>& bundle) {
  std::ostringstream os;
  for (const auto* p : bundle.parameters()) {
    os << "\n  " << p->name << ": |value| " << p->value.norm() << ", |grad| " << p->grad.norm();
  }
  return os.str();
}

}  // namespace

void initialise_output_bias(ModelBundle<float>& bundle, const TrajectoryDataset& ds) {
  const Index c = bundle.config.channels, plane = bundle.config.height * bundle.config.width;
  auto& bias = bundle.decoder.deconvs.back().bias.value;
  for (Index k = 0; k < c; ++k) {
    double sum = 0.0;
    Index count = 0;
    for (const auto& x : ds.measurements) {
      sum += x.middleCols(k * plane, plane).cast<double>().sum();
      count += x.rows() * plane;
    }
    const double mean = std::clamp(sum / static_cast<double>(std::max<Index>(count, 1)), 1e-3, 1.0 - 1e-3);
    bias(0, k) = static_cast<float>(std::log(mean / (1.0 - mean)));
  }
}

void initialise_inducing(ModelBundle<float>& bundle, const TrajectoryDataset& ds, const TrainConfig& cfg,
                         std::mt19937_64& rng) {
  const auto& mc = bundle.config;
  const Index h = mc.history, len = h + cfg.weights.horizon;
  const Index n_ind = mc.inducing_points;
  const auto windows =
      sample_windows(ds, std::max(cfg.batch_size, n_ind), h, cfg.weights.horizon, cfg.noise_sigma2, rng);
  const auto batch = make_batch<float>(windows);
  const Index w = batch.size();

  Matrix<float> frames(w * len, mc.measurement_dim());
  for (Index l = 0; l < len; ++l) frames.middleRows(l * w, w) = batch.frames[static_cast<std::size_t>(l)];
  Matrix<float> enc_features(frames.rows(), mc.feature_dim);
  for (Index s = 0; s < frames.rows(); s += kChunk) {
    const Index n = std::min(kChunk, frames.rows() - s);
    ad::Tape<float> tape(false);
    enc_features.middleRows(s, n) = bundle.encoder.features(tape, tape.constant(frames.middleRows(s, n))).value();
  }
  standardise_outputs(bundle.encoder.to_features, enc_features);
  const auto enc_idx = pick_indices(enc_features.rows(), n_ind, rng);
  const Matrix<float> enc_pick = gather(enc_features, enc_idx);
  auto& enc = bundle.encoder.heads;
  enc.reset_to_prior(enc_pick, static_cast<float>(median_pairwise_distance(enc_pick)));
  // latent i starts as standardised feature i (mod F)
  Matrix<float> enc_targets(n_ind, enc.heads());
  for (Index k = 0; k < enc.heads(); ++k) enc_targets.col(k) = enc_pick.col(k % mc.feature_dim);
  seed_posterior(enc, enc_targets);

  // Dynamics inputs: encoder means of each window's first H frames.
  std::vector<Matrix<float>> z_hist;
  for (Index l = 0; l < h; ++l) z_hist.push_back(encode(bundle.encoder, batch.frames[static_cast<std::size_t>(l)]).mean);
  Matrix<float> dyn_features(w, mc.feature_dim);
  for (Index s = 0; s < w; s += kChunk) {
    const Index n = std::min(kChunk, w - s);
    ad::Tape<float> tape(false);
    std::vector<ad::Var<float>> zs, us;
    for (Index l = 0; l < h; ++l) {
      zs.push_back(tape.constant(z_hist[static_cast<std::size_t>(l)].middleRows(s, n)));
      us.push_back(tape.constant(batch.controls[static_cast<std::size_t>(l)].middleRows(s, n)));
    }
    dyn_features.middleRows(s, n) =
        bundle.dynamics.features(tape, zs, us, tape.constant(batch.params.middleRows(s, n))).value();
  }
  standardise_outputs(bundle.dynamics.to_features, dyn_features);
  const auto dyn_idx = pick_indices(w, n_ind, rng);
  const Matrix<float> dyn_pick = gather(dyn_features, dyn_idx);
  auto& dyn = bundle.dynamics.heads;
  dyn.reset_to_prior(dyn_pick, static_cast<float>(median_pairwise_distance(dyn_pick)));
  // each dynamics location starts at the encoding of the frame its window predicts
  seed_posterior(dyn, gather(encode(bundle.encoder, batch.frames[static_cast<std::size_t>(h)]).mean, dyn_idx));
}

LossBreakdown held_out_loss(const ModelBundle<float>& bundle, const TrajectoryDataset& ds, const TrainConfig& cfg,
                            Index batches, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LossBreakdown mean;
  for (Index k = 0; k < batches; ++k) {
    const auto windows =
        sample_windows(ds, cfg.batch_size, bundle.config.history, cfg.weights.horizon, cfg.noise_sigma2, rng);
    const auto r = total_loss(bundle, make_batch<float>(windows), cfg.weights, rng);
    mean.recon += r.recon / static_cast<double>(batches);
    mean.reg += r.reg / static_cast<double>(batches);
    mean.recon_next += r.recon_next / static_cast<double>(batches);
    mean.vi += r.vi / static_cast<double>(batches);
  }
  mean.total = mean.recon + cfg.weights.w_reg * mean.reg + mean.recon_next + cfg.weights.w_var * mean.vi;
  return mean;
}

TrainResult train(const TrainConfig& cfg, const TrajectoryDataset& train_ds, const TrajectoryDataset* validation,
                  const StepCallback& on_step) {
  cfg.validate();
  cfg.check_dataset(train_ds);
  train_ds.validate();
  if (validation) {
    cfg.check_dataset(*validation);
    validation->validate();
  }
  if (cfg.deterministic) Eigen::setNbThreads(1);

  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  TrainResult result{ModelBundle<float>(cfg.model), {}};
  auto& bundle = result.bundle;
  auto init_rng = derived_stream(cfg.seed, 1);
  initialise_output_bias(bundle, train_ds);
  initialise_inducing(bundle, train_ds, cfg, init_rng);

  auto params = bundle.parameters();
  Adam<float> adam(params, cfg.lr_network, cfg.lr_gp);
  auto rng = derived_stream(cfg.seed, 2);
  const std::uint64_t eval_seed = derived_stream(cfg.seed, 3)();
  const TrajectoryDataset& eval_ds = validation ? *validation : train_ds;
  const Index h = cfg.model.history, t_steps = cfg.weights.horizon;

  for (Index step = 0; step < cfg.max_steps; ++step) {
    const auto windows = sample_windows(train_ds, cfg.batch_size, h, t_steps, cfg.noise_sigma2, rng);
    const auto batch = make_batch<float>(windows);
    const auto noise = draw_loss_noise(batch, h, t_steps, cfg.model.latent_dim, rng());
    for (auto* p : params) p->zero_grad();

    LossWeights weights = cfg.weights;
    if (step < cfg.warmup_steps) {
      const double ramp = static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
      weights.w_reg *= ramp;
      weights.w_var *= ramp;
    }
    ad::Tape<float> tape;
    LossTerms<float> terms;
    try {
      terms = loss_terms(tape, bundle, batch, weights, noise);
    } catch (const std::exception& e) {
      // Batch shapes were checked up front, so a failure here is a numerical breakdown.
      throw NumericalError("forward pass failed at step " + std::to_string(step) + ": " + e.what() +
                           "; parameters:" + parameter_report(bundle));
    }
    const auto loss = evaluate_terms(terms, weights);
    if (!std::isfinite(loss.total)) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << step << " (recon " << loss.recon << ", reg " << loss.reg
          << ", recon_next " << loss.recon_next << ", vi " << loss.vi << "); parameters:" << parameter_report(bundle);
      throw NumericalError(msg.str());
    }
    tape.backward(terms.total);
    const double norm = clip_gradients(params, cfg.grad_clip);
    if (!std::isfinite(norm)) {
      std::ostringstream msg;
      msg << "non-finite gradient at step " << step << " with loss " << loss.total << "; parameters:"
          << parameter_report(bundle);
      throw NumericalError(msg.str());
    }
    adam.step();

    const TrainStep record{step, loss, norm, elapsed()};
    result.log.steps.push_back(record);
    if (on_step) on_step(record);

    if (cfg.eval_interval > 0 && (step + 1) % cfg.eval_interval == 0) {
      result.log.evals.push_back({step + 1, held_out_loss(bundle, eval_ds, cfg, cfg.eval_batches, eval_seed)});
      if (!cfg.checkpoint_dir.empty()) save_checkpoint(bundle, cfg.checkpoint_dir, cfg);
    }
  }
  result.log.wall_seconds = elapsed();
  return result;
}

GridSearchResult grid_search_weights(const TrainConfig& cfg, const TrajectoryDataset& ds,
                                     const std::vector<GridPoint>& grid, double validation_fraction) {
  if (grid.empty()) throw ConfigError("grid search needs at least one grid point");
  auto split_rng = derived_stream(cfg.seed, 4);
  const auto parts = split(ds, validation_fraction, split_rng);
  const std::uint64_t eval_seed = derived_stream(cfg.seed, 5)();
  GridSearchResult out;
  for (const auto& point : grid) {
    TrainConfig c = cfg;
    c.weights.w_reg = point.w_reg;
    c.weights.w_var = point.w_var;
    c.eval_interval = 0;
    c.checkpoint_dir.clear();
    const auto trained = train(c, parts.train);
    GridRow row{point, held_out_loss(trained.bundle, parts.test, c, c.eval_batches, eval_seed), 0.0};
    row.score = row.held_out.recon + row.held_out.reg + row.held_out.recon_next;
    out.rows.push_back(row);
  }
  for (std::size_t i = 1; i < out.rows.size(); ++i)
    if (out.rows[i].score < out.rows[out.best].score) out.best = i;
  return out;
}

}  // namespace dklrom
