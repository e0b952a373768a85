#include "dklrom/models.hpp"

#include "dklrom/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dklrom {

namespace {

constexpr Index kInferenceChunk = 64;

template <typename Scalar>
Matrix<Scalar> normal_init(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix<Scalar> m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = static_cast<Scalar>(dist(rng));
  return m;
}

// Spatial sizes after each stride-2 layer, input size first.
std::vector<std::pair<Index, Index>> conv_sizes(const ModelConfig& cfg) {
  std::vector<std::pair<Index, Index>> sizes{{cfg.height, cfg.width}};
  for (std::size_t i = 0; i < cfg.resolved_conv_channels().size(); ++i) {
    const auto [h, w] = sizes.back();
    const auto g = ad::conv_geometry(1, 1, h, w, 4, 2, 1);
    sizes.emplace_back(g.out_h, g.out_w);
  }
  return sizes;
}

template <typename Scalar>
ad::Var<Scalar> as_var(ad::Tape<Scalar>& tape, const Matrix<Scalar>& m) {
  return tape.constant(m);
}

}  // namespace

std::vector<Index> default_conv_channels(Index height, Index width) {
  std::vector<Index> channels{32, 64, 128, 256};
  for (Index n = std::max(height, width); n > 100; n /= 2) channels.push_back(256);
  // Keep at least 2x2 pixels after the last layer.
  Index fit = 0;
  for (Index n = std::min(height, width); n / 2 >= 2; n /= 2) ++fit;
  if (fit < static_cast<Index>(channels.size())) channels.resize(static_cast<std::size_t>(std::max<Index>(fit, 1)));
  return channels;
}

std::vector<Index> ModelConfig::resolved_conv_channels() const {
  return conv_channels.empty() ? default_conv_channels(height, width) : conv_channels;
}

std::string ModelConfig::fingerprint() const {
  std::ostringstream os;
  os << "x" << channels << "x" << height << "x" << width << ";z" << latent_dim << ";f"
     << feature_dim << ";conv";
  for (Index c : resolved_conv_channels()) os << "-" << c;
  os << ";lstm" << lstm_hidden << ";H" << history << ";u" << control_dim << ";p" << param_dim
     << ";m" << inducing_points;
  return os.str();
}

void ModelConfig::validate() const {
  auto positive = [](Index v, const char* what) {
    if (v <= 0) throw ValidationError(std::string("model config: ") + what + " must be positive");
  };
  positive(channels, "channels");
  positive(height, "height");
  positive(width, "width");
  positive(latent_dim, "latent_dim");
  positive(feature_dim, "feature_dim");
  positive(lstm_hidden, "lstm_hidden");
  positive(history, "history");
  positive(inducing_points, "inducing_points");
  if (control_dim < 0 || param_dim < 0)
    throw ValidationError("model config: control_dim and param_dim must be >= 0");
  if (!(init_obs_noise > 0.0) || !(init_proc_noise > 0.0))
    throw ValidationError("model config: initial noise variances must be positive");
  for (Index c : resolved_conv_channels()) positive(c, "conv channel width");
  const auto sizes = conv_sizes(*this);
  const auto last = sizes[sizes.size() - 2];  // input of the last layer
  if (last.first < 2 || last.second < 2)
    throw ValidationError("model config: input of " + std::to_string(height) + "x" +
                          std::to_string(width) + " is too small for " +
                          std::to_string(resolved_conv_channels().size()) + " conv layers");
}

std::mt19937_64 derived_stream(std::uint64_t base, std::uint64_t key_a, std::uint64_t key_b) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(key_a), static_cast<std::uint32_t>(key_a >> 32),
                    static_cast<std::uint32_t>(key_b), static_cast<std::uint32_t>(key_b >> 32)};
  return std::mt19937_64(seq);
}

template <typename Scalar>
Matrix<Scalar> standard_normal(Index rows, Index cols, std::mt19937_64& rng) {
  return normal_init<Scalar>(rows, cols, rng);
}

// ---------------------------------------------------------------------------

template <typename Scalar>
GpHeads<Scalar>::GpHeads(const std::string& name, Index heads, Index n_ind, Index feature_dim,
                         std::mt19937_64& rng) {
  using ad::ParamGroup;
  constexpr auto gp = ParamGroup::kGaussianProcess;
  locations = ad::Parameter<Scalar>(name + ".locations", normal_init<Scalar>(n_ind, feature_dim, rng), gp);
  var_means = ad::Parameter<Scalar>(name + ".var_means", Matrix<Scalar>::Zero(n_ind, heads), gp);
  chol_raw = ad::Parameter<Scalar>(name + ".chol_raw", Matrix<Scalar>::Zero(heads * n_ind, n_ind), gp);
  log_signal = ad::Parameter<Scalar>(name + ".log_signal", Matrix<Scalar>::Zero(1, heads), gp);
  log_length = ad::Parameter<Scalar>(
      name + ".log_length",
      Matrix<Scalar>::Constant(1, heads, static_cast<Scalar>(0.5 * std::log(double(feature_dim)))), gp);
  reset_to_prior(locations.value, std::exp(log_length.value(0, 0)));
}

template <typename Scalar>
gp::SvgpInputs<Scalar> GpHeads<Scalar>::bind(ad::Tape<Scalar>& tape) {
  return {tape.parameter(locations), tape.parameter(var_means), tape.parameter(chol_raw),
          tape.parameter(log_signal), tape.parameter(log_length)};
}

template <typename Scalar>
gp::KernelParams<Scalar> GpHeads<Scalar>::kernel(Index head) const {
  return gp::KernelParams<Scalar>::make(std::exp(log_signal.value(0, head)),
                                        std::exp(log_length.value(0, head)));
}

template <typename Scalar>
gp::InducingState<Scalar> GpHeads<Scalar>::inducing(Index head) const {
  const Index m = inducing_points();
  gp::InducingState<Scalar> s;
  s.locations = locations.value;
  s.var_mean = var_means.value.col(head);
  s.var_cov_factor = gp::factor_from_raw<Scalar>(chol_raw.value.middleRows(head * m, m));
  return s;
}

template <typename Scalar>
void GpHeads<Scalar>::set_inducing(Index head, const gp::InducingState<Scalar>& state) {
  const Index m = inducing_points();
  if (state.size() != m || state.feature_dim() != locations.value.cols())
    throw ValidationError("set_inducing: state shape does not match the layer");
  state.validate();
  locations.value = state.locations;
  var_means.value.col(head) = state.var_mean;
  chol_raw.value.middleRows(head * m, m) = gp::raw_from_factor<Scalar>(state.var_cov_factor);
}

template <typename Scalar>
void GpHeads<Scalar>::reset_to_prior(const Matrix<Scalar>& features, Scalar length_scale) {
  if (features.rows() != inducing_points() || features.cols() != locations.value.cols())
    throw ValidationError("reset_to_prior: expected " + std::to_string(inducing_points()) + "x" +
                          std::to_string(locations.value.cols()) + " features");
  locations.value = features;
  log_length.value.setConstant(std::log(length_scale));
  for (Index h = 0; h < heads(); ++h) set_inducing(h, gp::InducingState<Scalar>::prior_matching(features, kernel(h)));
}

template <typename Scalar>
void GpHeads<Scalar>::collect(nn::ParamList<Scalar>& out) {
  out.push_back(&locations);
  out.push_back(&var_means);
  out.push_back(&chol_raw);
  out.push_back(&log_signal);
  out.push_back(&log_length);
}

// ---------------------------------------------------------------------------

template <typename Scalar>
EncoderModel<Scalar>::EncoderModel(const ModelConfig& cfg, std::mt19937_64& rng) {
  const auto widths = cfg.resolved_conv_channels();
  const auto sizes = conv_sizes(cfg);
  Index in_c = cfg.channels;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const auto g = ad::conv_geometry(in_c, widths[i], sizes[i].first, sizes[i].second, 4, 2, 1);
    convs.emplace_back("encoder.conv" + std::to_string(i), g, rng);
    in_c = widths[i];
  }
  to_features = nn::Linear<Scalar>("encoder.features", convs.back().geometry.out_size(),
                                   cfg.feature_dim, rng);
  heads = GpHeads<Scalar>("encoder.gp", cfg.latent_dim, cfg.inducing_points, cfg.feature_dim, rng);
  log_noise = ad::Parameter<Scalar>("encoder.log_noise",
                                    Matrix<Scalar>::Constant(1, 1, std::log(Scalar(cfg.init_obs_noise))),
                                    ad::ParamGroup::kGaussianProcess);
}

template <typename Scalar>
ad::Var<Scalar> EncoderModel<Scalar>::features(ad::Tape<Scalar>& tape, ad::Var<Scalar> x) {
  if (x.cols() != convs.front().geometry.in_size())
    throw ValidationError("encoder: expected measurements of size " +
                          std::to_string(convs.front().geometry.in_size()) + ", got " +
                          std::to_string(x.cols()));
  ad::Var<Scalar> h = x;
  for (auto& c : convs) h = ad::elu(nn::Conv2d<Scalar>::forward(c.bind(tape), h));
  return nn::Linear<Scalar>::forward(to_features.bind(tape), h);
}

template <typename Scalar>
BeliefVars<Scalar> EncoderModel<Scalar>::forward(ad::Tape<Scalar>& tape, ad::Var<Scalar> x) {
  auto out = gp::svgp_predict(features(tape, x), heads.bind(tape));
  return {out.mean, ad::add(out.variance, ad::exp(tape.parameter(log_noise)))};
}

template <typename Scalar>
Scalar EncoderModel<Scalar>::noise_variance() const {
  return std::exp(log_noise.value(0, 0));
}

template <typename Scalar>
void EncoderModel<Scalar>::collect(nn::ParamList<Scalar>& out) {
  for (auto& c : convs) c.collect(out);
  to_features.collect(out);
  heads.collect(out);
  out.push_back(&log_noise);
}

// ---------------------------------------------------------------------------

template <typename Scalar>
DecoderModel<Scalar>::DecoderModel(const ModelConfig& cfg, std::mt19937_64& rng) {
  const auto widths = cfg.resolved_conv_channels();
  const auto sizes = conv_sizes(cfg);
  const std::size_t layers = widths.size();
  seed_channels = widths.back();
  const auto [h0, w0] = sizes.back();
  from_latent = nn::Linear<Scalar>("decoder.seed", cfg.latent_dim, seed_channels * h0 * w0, rng);
  for (std::size_t i = 0; i < layers; ++i) {
    const std::size_t level = layers - i;  // spatial index of this layer's input
    const Index in_c = widths[level - 1];
    const Index out_c = level >= 2 ? widths[level - 2] : cfg.channels;
    const auto g = ad::conv_transpose_geometry(in_c, out_c, sizes[level].first, sizes[level].second,
                                               4, 2, 1, sizes[level - 1].first,
                                               sizes[level - 1].second);
    deconvs.emplace_back("decoder.deconv" + std::to_string(i), g, rng);
  }
}

template <typename Scalar>
ad::Var<Scalar> DecoderModel<Scalar>::forward(ad::Tape<Scalar>& tape, ad::Var<Scalar> z) {
  if (z.cols() != from_latent.in_features())
    throw ValidationError("decoder: expected latent width " + std::to_string(from_latent.in_features()) +
                          ", got " + std::to_string(z.cols()));
  ad::Var<Scalar> h = ad::elu(nn::Linear<Scalar>::forward(from_latent.bind(tape), z));
  for (std::size_t i = 0; i < deconvs.size(); ++i) {
    h = nn::ConvTranspose2d<Scalar>::forward(deconvs[i].bind(tape), h);
    h = i + 1 < deconvs.size() ? ad::elu(h) : ad::sigmoid(h);
  }
  return h;
}

template <typename Scalar>
void DecoderModel<Scalar>::collect(nn::ParamList<Scalar>& out) {
  from_latent.collect(out);
  for (auto& d : deconvs) d.collect(out);
}

// ---------------------------------------------------------------------------

template <typename Scalar>
DynamicsModel<Scalar>::DynamicsModel(const ModelConfig& cfg, std::mt19937_64& rng)
    : history(cfg.history), control_dim(cfg.control_dim), param_dim(cfg.param_dim) {
  lstm = nn::Lstm<Scalar>("dynamics.lstm", cfg.latent_dim + cfg.control_dim + cfg.param_dim,
                          cfg.lstm_hidden, rng);
  to_features = nn::Linear<Scalar>("dynamics.features", cfg.lstm_hidden, cfg.feature_dim, rng);
  heads = GpHeads<Scalar>("dynamics.gp", cfg.latent_dim, cfg.inducing_points, cfg.feature_dim, rng);
  log_noise = ad::Parameter<Scalar>("dynamics.log_noise",
                                    Matrix<Scalar>::Constant(1, 1, std::log(Scalar(cfg.init_proc_noise))),
                                    ad::ParamGroup::kGaussianProcess);
}

template <typename Scalar>
ad::Var<Scalar> DynamicsModel<Scalar>::features(ad::Tape<Scalar>& tape,
                                                const std::vector<ad::Var<Scalar>>& z_hist,
                                                const std::vector<ad::Var<Scalar>>& u_hist,
                                                ad::Var<Scalar> p) {
  if (static_cast<Index>(z_hist.size()) != history)
    throw ValidationError("dynamics: expected a history of " + std::to_string(history) + " steps, got " +
                          std::to_string(z_hist.size()));
  if (control_dim > 0 && u_hist.size() != z_hist.size())
    throw ValidationError("dynamics: control history length differs from latent history");
  if (param_dim > 0 && (!p.valid() || p.cols() != param_dim))
    throw ValidationError("dynamics: expected " + std::to_string(param_dim) + " system parameters");
  std::vector<ad::Var<Scalar>> steps;
  steps.reserve(z_hist.size());
  for (std::size_t s = 0; s < z_hist.size(); ++s) {
    std::vector<ad::Var<Scalar>> parts{z_hist[s]};
    if (control_dim > 0) {
      if (u_hist[s].cols() != control_dim) throw ValidationError("dynamics: control width mismatch");
      parts.push_back(u_hist[s]);
    }
    if (param_dim > 0) parts.push_back(p);
    steps.push_back(parts.size() == 1 ? parts.front() : ad::concat_cols(parts));
  }
  return nn::Linear<Scalar>::forward(to_features.bind(tape), lstm.forward(tape, steps));
}

template <typename Scalar>
BeliefVars<Scalar> DynamicsModel<Scalar>::forward(ad::Tape<Scalar>& tape,
                                                  const std::vector<ad::Var<Scalar>>& z_hist,
                                                  const std::vector<ad::Var<Scalar>>& u_hist,
                                                  ad::Var<Scalar> p) {
  auto out = gp::svgp_predict(features(tape, z_hist, u_hist, p), heads.bind(tape));
  return {out.mean, ad::add(out.variance, ad::exp(tape.parameter(log_noise)))};
}

template <typename Scalar>
Scalar DynamicsModel<Scalar>::noise_variance() const {
  return std::exp(log_noise.value(0, 0));
}

template <typename Scalar>
void DynamicsModel<Scalar>::collect(nn::ParamList<Scalar>& out) {
  lstm.collect(out);
  to_features.collect(out);
  heads.collect(out);
  out.push_back(&log_noise);
}

// ---------------------------------------------------------------------------

template <typename Scalar>
ModelBundle<Scalar>::ModelBundle(const ModelConfig& cfg) : config(cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  encoder = EncoderModel<Scalar>(cfg, rng);
  decoder = DecoderModel<Scalar>(cfg, rng);
  dynamics = DynamicsModel<Scalar>(cfg, rng);
}

template <typename Scalar>
nn::ParamList<Scalar> ModelBundle<Scalar>::parameters() {
  nn::ParamList<Scalar> out;
  encoder.collect(out);
  decoder.collect(out);
  dynamics.collect(out);
  return out;
}

template <typename Scalar>
std::vector<const ad::Parameter<Scalar>*> ModelBundle<Scalar>::parameters() const {
  auto list = const_cast<ModelBundle&>(*this).parameters();
  return {list.begin(), list.end()};
}

// ---------------------------------------------------------------------------
// Inference. The models' forward methods are non-const because training binds
// parameters for gradient accumulation; a non-tracking tape never touches them.

template <typename Scalar>
LatentBeliefs<Scalar> encode(const EncoderModel<Scalar>& model, const Matrix<Scalar>& x_batch) {
  auto& m = const_cast<EncoderModel<Scalar>&>(model);
  const Index z = model.heads.heads();
  LatentBeliefs<Scalar> out{Matrix<Scalar>(x_batch.rows(), z), Matrix<Scalar>(x_batch.rows(), z)};
  for (Index start = 0; start < x_batch.rows(); start += kInferenceChunk) {
    const Index n = std::min(kInferenceChunk, x_batch.rows() - start);
    ad::Tape<Scalar> tape(false);
    auto b = m.forward(tape, as_var<Scalar>(tape, x_batch.middleRows(start, n)));
    out.mean.middleRows(start, n) = b.mean.value();
    out.variance.middleRows(start, n) = b.variance.value();
  }
  return out;
}

template <typename Scalar>
Vector<Scalar> sample_latent(const LatentBelief<Scalar>& belief, std::mt19937_64& rng) {
  if (belief.mean.size() != belief.variance.size())
    throw ValidationError("sample_latent: mean and variance sizes differ");
  if ((belief.variance.array() < 0).any()) throw ValidationError("sample_latent: negative variance");
  const Matrix<Scalar> eps = standard_normal<Scalar>(1, belief.mean.size(), rng);
  return belief.mean + (belief.variance.array().sqrt() * eps.row(0).transpose().array()).matrix();
}

template <typename Scalar>
Matrix<Scalar> sample_latent(const LatentBeliefs<Scalar>& beliefs, std::mt19937_64& rng) {
  if ((beliefs.variance.array() < 0).any()) throw ValidationError("sample_latent: negative variance");
  const Matrix<Scalar> eps = standard_normal<Scalar>(beliefs.mean.rows(), beliefs.mean.cols(), rng);
  return beliefs.mean + (beliefs.variance.array().sqrt() * eps.array()).matrix();
}

template <typename Scalar>
Matrix<Scalar> decode(const DecoderModel<Scalar>& model, const Matrix<Scalar>& z) {
  auto& m = const_cast<DecoderModel<Scalar>&>(model);
  const Index dim = model.deconvs.back().geometry.out_size();
  Matrix<Scalar> out(z.rows(), dim);
  for (Index start = 0; start < z.rows(); start += kInferenceChunk) {
    const Index n = std::min(kInferenceChunk, z.rows() - start);
    ad::Tape<Scalar> tape(false);
    out.middleRows(start, n) = m.forward(tape, as_var<Scalar>(tape, z.middleRows(start, n))).value();
  }
  return out;
}

template <typename Scalar>
std::vector<Matrix<Scalar>> pad_history(const std::vector<Matrix<Scalar>>& hist, Index history) {
  if (hist.empty()) throw ValidationError("history is empty");
  if (static_cast<Index>(hist.size()) > history)
    throw ValidationError("history of " + std::to_string(hist.size()) + " steps exceeds H=" +
                          std::to_string(history));
  std::vector<Matrix<Scalar>> out(static_cast<std::size_t>(history) - hist.size(), hist.front());
  out.insert(out.end(), hist.begin(), hist.end());
  return out;
}

template <typename Scalar>
LatentBeliefs<Scalar> predict_next(const DynamicsModel<Scalar>& model,
                                   const std::vector<Matrix<Scalar>>& z_hist,
                                   const std::vector<Matrix<Scalar>>& u_hist,
                                   const Matrix<Scalar>& p) {
  auto& m = const_cast<DynamicsModel<Scalar>&>(model);
  const auto z_pad = pad_history(z_hist, model.history);
  const Index batch = z_pad.front().rows();
  for (const auto& z : z_pad)
    if (z.rows() != batch) throw ValidationError("predict_next: inconsistent batch size in history");
  ad::Tape<Scalar> tape(false);
  std::vector<ad::Var<Scalar>> zs, us;
  for (const auto& z : z_pad) zs.push_back(tape.constant(z));
  if (model.control_dim > 0) {
    if (u_hist.size() != z_hist.size())
      throw ValidationError("predict_next: control history length differs from latent history");
    for (const auto& u : pad_history(u_hist, model.history)) {
      if (u.rows() != batch) throw ValidationError("predict_next: inconsistent batch size in controls");
      us.push_back(tape.constant(u));
    }
  }
  ad::Var<Scalar> pv;
  if (model.param_dim > 0) {
    if (p.rows() != batch) throw ValidationError("predict_next: parameter rows differ from batch size");
    pv = tape.constant(p);
  }
  auto b = m.forward(tape, zs, us, pv);
  return {b.mean.value(), b.variance.value()};
}

template <typename Scalar>
RolloutResult<Scalar> rollout(const ModelBundle<Scalar>& bundle, const Matrix<Scalar>& x_init_hist,
                              const Matrix<Scalar>& history_controls,
                              const Matrix<Scalar>& controls, const Vector<Scalar>& p,
                              Index n_samples, std::uint64_t seed) {
  const auto& cfg = bundle.config;
  const Index h_in = x_init_hist.rows();
  const Index steps = controls.rows();
  if (h_in < 1) throw ValidationError("rollout: empty initial history");
  if (n_samples < 1) throw ValidationError("rollout: n_samples must be positive");
  if (cfg.control_dim > 0) {
    if (history_controls.rows() != h_in - 1 || history_controls.cols() != cfg.control_dim)
      throw ValidationError("rollout: expected " + std::to_string(h_in - 1) + " history controls of width " +
                            std::to_string(cfg.control_dim));
    if (controls.cols() != cfg.control_dim) throw ValidationError("rollout: control width mismatch");
  }
  if (p.size() != cfg.param_dim) throw ValidationError("rollout: system parameter size mismatch");

  const LatentBeliefs<Scalar> init = encode(bundle.encoder, x_init_hist);
  const Matrix<Scalar> p_row = p.transpose();
  std::vector<Matrix<Scalar>> u_all;  // control applied after each latent state
  for (Index i = 0; i + 1 < h_in; ++i) u_all.push_back(history_controls.row(i));
  for (Index k = 0; k < steps; ++k) u_all.push_back(controls.row(k));

  RolloutResult<Scalar> result;
  for (Index s = 0; s < n_samples; ++s) {
    auto rng = derived_stream(seed, static_cast<std::uint64_t>(s));
    std::vector<Matrix<Scalar>> z_all;
    for (Index i = 0; i < h_in; ++i) z_all.push_back(sample_latent(init.item(i), rng).transpose());
    std::vector<LatentBelief<Scalar>> beliefs;
    Matrix<Scalar> latents(steps, cfg.latent_dim);
    for (Index k = 0; k < steps; ++k) {
      const std::size_t end = z_all.size();
      const std::size_t begin = end - std::min<std::size_t>(end, static_cast<std::size_t>(cfg.history));
      std::vector<Matrix<Scalar>> z_win(z_all.begin() + begin, z_all.end());
      std::vector<Matrix<Scalar>> u_win;
      if (cfg.control_dim > 0) u_win.assign(u_all.begin() + begin, u_all.begin() + end);
      const auto next = predict_next(bundle.dynamics, z_win, u_win, p_row);
      beliefs.push_back(next.item(0));
      latents.row(k) = sample_latent(next.item(0), rng).transpose();
      z_all.push_back(latents.row(k));
    }
    result.beliefs.push_back(std::move(beliefs));
    result.decoded.push_back(steps > 0 ? decode(bundle.decoder, latents)
                                       : Matrix<Scalar>(0, cfg.measurement_dim()));
  }
  return result;
}

#define DKLROM_INSTANTIATE_MODELS(S)                                                              \
  template Matrix<S> standard_normal<S>(Index, Index, std::mt19937_64&);                          \
  template struct GpHeads<S>;                                                                     \
  template struct EncoderModel<S>;                                                                \
  template struct DecoderModel<S>;                                                                \
  template struct DynamicsModel<S>;                                                               \
  template struct ModelBundle<S>;                                                                 \
  template LatentBeliefs<S> encode<S>(const EncoderModel<S>&, const Matrix<S>&);                  \
  template Vector<S> sample_latent<S>(const LatentBelief<S>&, std::mt19937_64&);                  \
  template Matrix<S> sample_latent<S>(const LatentBeliefs<S>&, std::mt19937_64&);                 \
  template Matrix<S> decode<S>(const DecoderModel<S>&, const Matrix<S>&);                         \
  template std::vector<Matrix<S>> pad_history<S>(const std::vector<Matrix<S>>&, Index);           \
  template LatentBeliefs<S> predict_next<S>(const DynamicsModel<S>&, const std::vector<Matrix<S>>&, \
                                            const std::vector<Matrix<S>>&, const Matrix<S>&);     \
  template RolloutResult<S> rollout<S>(const ModelBundle<S>&, const Matrix<S>&, const Matrix<S>&, \
                                       const Matrix<S>&, const Vector<S>&, Index, std::uint64_t);

DKLROM_INSTANTIATE_MODELS(float)
DKLROM_INSTANTIATE_MODELS(double)

}  // namespace dklrom
