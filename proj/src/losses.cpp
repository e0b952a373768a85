#include "dklrom/losses.hpp"

#include "dklrom/errors.hpp"

#include <cmath>
#include <numbers>

namespace dklrom {

void LossWeights::validate() const {
  if (!(w_reg >= 0.0) || !(w_var >= 0.0) || !std::isfinite(w_reg) || !std::isfinite(w_var))
    throw ConfigError("loss weights must be finite and >= 0");
  if (horizon < 1) throw ConfigError("loss horizon T must be >= 1");
}

template <typename Scalar>
WindowBatch<Scalar> make_batch(const std::vector<SequenceWindow>& windows) {
  if (windows.empty()) throw ValidationError("make_batch: no windows");
  const auto& w0 = windows.front();
  const Index b = static_cast<Index>(windows.size());
  const Index len = w0.x_seq.rows();
  WindowBatch<Scalar> out;
  out.frames.assign(static_cast<std::size_t>(len), Matrix<Scalar>(b, w0.x_seq.cols()));
  out.controls.assign(static_cast<std::size_t>(std::max<Index>(len - 1, 0)), Matrix<Scalar>(b, w0.u_seq.cols()));
  out.params = Matrix<Scalar>(b, w0.p.size());
  for (Index i = 0; i < b; ++i) {
    const auto& w = windows[static_cast<std::size_t>(i)];
    if (w.x_seq.rows() != len || w.x_seq.cols() != w0.x_seq.cols() || w.u_seq.rows() != len - 1 ||
        w.u_seq.cols() != w0.u_seq.cols() || w.p.size() != w0.p.size())
      throw ValidationError("make_batch: windows differ in shape");
    for (Index l = 0; l < len; ++l) out.frames[static_cast<std::size_t>(l)].row(i) = w.x_seq.row(l).cast<Scalar>();
    for (Index l = 0; l + 1 < len; ++l)
      out.controls[static_cast<std::size_t>(l)].row(i) = w.u_seq.row(l).cast<Scalar>();
    out.params.row(i) = w.p.transpose().cast<Scalar>();
    out.keys.push_back(w.key());
  }
  return out;
}

template <typename Scalar>
LossNoise<Scalar> draw_loss_noise(const WindowBatch<Scalar>& batch, Index history, Index horizon,
                                  Index latent_dim, std::uint64_t base_seed) {
  const Index b = batch.size();
  const Index len = history + horizon;
  LossNoise<Scalar> noise;
  noise.frame.assign(static_cast<std::size_t>(len), Matrix<Scalar>(b, latent_dim));
  noise.step.assign(static_cast<std::size_t>(horizon), Matrix<Scalar>(b, latent_dim));
  for (Index i = 0; i < b; ++i) {
    auto rng = derived_stream(base_seed, batch.keys[static_cast<std::size_t>(i)]);
    const Matrix<Scalar> f = standard_normal<Scalar>(len, latent_dim, rng);
    const Matrix<Scalar> s = standard_normal<Scalar>(horizon, latent_dim, rng);
    for (Index l = 0; l < len; ++l) noise.frame[static_cast<std::size_t>(l)].row(i) = f.row(l);
    for (Index t = 0; t < horizon; ++t) noise.step[static_cast<std::size_t>(t)].row(i) = s.row(t);
  }
  return noise;
}

namespace {

template <typename Scalar>
void check_batch(const ModelBundle<Scalar>& bundle, const WindowBatch<Scalar>& batch, const LossWeights& weights) {
  weights.validate();
  const auto& cfg = bundle.config;
  const Index need = cfg.history + weights.horizon;
  if (batch.size() < 1) throw ValidationError("loss: empty batch");
  if (batch.length() < need)
    throw ConfigError("loss: window length " + std::to_string(batch.length()) + " is shorter than H+T=" +
                      std::to_string(need));
  if (static_cast<Index>(batch.controls.size()) < need - 1) throw ValidationError("loss: too few control steps");
  if (static_cast<Index>(batch.keys.size()) != batch.size()) throw ValidationError("loss: one key per item needed");
  if (batch.params.cols() != cfg.param_dim) throw ValidationError("loss: params width != |p|");
  for (Index l = 0; l < need; ++l) {
    const auto& f = batch.frames[static_cast<std::size_t>(l)];
    if (f.rows() != batch.size() || f.cols() != cfg.measurement_dim())
      throw ValidationError("loss: frame " + std::to_string(l) + " is not B x |x|");
  }
  for (Index l = 0; l + 1 < need; ++l) {
    const auto& u = batch.controls[static_cast<std::size_t>(l)];
    if (u.rows() != batch.size() || u.cols() != cfg.control_dim)
      throw ValidationError("loss: control step " + std::to_string(l) + " is not B x |u|");
  }
}

template <typename Scalar>
void check_noise(const LossNoise<Scalar>& noise, Index b, Index z, Index history, Index horizon) {
  bool ok = static_cast<Index>(noise.frame.size()) == history + horizon &&
            static_cast<Index>(noise.step.size()) == horizon;
  for (const auto& m : noise.frame) ok = ok && m.rows() == b && m.cols() == z;
  for (const auto& m : noise.step) ok = ok && m.rows() == b && m.cols() == z;
  if (!ok) throw ValidationError("loss: noise does not match batch, |z|, H or T");
}

template <typename Scalar>
ad::Var<Scalar> reparameterise(ad::Tape<Scalar>& tape, const BeliefVars<Scalar>& belief, const Matrix<Scalar>& eps) {
  return ad::add(belief.mean, ad::mul(ad::sqrt(belief.variance), tape.constant(eps)));
}

template <typename Scalar>
ModelBundle<Scalar>& mutable_bundle(const ModelBundle<Scalar>& bundle) {
  // Evaluation only runs on a non-tracking tape, so nothing is written back.
  return const_cast<ModelBundle<Scalar>&>(bundle);
}

}  // namespace

template <typename Scalar>
LossTerms<Scalar> loss_terms(ad::Tape<Scalar>& tape, ModelBundle<Scalar>& bundle,
                             const WindowBatch<Scalar>& batch, const LossWeights& weights,
                             const LossNoise<Scalar>& noise) {
  check_batch(bundle, batch, weights);
  const auto& cfg = bundle.config;
  const Index h = cfg.history, t_steps = weights.horizon, len = h + t_steps;
  const Index b = batch.size();
  check_noise(noise, b, cfg.latent_dim, h, t_steps);

  // Every frame of every window in one encoder pass, time-major rows.
  std::vector<ad::Var<Scalar>> frames, eps;
  for (Index l = 0; l < len; ++l) {
    frames.push_back(tape.constant(batch.frames[static_cast<std::size_t>(l)]));
    eps.push_back(tape.constant(noise.frame[static_cast<std::size_t>(l)]));
  }
  const auto x_all = ad::concat_rows(frames);
  const auto enc = bundle.encoder.forward(tape, x_all);
  const auto z_all = ad::add(enc.mean, ad::mul(ad::sqrt(enc.variance), ad::concat_rows(eps)));
  const auto x_rec = bundle.decoder.forward(tape, z_all);

  const double log_2pi = std::log(2.0 * std::numbers::pi);
  const auto half_const = static_cast<Scalar>(0.5 * static_cast<double>(cfg.measurement_dim()) * log_2pi);
  LossTerms<Scalar> out;
  out.recon = ad::add(ad::scale(ad::sum(ad::square(ad::sub(x_all, x_rec))), static_cast<Scalar>(0.5 / (len * b))),
                      tape.constant(Matrix<Scalar>::Constant(1, 1, half_const)));

  std::vector<ad::Var<Scalar>> z_hist;
  for (Index l = 0; l < h; ++l) z_hist.push_back(ad::slice_rows(z_all, l * b, b));
  const auto p = tape.constant(batch.params);

  std::vector<ad::Var<Scalar>> kls, predicted, targets;
  for (Index i = 1; i <= t_steps; ++i) {
    // Step i predicts frame h+i-1 from the h latents at indices i-1 .. h+i-2.
    std::vector<ad::Var<Scalar>> u_hist;
    for (Index j = i - 1; j <= h + i - 2; ++j) u_hist.push_back(tape.constant(batch.controls[static_cast<std::size_t>(j)]));
    const auto dyn = bundle.dynamics.forward(tape, z_hist, u_hist, p);
    const Index target = h + i - 1;
    const BeliefVars<Scalar> enc_t{ad::slice_rows(enc.mean, target * b, b), ad::slice_rows(enc.variance, target * b, b)};
    kls.push_back(ad::mean(ad::gaussian_kl_rows(enc_t.mean, enc_t.variance, dyn.mean, dyn.variance)));
    const auto z_hat = reparameterise(tape, dyn, noise.step[static_cast<std::size_t>(i - 1)]);
    predicted.push_back(z_hat);
    targets.push_back(frames[static_cast<std::size_t>(target)]);
    z_hist.erase(z_hist.begin());
    z_hist.push_back(z_hat);
  }
  auto reg_sum = kls.front();
  for (std::size_t k = 1; k < kls.size(); ++k) reg_sum = ad::add(reg_sum, kls[k]);
  out.reg = ad::scale(reg_sum, static_cast<Scalar>(1.0 / t_steps));

  const auto x_next = bundle.decoder.forward(tape, ad::concat_rows(predicted));
  out.recon_next = ad::scale(ad::sum(ad::square(ad::sub(ad::concat_rows(targets), x_next))),
                             static_cast<Scalar>(1.0 / (t_steps * b)));

  out.vi = ad::add(gp::svgp_kl(bundle.encoder.heads.bind(tape)), gp::svgp_kl(bundle.dynamics.heads.bind(tape)));

  out.total = ad::add(ad::add(out.recon, ad::scale(out.reg, static_cast<Scalar>(weights.w_reg))),
                      ad::add(out.recon_next, ad::scale(out.vi, static_cast<Scalar>(weights.w_var))));
  return out;
}

template <typename Scalar>
LossBreakdown evaluate_terms(const LossTerms<Scalar>& terms, const LossWeights& weights) {
  LossBreakdown r;
  r.recon = static_cast<double>(terms.recon.scalar());
  r.reg = static_cast<double>(terms.reg.scalar());
  r.recon_next = static_cast<double>(terms.recon_next.scalar());
  r.vi = static_cast<double>(terms.vi.scalar());
  r.total = r.recon + weights.w_reg * r.reg + r.recon_next + weights.w_var * r.vi;
  return r;
}

template <typename Scalar>
LossBreakdown total_loss(const ModelBundle<Scalar>& bundle, const WindowBatch<Scalar>& batch,
                         const LossWeights& weights, const LossNoise<Scalar>& noise) {
  ad::Tape<Scalar> tape(false);
  return evaluate_terms(loss_terms(tape, mutable_bundle(bundle), batch, weights, noise), weights);
}

template <typename Scalar>
LossBreakdown total_loss(const ModelBundle<Scalar>& bundle, const WindowBatch<Scalar>& batch,
                         const LossWeights& weights, std::mt19937_64& rng) {
  const std::uint64_t base = rng();
  check_batch(bundle, batch, weights);
  const auto noise = draw_loss_noise(batch, bundle.config.history, weights.horizon, bundle.config.latent_dim, base);
  return total_loss(bundle, batch, weights, noise);
}

template <typename Scalar>
double recon_loss(const ModelBundle<Scalar>& bundle, const Matrix<Scalar>& x_batch, std::mt19937_64& rng) {
  const auto& cfg = bundle.config;
  if (x_batch.rows() < 1 || x_batch.cols() != cfg.measurement_dim())
    throw ValidationError("recon_loss: x_batch must be B x |x| with B >= 1");
  auto& m = mutable_bundle(bundle);
  ad::Tape<Scalar> tape(false);
  const auto x = tape.constant(x_batch);
  const auto enc = m.encoder.forward(tape, x);
  const auto z = reparameterise(tape, enc, standard_normal<Scalar>(x_batch.rows(), cfg.latent_dim, rng));
  const auto r = ad::sub(x, m.decoder.forward(tape, z));
  const double sq = static_cast<double>(ad::sum(ad::square(r)).scalar());
  return 0.5 * sq / static_cast<double>(x_batch.rows()) +
         0.5 * static_cast<double>(cfg.measurement_dim()) * std::log(2.0 * std::numbers::pi);
}

template <typename Scalar>
double recon_loss(const ModelBundle<Scalar>& bundle, const WindowBatch<Scalar>& batch,
                  const LossWeights& weights, std::mt19937_64& rng) {
  return total_loss(bundle, batch, weights, rng).recon;
}

template <typename Scalar>
double reg_loss_multistep(const ModelBundle<Scalar>& bundle, const WindowBatch<Scalar>& batch,
                          const LossWeights& weights, std::mt19937_64& rng) {
  return total_loss(bundle, batch, weights, rng).reg;
}

template <typename Scalar>
double recon_next_multistep(const ModelBundle<Scalar>& bundle, const WindowBatch<Scalar>& batch,
                            const LossWeights& weights, std::mt19937_64& rng) {
  return total_loss(bundle, batch, weights, rng).recon_next;
}

template <typename Scalar>
double vi_loss(const ModelBundle<Scalar>& bundle) {
  auto& m = mutable_bundle(bundle);
  ad::Tape<Scalar> tape(false);
  const auto kl = ad::add(gp::svgp_kl(m.encoder.heads.bind(tape)), gp::svgp_kl(m.dynamics.heads.bind(tape)));
  return static_cast<double>(kl.scalar());
}

#define DKLROM_INSTANTIATE_LOSSES(S)                                                                           \
  template WindowBatch<S> make_batch<S>(const std::vector<SequenceWindow>&);                                   \
  template LossNoise<S> draw_loss_noise<S>(const WindowBatch<S>&, Index, Index, Index, std::uint64_t);         \
  template LossTerms<S> loss_terms<S>(ad::Tape<S>&, ModelBundle<S>&, const WindowBatch<S>&, const LossWeights&, \
                                      const LossNoise<S>&);                                                    \
  template LossBreakdown evaluate_terms<S>(const LossTerms<S>&, const LossWeights&);                          \
  template LossBreakdown total_loss<S>(const ModelBundle<S>&, const WindowBatch<S>&, const LossWeights&,      \
                                       std::mt19937_64&);                                                      \
  template LossBreakdown total_loss<S>(const ModelBundle<S>&, const WindowBatch<S>&, const LossWeights&,      \
                                       const LossNoise<S>&);                                                   \
  template double recon_loss<S>(const ModelBundle<S>&, const Matrix<S>&, std::mt19937_64&);                    \
  template double recon_loss<S>(const ModelBundle<S>&, const WindowBatch<S>&, const LossWeights&,             \
                                std::mt19937_64&);                                                             \
  template double reg_loss_multistep<S>(const ModelBundle<S>&, const WindowBatch<S>&, const LossWeights&,     \
                                        std::mt19937_64&);                                                     \
  template double recon_next_multistep<S>(const ModelBundle<S>&, const WindowBatch<S>&, const LossWeights&,   \
                                          std::mt19937_64&);                                                   \
  template double vi_loss<S>(const ModelBundle<S>&);

DKLROM_INSTANTIATE_LOSSES(float)
DKLROM_INSTANTIATE_LOSSES(double)

}  // namespace dklrom
