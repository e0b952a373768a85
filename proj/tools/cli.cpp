#include "cli.hpp"

#include "dklrom/checkpoint.hpp"
#include "dklrom/config.hpp"
#include "dklrom/errors.hpp"
#include "dklrom/evaluation.hpp"
#include "dklrom/simulators.hpp"
#include "dklrom/training.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>

namespace dklrom::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

fs::path output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? fs::path(env) : fs::path("runs");
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Written once, before the command does any real work.
void write_manifest(const fs::path& out, const std::string& command, const std::vector<std::string>& args,
                    const json& config, const json& seeds, const json& inputs, const json& outputs) {
  fs::create_directories(out);
  json m = {{"command", command}, {"args", args},       {"config", config},
            {"seeds", seeds},     {"inputs", inputs},   {"outputs", outputs},
            {"version", kVersion}, {"started_at", utc_now()}};
  write_json_file(out / "run_manifest.json", m);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// Options every subcommand shares.
struct Common {
  std::string config;
  std::string preset;
  std::uint64_t seed = 0;
  std::string out;
  bool dry_run = false;
  CLI::Option* seed_opt = nullptr;

  void add(CLI::App* app) {
    app->add_option("--config", config, "JSON config file; flags override its values")->check(CLI::ExistingFile);
    app->add_option("--preset", preset, "named preset applied before the config file")
        ->check(CLI::IsMember(preset_names()));
    seed_opt = app->add_option("--seed", seed, "base random seed");
    app->add_option("--out", out, std::string("output directory (default under $") + kOutputRootEnv + " or runs/)");
    app->add_flag("--dry-run", dry_run, "resolve and validate the configuration, then exit");
  }

  bool seed_set() const { return seed_opt && seed_opt->count() > 0; }

  // preset, then config file
  RunPreset resolve(bool& explicit_model) const {
    RunPreset p;
    json file;
    if (!config.empty()) file = read_json_file(config);
    std::string name = preset;
    if (name.empty() && file.is_object() && file.contains("preset")) {
      if (!file["preset"].is_string()) throw ConfigError("config key 'preset' must be a string");
      name = file["preset"].get<std::string>();
    }
    if (!name.empty()) p = dklrom::preset(name);
    if (!file.is_null()) merge(p, file);
    explicit_model = !name.empty() || (file.is_object() && file.contains("train") && file["train"].is_object() &&
                                       file["train"].contains("model"));
    return p;
  }

  fs::path out_dir(const std::string& kind, const std::string& system, std::uint64_t s) const {
    if (!out.empty()) return out;
    return output_root() / (kind + "-" + system + "-s" + std::to_string(s));
  }
};

// Training flags shared by train and gridsearch.
struct TrainFlags {
  CLI::Option *latent = nullptr, *history = nullptr, *horizon = nullptr, *noise = nullptr, *steps = nullptr,
              *batch = nullptr, *lr = nullptr, *lr_gp = nullptr, *w_reg = nullptr, *w_var = nullptr,
              *eval_interval = nullptr, *warmup = nullptr;
  Index latent_v = 0, history_v = 0, horizon_v = 0, steps_v = 0, batch_v = 0, eval_interval_v = 0, warmup_v = 0;
  double noise_v = 0, lr_v = 0, lr_gp_v = 0, w_reg_v = 0, w_var_v = 0;
  bool deterministic = false;

  void add(CLI::App* app, bool weights) {
    latent = app->add_option("--latent-dim", latent_v, "latent dimension |z|");
    history = app->add_option("--history", history_v, "history length H (1 = no recurrence over history)");
    horizon = app->add_option("--t-steps", horizon_v, "multi-step horizon T");
    noise = app->add_option("--noise", noise_v, "measurement noise variance sigma^2 on training windows");
    steps = app->add_option("--steps", steps_v, "optimiser steps");
    batch = app->add_option("--batch", batch_v, "windows per minibatch");
    lr = app->add_option("--lr", lr_v, "network learning rate");
    lr_gp = app->add_option("--lr-gp", lr_gp_v, "GP hyperparameter learning rate");
    eval_interval = app->add_option("--eval-interval", eval_interval_v, "steps between evaluations (0 = none)");
    warmup = app->add_option("--warmup", warmup_v, "steps over which w_reg and w_var ramp up from 0");
    if (weights) {
      w_reg = app->add_option("--w-reg", w_reg_v, "regularisation weight");
      w_var = app->add_option("--w-var", w_var_v, "variational weight");
    }
    app->add_flag("--deterministic", deterministic, "single-threaded, bit-reproducible linear algebra");
  }

  void apply(TrainConfig& c) const {
    if (*latent) c.model.latent_dim = latent_v;
    if (*history) c.model.history = history_v;
    if (*horizon) c.weights.horizon = horizon_v;
    if (*noise) c.noise_sigma2 = noise_v;
    if (*steps) c.max_steps = steps_v;
    if (*batch) c.batch_size = batch_v;
    if (*lr) c.lr_network = lr_v;
    if (*lr_gp) c.lr_gp = lr_gp_v;
    if (*eval_interval) c.eval_interval = eval_interval_v;
    if (*warmup) c.warmup_steps = warmup_v;
    if (w_reg && *w_reg) c.weights.w_reg = w_reg_v;
    if (w_var && *w_var) c.weights.w_var = w_var_v;
    if (deterministic) c.deterministic = true;
  }
};

TrajectoryDataset load_data(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("--") + what + " is required");
  if (!fs::is_directory(path)) throw UsageError(std::string(what) + " directory not found: " + path);
  return load_dataset(path);
}

// The training config for a dataset: without an explicit preset or model
// section the model takes the dataset's shapes.
TrainConfig training_config(const Common& common, const TrainFlags& flags, const TrajectoryDataset& ds) {
  bool explicit_model = false;
  const RunPreset p = common.resolve(explicit_model);
  TrainConfig cfg = p.train;
  if (!explicit_model) {
    cfg.model.channels = ds.channels;
    cfg.model.height = ds.height;
    cfg.model.width = ds.width;
    cfg.model.control_dim = ds.control_dim;
    cfg.model.param_dim = ds.param_dim;
    cfg.model.conv_channels.clear();
  }
  cfg.system = ds.system;
  flags.apply(cfg);
  if (common.seed_set()) cfg.seed = cfg.model.seed = common.seed;
  cfg.validate();
  cfg.check_dataset(ds);
  return cfg;
}

void write_train_log(const fs::path& out, const TrainLog& log) {
  std::ofstream steps(out / "train_log.csv");
  steps << "step,total,recon,reg,recon_next,vi,grad_norm,seconds\n";
  for (const auto& s : log.steps)
    steps << s.step << "," << fmt(s.loss.total) << "," << fmt(s.loss.recon) << "," << fmt(s.loss.reg) << ","
          << fmt(s.loss.recon_next) << "," << fmt(s.loss.vi) << "," << fmt(s.grad_norm) << "," << fmt(s.seconds)
          << "\n";
  std::ofstream evals(out / "evals.csv");
  evals << "step,total,recon,reg,recon_next,vi\n";
  for (const auto& e : log.evals)
    evals << e.step << "," << fmt(e.loss.total) << "," << fmt(e.loss.recon) << "," << fmt(e.loss.reg) << ","
          << fmt(e.loss.recon_next) << "," << fmt(e.loss.vi) << "\n";
}

json breakdown_json(const LossBreakdown& b) {
  return {{"total", b.total}, {"recon", b.recon}, {"reg", b.reg}, {"recon_next", b.recon_next}, {"vi", b.vi}};
}

// ---------------------------------------------------------------------------

struct GenerateCmd {
  Common common;
  std::string system;
  Index m = 0, n = 0, image_size = 0, grid = 0;
  double beta_min = 0.5, beta_max = 1.5;
  CLI::Option *m_opt, *n_opt, *image_opt, *grid_opt, *bmin_opt, *bmax_opt;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("generate", "simulate a trajectory dataset");
    common.add(sub);
    sub->add_option("--system", system, "pendulum or reaction_diffusion");
    m_opt = sub->add_option("--m", m, "number of trajectories");
    n_opt = sub->add_option("--n", n, "frames per trajectory");
    image_opt = sub->add_option("--image-size", image_size, "pendulum render size in pixels");
    grid_opt = sub->add_option("--grid", grid, "reaction-diffusion grid points per side");
    bmin_opt = sub->add_option("--beta-min", beta_min, "lower end of the reaction-diffusion beta range");
    bmax_opt = sub->add_option("--beta-max", beta_max, "upper end of the reaction-diffusion beta range");
  }

  int run(const std::vector<std::string>& args, std::ostream& out) {
    bool explicit_model = false;
    RunPreset p = common.resolve(explicit_model);
    std::string name = system.empty() ? (common.preset.empty() && common.config.empty() ? "" : p.train.system)
                                      : system;
    if (name.empty()) throw UsageError("--system is required (pendulum or reaction_diffusion)");
    const sim::System sys = sim::parse_system(name);
    if (*m_opt) p.trajectories = m;
    if (*n_opt) p.steps = n;
    if (*image_opt) p.generation.pendulum.image_size = image_size;
    if (*grid_opt) p.generation.rd.grid_n = grid;
    if (*bmin_opt) p.generation.beta_min = beta_min;
    if (*bmax_opt) p.generation.beta_max = beta_max;
    if (p.trajectories < 1) throw UsageError("--m must be given and positive");
    if (p.steps < 2) throw UsageError("--n must be given and at least 2");
    if (!(p.generation.beta_min > 0.0) || !(p.generation.beta_min <= p.generation.beta_max))
      throw ConfigError("beta range must satisfy 0 < beta_min <= beta_max");
    p.generation.pendulum.validate();
    p.generation.rd.validate();
    const std::uint64_t seed = common.seed_set() ? common.seed : p.train.seed;
    const fs::path dir = common.out_dir("data", sim::system_name(sys), seed);
    const json config = {{"system", sim::system_name(sys)},
                         {"trajectories", p.trajectories},
                         {"steps", p.steps},
                         {"generation", to_json(p.generation)}};
    if (common.dry_run) {
      out << config.dump(2) << "\n";
      return 0;
    }
    write_manifest(dir, "generate", args, config, {{"seed", seed}}, json::object(), {{"dataset", dir.string()}});
    const auto ds = sim::generate_dataset(sys, p.trajectories, p.steps, p.generation, seed);
    save_dataset(ds, dir);
    out << "wrote " << ds.trajectories() << " x " << ds.steps() << " " << ds.system << " frames to " << dir.string()
        << "\n";
    return 0;
  }
};

struct TrainCmd {
  Common common;
  TrainFlags flags;
  std::string data, validation;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("train", "train a model on a dataset");
    common.add(sub);
    flags.add(sub, true);
    sub->add_option("--data", data, "dataset directory");
    sub->add_option("--validation", validation, "held-out dataset directory for periodic evaluation");
  }

  int run(const std::vector<std::string>& args, std::ostream& out) {
    const auto ds = load_data(data, "data");
    std::optional<TrajectoryDataset> val;
    if (!validation.empty()) val = load_data(validation, "validation");
    TrainConfig cfg = training_config(common, flags, ds);
    const fs::path dir = common.out_dir("train", ds.system, cfg.seed);
    if (cfg.eval_interval > 0) cfg.checkpoint_dir = dir / "checkpoint";
    if (common.dry_run) {
      out << to_json(cfg).dump(2) << "\n";
      return 0;
    }
    json inputs = {{"data", data}};
    if (val) inputs["validation"] = validation;
    write_manifest(dir, "train", args, to_json(cfg), {{"seed", cfg.seed}, {"model_seed", cfg.model.seed}}, inputs,
                   {{"checkpoint", (dir / "checkpoint").string()}, {"log", (dir / "train_log.csv").string()}});
    const Index every = std::max<Index>(1, cfg.max_steps / 20);
    auto result = train(cfg, ds, val ? &*val : nullptr, [&](const TrainStep& s) {
      if ((s.step + 1) % every == 0 || s.step + 1 == cfg.max_steps)
        out << "step " << s.step + 1 << "/" << cfg.max_steps << "  loss " << fmt(s.loss.total) << "  recon "
            << fmt(s.loss.recon) << "  grad " << fmt(s.grad_norm) << "  " << fmt(s.seconds) << " s\n"
            << std::flush;
    });
    save_checkpoint(result.bundle, dir / "checkpoint", cfg);
    write_train_log(dir, result.log);
    const auto& held = val ? *val : ds;
    const auto final_loss = held_out_loss(result.bundle, held, cfg, cfg.eval_batches, cfg.seed);
    write_json_file(dir / "final_metrics.json", {{"steps", cfg.max_steps},
                                                  {"wall_seconds", result.log.wall_seconds},
                                                  {"held_out", breakdown_json(final_loss)},
                                                  {"held_out_source", val ? "validation" : "train"}});
    out << "checkpoint written to " << (dir / "checkpoint").string() << "\n";
    return 0;
  }
};

struct EvalCmd {
  Common common;
  std::vector<std::string> checkpoints;
  std::string data;
  std::vector<double> noise{0.0, 0.0625, 0.25};
  Index rollout_steps = 60, n_rollouts = 30, trajectory = 0, tsne_points = 600;
  double perplexity = 30.0;
  bool no_tsne = false, summed = false;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("eval", "evaluate checkpoints on a test dataset");
    common.add(sub);
    sub->add_option("--checkpoint", checkpoints, "checkpoint directory (repeat to compare several)");
    sub->add_option("--data", data, "clean test dataset directory");
    sub->add_option("--noise", noise, "input noise variance (repeatable)")->capture_default_str();
    sub->add_option("--rollout-steps", rollout_steps, "predicted steps K")->capture_default_str();
    sub->add_option("--n-rollouts", n_rollouts, "rollouts per uncertainty map")->capture_default_str();
    sub->add_option("--trajectory", trajectory, "test trajectory used for rollouts")->capture_default_str();
    sub->add_option("--tsne-points", tsne_points, "latent states in the projection")->capture_default_str();
    sub->add_option("--perplexity", perplexity, "t-SNE perplexity")->capture_default_str();
    sub->add_flag("--no-tsne", no_tsne, "skip the latent projection");
    sub->add_flag("--psnr-summed", summed, "PSNR over the summed instead of mean squared error");
  }

  int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    if (checkpoints.empty()) throw UsageError("--checkpoint is required");
    const auto ds = load_data(data, "data");
    std::vector<Checkpoint> loaded;
    for (const auto& c : checkpoints) {
      if (!fs::is_directory(c)) throw UsageError("checkpoint directory not found: " + c);
      loaded.push_back(load_checkpoint(c));
      const auto& m = loaded.back().bundle.config;
      if (m.channels != ds.channels || m.height != ds.height || m.width != ds.width ||
          m.control_dim != ds.control_dim || m.param_dim != ds.param_dim)
        throw ConfigError("checkpoint " + c + " (" + m.fingerprint() + ") does not fit the dataset shapes");
    }
    for (double s : noise)
      if (!(s >= 0.0)) throw UsageError("--noise values must be >= 0");
    if (trajectory < 0 || trajectory >= ds.trajectories()) throw UsageError("--trajectory out of range");
    if (n_rollouts < 2) throw UsageError("--n-rollouts must be >= 2");
    const std::uint64_t seed = common.seed;
    const fs::path dir = common.out_dir("eval", ds.system, seed);
    const auto& first = loaded.front().bundle;
    const Index k_max = ds.steps() - first.config.history;
    const Index k = std::min(rollout_steps, k_max);
    json config = {{"noise", noise},          {"rollout_steps", k},   {"n_rollouts", n_rollouts},
                   {"trajectory", trajectory}, {"tsne", !no_tsne},     {"tsne_points", tsne_points},
                   {"perplexity", perplexity}, {"psnr_summed", summed}};
    if (common.dry_run) {
      out << config.dump(2) << "\n";
      return 0;
    }
    if (k < rollout_steps)
      err << "note: trajectories hold " << ds.steps() << " frames, rollouts shortened to " << k << " steps\n";
    write_manifest(dir, "eval", args, config, {{"seed", seed}}, {{"checkpoints", checkpoints}, {"data", data}},
                   {{"report", dir.string()}});

    json summary = {{"checkpoints", checkpoints}, {"data", data}, {"system", ds.system}};

    std::vector<EvalModel> models;
    for (const auto& c : loaded)
      models.push_back({&c.bundle, c.train ? c.train->weights.horizon : 0});
    ReconstructionOptions ro;
    ro.seed = seed;
    ro.psnr_summed = summed;
    const auto rows = evaluate_reconstruction(models, ds, noise, ro);
    write_metrics_csv(dir / "metrics.csv", rows);
    summary["metrics"] = json::array();
    for (const auto& r : rows) summary["metrics"].push_back(to_json(r));
    out << "metrics: " << (dir / "metrics.csv").string() << "\n";

    std::ofstream curves(dir / "rollout_curves.csv");
    curves << "noise,step,l1,psnr_db\n";
    summary["rollouts"] = json::array();
    for (std::size_t i = 0; i < noise.size(); ++i) {
      const auto cmp = rollout_compare(first, ds, trajectory, noise[i], k, seed);
      const std::string file = "rollout_noise" + std::to_string(i) + ".png";
      img::write_png(dir / file, cmp.strip);
      for (Index s = 0; s < cmp.l1.size(); ++s)
        curves << fmt(noise[i]) << "," << s + 1 << "," << fmt(cmp.l1(s)) << ","
               << (std::isinf(cmp.psnr_db(s)) ? std::string("inf") : fmt(cmp.psnr_db(s))) << "\n";
      summary["rollouts"].push_back({{"noise", noise[i]},
                                     {"image", file},
                                     {"mean_l1", k > 0 ? cmp.l1.mean() : 0.0},
                                     {"mean_psnr_db", k > 0 ? cmp.psnr_db.mean() : 0.0}});
    }

    if (k >= 1) {
      const auto maps = uncertainty_heatmaps(first, ds, trajectory, noise, n_rollouts, k, seed);
      img::write_png(dir / "uncertainty.png", maps.figure);
      summary["uncertainty"] = {{"image", "uncertainty.png"},
                                {"noise", maps.noise_levels},
                                {"mean_std", maps.mean_std},
                                {"vmax", maps.vmax}};
    }

    if (!no_tsne) {
      ProjectionOptions po;
      po.max_points = tsne_points;
      po.tsne.perplexity = perplexity;
      po.tsne.seed = seed;
      const auto proj = latent_projection(first, ds, po);
      img::write_png(dir / "latent_tsne.png", proj.plot);
      summary["projection"] = {{"image", "latent_tsne.png"},
                               {"points", proj.embedding.rows()},
                               {"color_by", proj.color_by}};
    }
    write_json_file(dir / "summary.json", summary);
    out << "report written to " << dir.string() << "\n";
    return 0;
  }
};

struct GridCmd {
  Common common;
  TrainFlags flags;
  std::string data;
  std::vector<double> w_reg{0.1, 1.0, 10.0}, w_var{1e-3, 1e-2, 1e-1};
  double validation_fraction = 0.2;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("gridsearch", "pick loss weights on a held-out split");
    common.add(sub);
    flags.add(sub, false);
    sub->add_option("--data", data, "dataset directory");
    sub->add_option("--w-reg", w_reg, "regularisation weights to try (repeatable)")->capture_default_str();
    sub->add_option("--w-var", w_var, "variational weights to try (repeatable)")->capture_default_str();
    sub->add_option("--validation-fraction", validation_fraction, "share of trajectories held out")
        ->capture_default_str();
  }

  int run(const std::vector<std::string>& args, std::ostream& out) {
    const auto ds = load_data(data, "data");
    TrainConfig cfg = training_config(common, flags, ds);
    cfg.eval_interval = 0;
    std::vector<GridPoint> grid;
    for (double r : w_reg)
      for (double v : w_var) grid.push_back({r, v});
    const fs::path dir = common.out_dir("grid", ds.system, cfg.seed);
    const json config = {{"train", to_json(cfg)},
                         {"w_reg", w_reg},
                         {"w_var", w_var},
                         {"validation_fraction", validation_fraction}};
    if (common.dry_run) {
      out << config.dump(2) << "\n";
      return 0;
    }
    write_manifest(dir, "gridsearch", args, config, {{"seed", cfg.seed}}, {{"data", data}},
                   {{"grid", (dir / "grid.csv").string()}});
    const auto result = grid_search_weights(cfg, ds, grid, validation_fraction);
    std::ofstream csv(dir / "grid.csv");
    csv << "w_reg,w_var,recon,reg,recon_next,vi,total,score\n";
    for (const auto& r : result.rows)
      csv << fmt(r.point.w_reg) << "," << fmt(r.point.w_var) << "," << fmt(r.held_out.recon) << ","
          << fmt(r.held_out.reg) << "," << fmt(r.held_out.recon_next) << "," << fmt(r.held_out.vi) << ","
          << fmt(r.held_out.total) << "," << fmt(r.score) << "\n";
    const auto& best = result.rows[result.best];
    write_json_file(dir / "summary.json",
                    {{"best", {{"w_reg", best.point.w_reg}, {"w_var", best.point.w_var}, {"score", best.score}}},
                     {"points", result.rows.size()}});
    out << "best w_reg " << fmt(best.point.w_reg) << " w_var " << fmt(best.point.w_var) << " (score "
        << fmt(best.score) << ")\n";
    return 0;
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Reduced-order modelling with deep-kernel Gaussian processes", "dklrom"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  GenerateCmd gen;
  TrainCmd tr;
  EvalCmd ev;
  GridCmd gr;
  gen.add(app);
  tr.add(app);
  ev.add(app);
  gr.add(app);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand("generate")) return gen.run(args, out);
    if (app.got_subcommand("train")) return tr.run(args, out);
    if (app.got_subcommand("eval")) return ev.run(args, out, err);
    if (app.got_subcommand("gridsearch")) return gr.run(args, out);
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace dklrom::cli
