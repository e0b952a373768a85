#include "dklrom/config.hpp"

#include "dklrom/errors.hpp"

#include <fstream>
#include <set>

namespace dklrom {

using nlohmann::json;

namespace {

// Reads j[key] into out when present, reporting type errors with the key name.
template <typename T>
void read(const json& j, const char* key, T& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type: " + it->dump());
  }
}

void read_path(const json& j, const char* key, std::filesystem::path& out) {
  std::string s = out.string();
  read(j, key, s);
  out = s;
}

void require_object(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      throw ConfigError("unknown config key '" + key + "' in " + where + " (expected one of: " + list + ")");
    }
  }
}

json pendulum_json(const sim::PendulumParams& p) {
  return {{"m1", p.m1}, {"m2", p.m2}, {"l1", p.l1}, {"l2", p.l2}, {"g", p.g}, {"dt", p.dt},
          {"frame_dt", p.frame_dt}, {"torque_max", p.torque_max}, {"image_size", p.image_size}};
}

json rd_json(const sim::RDParams& p) {
  return {{"d", p.d}, {"grid_n", p.grid_n}, {"domain_half", p.domain_half}, {"dt", p.dt},
          {"save_every", p.save_every}, {"positive_beta", p.positive_beta}, {"v0_equals_u0", p.v0_equals_u0}};
}

}  // namespace

json to_json(const ModelConfig& c) {
  return {{"channels", c.channels},
          {"height", c.height},
          {"width", c.width},
          {"latent_dim", c.latent_dim},
          {"feature_dim", c.feature_dim},
          {"conv_channels", c.conv_channels},
          {"lstm_hidden", c.lstm_hidden},
          {"history", c.history},
          {"control_dim", c.control_dim},
          {"param_dim", c.param_dim},
          {"inducing_points", c.inducing_points},
          {"init_obs_noise", c.init_obs_noise},
          {"init_proc_noise", c.init_proc_noise},
          {"seed", c.seed}};
}

void merge(ModelConfig& c, const json& j) {
  require_object(j, "model", {"channels", "height", "width", "latent_dim", "feature_dim", "conv_channels",
                              "lstm_hidden", "history", "control_dim", "param_dim", "inducing_points",
                              "init_obs_noise", "init_proc_noise", "seed"});
  read(j, "channels", c.channels);
  read(j, "height", c.height);
  read(j, "width", c.width);
  read(j, "latent_dim", c.latent_dim);
  read(j, "feature_dim", c.feature_dim);
  read(j, "conv_channels", c.conv_channels);
  read(j, "lstm_hidden", c.lstm_hidden);
  read(j, "history", c.history);
  read(j, "control_dim", c.control_dim);
  read(j, "param_dim", c.param_dim);
  read(j, "inducing_points", c.inducing_points);
  read(j, "init_obs_noise", c.init_obs_noise);
  read(j, "init_proc_noise", c.init_proc_noise);
  read(j, "seed", c.seed);
}

json to_json(const LossWeights& w) { return {{"w_reg", w.w_reg}, {"w_var", w.w_var}, {"horizon", w.horizon}}; }

void merge(LossWeights& w, const json& j) {
  require_object(j, "weights", {"w_reg", "w_var", "horizon"});
  read(j, "w_reg", w.w_reg);
  read(j, "w_var", w.w_var);
  read(j, "horizon", w.horizon);
}

json to_json(const TrainConfig& c) {
  return {{"model", to_json(c.model)},
          {"weights", to_json(c.weights)},
          {"system", c.system},
          {"batch_size", c.batch_size},
          {"lr_network", c.lr_network},
          {"lr_gp", c.lr_gp},
          {"max_steps", c.max_steps},
          {"noise_sigma2", c.noise_sigma2},
          {"eval_interval", c.eval_interval},
          {"eval_batches", c.eval_batches},
          {"grad_clip", c.grad_clip},
          {"warmup_steps", c.warmup_steps},
          {"seed", c.seed},
          {"deterministic", c.deterministic},
          {"checkpoint_dir", c.checkpoint_dir.string()}};
}

void merge(TrainConfig& c, const json& j) {
  require_object(j, "train", {"model", "weights", "system", "batch_size", "lr_network", "lr_gp", "max_steps",
                              "noise_sigma2", "eval_interval", "eval_batches", "grad_clip", "warmup_steps", "seed",
                              "deterministic", "checkpoint_dir"});
  if (j.contains("model")) merge(c.model, j.at("model"));
  if (j.contains("weights")) merge(c.weights, j.at("weights"));
  read(j, "system", c.system);
  read(j, "batch_size", c.batch_size);
  read(j, "lr_network", c.lr_network);
  read(j, "lr_gp", c.lr_gp);
  read(j, "max_steps", c.max_steps);
  read(j, "noise_sigma2", c.noise_sigma2);
  read(j, "eval_interval", c.eval_interval);
  read(j, "eval_batches", c.eval_batches);
  read(j, "grad_clip", c.grad_clip);
  read(j, "warmup_steps", c.warmup_steps);
  read(j, "seed", c.seed);
  read(j, "deterministic", c.deterministic);
  read_path(j, "checkpoint_dir", c.checkpoint_dir);
}

json to_json(const sim::GenerationConfig& c) {
  return {{"pendulum", pendulum_json(c.pendulum)},
          {"rd", rd_json(c.rd)},
          {"beta_min", c.beta_min},
          {"beta_max", c.beta_max}};
}

void merge(sim::GenerationConfig& c, const json& j) {
  require_object(j, "generation", {"pendulum", "rd", "beta_min", "beta_max"});
  if (j.contains("pendulum")) {
    const auto& p = j.at("pendulum");
    require_object(p, "generation.pendulum",
                   {"m1", "m2", "l1", "l2", "g", "dt", "frame_dt", "torque_max", "image_size"});
    read(p, "m1", c.pendulum.m1);
    read(p, "m2", c.pendulum.m2);
    read(p, "l1", c.pendulum.l1);
    read(p, "l2", c.pendulum.l2);
    read(p, "g", c.pendulum.g);
    read(p, "dt", c.pendulum.dt);
    read(p, "frame_dt", c.pendulum.frame_dt);
    read(p, "torque_max", c.pendulum.torque_max);
    read(p, "image_size", c.pendulum.image_size);
  }
  if (j.contains("rd")) {
    const auto& r = j.at("rd");
    require_object(r, "generation.rd",
                   {"d", "grid_n", "domain_half", "dt", "save_every", "positive_beta", "v0_equals_u0"});
    read(r, "d", c.rd.d);
    read(r, "grid_n", c.rd.grid_n);
    read(r, "domain_half", c.rd.domain_half);
    read(r, "dt", c.rd.dt);
    read(r, "save_every", c.rd.save_every);
    read(r, "positive_beta", c.rd.positive_beta);
    read(r, "v0_equals_u0", c.rd.v0_equals_u0);
  }
  read(j, "beta_min", c.beta_min);
  read(j, "beta_max", c.beta_max);
}

json to_json(const RunPreset& p) {
  return {{"name", p.name},
          {"generation", to_json(p.generation)},
          {"trajectories", p.trajectories},
          {"steps", p.steps},
          {"train", to_json(p.train)}};
}

void merge(RunPreset& p, const json& j) {
  require_object(j, "config file", {"name", "preset", "generation", "trajectories", "steps", "train"});
  read(j, "name", p.name);
  if (j.contains("generation")) merge(p.generation, j.at("generation"));
  read(j, "trajectories", p.trajectories);
  read(j, "steps", p.steps);
  if (j.contains("train")) merge(p.train, j.at("train"));
}

namespace {

void set_pendulum_shape(RunPreset& p, Index image) {
  p.train.system = "pendulum";
  p.generation.pendulum.image_size = image;
  p.train.model.channels = 3;
  p.train.model.height = p.train.model.width = image;
  p.train.model.control_dim = 1;
  p.train.model.param_dim = 0;
}

void set_rd_shape(RunPreset& p, Index grid) {
  p.train.system = "reaction_diffusion";
  p.generation.rd.grid_n = grid;
  p.train.model.channels = 2;
  p.train.model.height = p.train.model.width = grid;
  p.train.model.control_dim = 0;
  p.train.model.param_dim = 1;
}

void set_desk_model(RunPreset& p) {
  auto& m = p.train.model;
  m.latent_dim = 8;
  m.feature_dim = 8;
  m.conv_channels = {16, 32, 64};
  m.lstm_hidden = 64;
  m.history = 4;
  m.inducing_points = 32;
  p.train.weights.horizon = 2;
  p.train.weights.w_reg = 0.01;  // larger values collapse the encoder at this scale
  p.train.batch_size = 16;
  p.train.max_steps = 2000;
  p.train.eval_interval = 500;
  p.train.noise_sigma2 = 0.0625;
}

}  // namespace

std::vector<std::string> preset_names() { return {"full-pendulum", "full-rd", "desk-pendulum", "desk-rd", "tiny"}; }

RunPreset preset(const std::string& name) {
  RunPreset p;
  p.name = name;
  if (name == "full-pendulum") {
    set_pendulum_shape(p, 84);
    p.trajectories = 200;
    p.steps = 200;
  } else if (name == "full-rd") {
    set_rd_shape(p, 128);
    p.trajectories = 100;
    p.steps = 150;
  } else if (name == "desk-pendulum") {
    set_pendulum_shape(p, 32);
    set_desk_model(p);
    p.trajectories = 16;
    p.steps = 60;
  } else if (name == "desk-rd") {
    set_rd_shape(p, 32);
    set_desk_model(p);
    p.trajectories = 16;
    p.steps = 60;
  } else if (name == "tiny") {
    set_pendulum_shape(p, 16);
    auto& m = p.train.model;
    m.latent_dim = 4;
    m.feature_dim = 4;
    m.conv_channels = {4, 8};
    m.lstm_hidden = 8;
    m.history = 2;
    m.inducing_points = 8;
    p.train.weights.horizon = 2;
    p.train.batch_size = 8;
    p.train.max_steps = 200;
    p.train.eval_interval = 0;
    p.trajectories = 8;
    p.steps = 40;
  } else {
    std::string list;
    for (const auto& n : preset_names()) list += (list.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + name + "' (expected one of: " + list + ")");
  }
  return p;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream os(path);
  os << j.dump(2) << "\n";
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace dklrom
