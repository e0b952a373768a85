#include "cli.hpp"
#include "dklrom/data.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = dklrom::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("dklrom_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// Every file except the run manifest, which records a start time.
std::map<std::string, std::string> contents(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "run_manifest.json")
      out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

// Small pendulum train/test data shared by the slower cases.
const fs::path& tiny_data() {
  static const fs::path dir = [] {
    auto d = scratch("shared");
    REQUIRE(run({"generate", "--preset", "tiny", "--seed", "1", "--out", (d / "train").string()}).code == 0);
    REQUIRE(run({"generate", "--preset", "tiny", "--seed", "2", "--m", "3", "--out", (d / "test").string()}).code ==
            0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("generate twice gives identical datasets") {
  auto d = scratch("gen");
  const std::vector<std::string> base{"generate", "--system", "pendulum", "--m", "8", "--n", "40", "--seed", "7",
                                      "--image-size", "16"};
  auto a = base, b = base;
  a.insert(a.end(), {"--out", (d / "a").string()});
  b.insert(b.end(), {"--out", (d / "b").string()});
  REQUIRE(run(a).code == 0);
  REQUIRE(run(b).code == 0);
  const auto ca = contents(d / "a"), cb = contents(d / "b");
  CHECK(ca.size() >= 5);
  CHECK(ca == cb);
  const auto ds = dklrom::load_dataset(d / "a");
  CHECK(ds.trajectories() == 8);
  CHECK(ds.steps() == 40);

  const auto manifest = json::parse(slurp(d / "a" / "run_manifest.json"));
  CHECK(manifest["command"] == "generate");
  CHECK(manifest["seeds"]["seed"] == 7);
  CHECK(manifest["config"]["trajectories"] == 8);
  CHECK(manifest.contains("version"));
  CHECK(manifest.contains("started_at"));
}

TEST_CASE("unknown system is a usage error listing the valid ones") {
  const auto r = run({"generate", "--system", "lorenz", "--m", "2", "--n", "5"});
  CHECK(r.code == 2);
  CHECK(r.err.find("pendulum") != std::string::npos);
  CHECK(r.err.find("reaction_diffusion") != std::string::npos);
}

TEST_CASE("reaction-diffusion generation honours the beta range") {
  auto d = scratch("rd");
  REQUIRE(run({"generate", "--system", "reaction_diffusion", "--m", "6", "--n", "3", "--grid", "16", "--out",
               (d / "default").string()})
              .code == 0);
  const auto ds = dklrom::load_dataset(d / "default");
  CHECK(ds.params.minCoeff() >= 0.5f);
  CHECK(ds.params.maxCoeff() <= 1.5f);
  REQUIRE(run({"generate", "--system", "rd", "--m", "6", "--n", "3", "--grid", "16", "--beta-min", "0.9",
               "--beta-max", "1.1", "--out", (d / "narrow").string()})
              .code == 0);
  const auto narrow = dklrom::load_dataset(d / "narrow");
  CHECK(narrow.params.minCoeff() >= 0.9f);
  CHECK(narrow.params.maxCoeff() <= 1.1f);
  CHECK(run({"generate", "--system", "rd", "--m", "2", "--n", "3", "--grid", "16", "--beta-min", "2",
             "--beta-max", "1", "--out", (d / "bad").string()})
            .code == 2);
}

TEST_CASE("output root comes from the environment") {
  auto d = scratch("root");
  setenv(dklrom::cli::kOutputRootEnv, d.c_str(), 1);
  const auto r = run({"generate", "--system", "pendulum", "--m", "2", "--n", "4", "--image-size", "16", "--seed",
                      "3"});
  unsetenv(dklrom::cli::kOutputRootEnv);
  CHECK(r.code == 0);
  CHECK(fs::exists(d / "data-pendulum-s3" / "meta.json"));
}

TEST_CASE("train dry run resolves flags over config file") {
  const auto& d = tiny_data();
  const auto dir = scratch("dry");
  {
    std::ofstream os(dir / "cfg.json");
    os << R"({"preset": "tiny", "train": {"max_steps": 5, "batch_size": 4}})";
  }
  const auto r = run({"train", "--data", (d / "train").string(), "--config", (dir / "cfg.json").string(), "--steps",
                      "7", "--history", "1", "--t-steps", "3", "--latent-dim", "3", "--noise", "0.0625", "--dry-run",
                      "--out", (dir / "out").string()});
  REQUIRE(r.code == 0);
  const auto cfg = json::parse(r.out);
  CHECK(cfg["max_steps"] == 7);
  CHECK(cfg["batch_size"] == 4);
  CHECK(cfg["model"]["history"] == 1);
  CHECK(cfg["model"]["latent_dim"] == 3);
  CHECK(cfg["weights"]["horizon"] == 3);
  CHECK(cfg["noise_sigma2"] == 0.0625);
  CHECK_FALSE(fs::exists(dir / "out"));

  {
    std::ofstream os(dir / "bad.json");
    os << R"({"train": {"max_stepz": 5}})";
  }
  CHECK(run({"train", "--data", (d / "train").string(), "--config", (dir / "bad.json").string(), "--dry-run"}).code ==
        2);
}

TEST_CASE("train reports usage errors") {
  const auto& d = tiny_data();
  CHECK(run({"train", "--data", "/nonexistent/dataset"}).code == 2);
  CHECK(run({"train"}).code == 2);
  // a preset whose image size differs from the dataset
  const auto r = run({"train", "--data", (d / "train").string(), "--preset", "desk-pendulum", "--dry-run"});
  CHECK(r.code == 2);
  CHECK_FALSE(r.err.empty());
  CHECK(run({"train", "--bogus-flag"}).code == 2);
  CHECK(run({}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("train then eval writes a full report") {
  const auto& d = tiny_data();
  const auto dir = scratch("run");
  const auto t = run({"train", "--preset", "tiny", "--data", (d / "train").string(), "--steps", "30",
                      "--eval-interval", "10", "--validation", (d / "test").string(), "--deterministic", "--out",
                      (dir / "train").string()});
  REQUIRE_MESSAGE(t.code == 0, t.err);
  CHECK(fs::exists(dir / "train" / "checkpoint" / "manifest.json"));
  CHECK(fs::exists(dir / "train" / "train_log.csv"));
  CHECK(fs::exists(dir / "train" / "final_metrics.json"));
  const auto manifest = json::parse(slurp(dir / "train" / "run_manifest.json"));
  CHECK(manifest["config"]["max_steps"] == 30);

  const std::vector<std::string> eval{"eval",          "--checkpoint", (dir / "train" / "checkpoint").string(),
                                      "--data",        (d / "test").string(),
                                      "--noise",       "0.0",
                                      "--noise",       "0.0625",
                                      "--noise",       "0.25",
                                      "--n-rollouts",  "3",
                                      "--rollout-steps", "8",
                                      "--seed",        "4"};
  auto a = eval, b = eval;
  a.insert(a.end(), {"--out", (dir / "eval_a").string()});
  b.insert(b.end(), {"--out", (dir / "eval_b").string()});
  const auto ra = run(a);
  REQUIRE_MESSAGE(ra.code == 0, ra.err);
  REQUIRE(run(b).code == 0);
  const auto ca = contents(dir / "eval_a");
  CHECK(ca == contents(dir / "eval_b"));
  for (const auto* f : {"metrics.csv", "summary.json", "rollout_curves.csv", "uncertainty.png", "latent_tsne.png",
                        "rollout_noise0.png", "rollout_noise1.png", "rollout_noise2.png"})
    CHECK_MESSAGE(ca.count(f) == 1, f);

  std::istringstream csv(ca.at("metrics.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "system,H,T,noise,target,psnr_db,l1");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 9);
  const auto summary = json::parse(ca.at("summary.json"));
  CHECK(summary["metrics"].size() == 9);
  CHECK(summary["uncertainty"]["mean_std"].size() == 3);

  // rerunning into the same directory overwrites it identically
  REQUIRE(run(a).code == 0);
  CHECK(contents(dir / "eval_a") == ca);

  // incompatible dataset shapes
  REQUIRE(run({"generate", "--system", "rd", "--m", "2", "--n", "6", "--grid", "16", "--out",
               (dir / "rd").string()})
              .code == 0);
  const auto bad = run({"eval", "--checkpoint", (dir / "train" / "checkpoint").string(), "--data",
                        (dir / "rd").string(), "--out", (dir / "eval_bad").string()});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("does not fit") != std::string::npos);
}

TEST_CASE("gridsearch writes one row per grid point") {
  const auto& d = tiny_data();
  const auto dir = scratch("grid");
  const auto r = run({"gridsearch", "--preset", "tiny", "--data", (d / "train").string(), "--steps", "5", "--w-reg",
                      "0.5", "--w-reg", "1", "--w-var", "0.01", "--out", dir.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  std::istringstream csv(slurp(dir / "grid.csv"));
  std::string line;
  int rows = -1;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 2);
  CHECK(json::parse(slurp(dir / "summary.json"))["points"] == 2);
}
