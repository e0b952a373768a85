#include "dklrom/checkpoint.hpp"

#include "dklrom/array_io.hpp"
#include "dklrom/config.hpp"
#include "dklrom/errors.hpp"

#include <map>

namespace dklrom {

using nlohmann::json;
namespace fs = std::filesystem;

void save_checkpoint(const ModelBundle<float>& bundle, const fs::path& dir, const std::optional<TrainConfig>& train) {
  fs::create_directories(dir);
  json tensors = json::array();
  for (const auto* p : bundle.parameters()) {
    const std::string file = p->name + ".bin";
    const std::vector<std::uint64_t> dims{static_cast<std::uint64_t>(p->value.rows()),
                                          static_cast<std::uint64_t>(p->value.cols())};
    const std::span<const float> data(p->value.data(), static_cast<std::size_t>(p->value.size()));
    io::write_array(dir / file, dims, data);
    tensors.push_back({{"name", p->name}, {"file", file}, {"dims", dims}, {"checksum", io::to_hex(io::checksum(data))}});
  }
  json manifest = {{"format_version", kCheckpointFormatVersion},
                   {"fingerprint", bundle.config.fingerprint()},
                   {"model", to_json(bundle.config)},
                   {"tensors", tensors}};
  if (train) manifest["train"] = to_json(*train);
  // Manifest last, so a directory with a manifest always has all its tensors.
  write_json_file(dir / "manifest.json", manifest);
}

Checkpoint load_checkpoint(const fs::path& dir, const ModelConfig* expected) {
  if (!fs::exists(dir / "manifest.json")) throw FormatError("no manifest.json in " + dir.string());
  json manifest;
  try {
    manifest = read_json_file(dir / "manifest.json");
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion)
      throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported");
    ModelConfig cfg;
    merge(cfg, manifest.at("model"));
    const auto stored = manifest.at("fingerprint").get<std::string>();
    if (stored != cfg.fingerprint()) throw FormatError("checkpoint manifest fingerprint disagrees with its config");
    if (expected && expected->fingerprint() != stored)
      throw ConfigError("checkpoint is incompatible with the requested model: stored " + stored + ", expected " +
                        expected->fingerprint());

    Checkpoint out{ModelBundle<float>(cfg), std::nullopt};
    std::map<std::string, ad::Parameter<float>*> by_name;
    for (auto* p : out.bundle.parameters()) by_name[p->name] = p;
    std::size_t loaded = 0;
    for (const auto& t : manifest.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const auto it = by_name.find(name);
      if (it == by_name.end()) throw FormatError("checkpoint holds unknown tensor " + name);
      auto& p = *it->second;
      const auto a = io::read_array(dir / t.at("file").get<std::string>());
      if (a.dims.size() != 2 || a.dims[0] != static_cast<std::uint64_t>(p.value.rows()) ||
          a.dims[1] != static_cast<std::uint64_t>(p.value.cols()))
        throw FormatError("tensor " + name + " has the wrong shape");
      if (io::to_hex(io::checksum(a.data)) != t.at("checksum").get<std::string>())
        throw FormatError("tensor " + name + " fails its checksum");
      p.value = Eigen::Map<const Matrix<float>>(a.data.data(), p.value.rows(), p.value.cols());
      p.zero_grad();
      ++loaded;
    }
    if (loaded != by_name.size()) throw FormatError("checkpoint is missing tensors");
    if (manifest.contains("train")) {
      TrainConfig tc;
      merge(tc, manifest.at("train"));
      out.train = tc;
    }
    return out;
  } catch (const json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
}

}  // namespace dklrom
