#include "dklrom/data.hpp"

#include "dklrom/array_io.hpp"
#include "dklrom/errors.hpp"
#include "dklrom/simulators.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace dklrom {

using nlohmann::json;
namespace fs = std::filesystem;

void TrajectoryDataset::validate() const {
  const Index m = trajectories();
  const Index n = steps();
  if (m < 1 || n < 1) throw ValidationError("dataset: needs at least one trajectory and one step");
  if (channels < 1 || height < 1 || width < 1) throw ValidationError("dataset: bad frame shape");
  if (static_cast<Index>(controls.size()) != m) throw ValidationError("dataset: controls count != M");
  if (params.rows() != m || params.cols() != param_dim) throw ValidationError("dataset: params must be M x |p|");
  if (static_cast<Index>(ids.size()) != m) throw ValidationError("dataset: ids count != M");
  if (has_states() && static_cast<Index>(states.size()) != m) throw ValidationError("dataset: states count != M");
  for (Index i = 0; i < m; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const auto& x = measurements[k];
    if (x.rows() != n || x.cols() != measurement_dim())
      throw ValidationError("dataset: trajectory " + std::to_string(i) + " measurements are not N x |x|");
    if (!x.allFinite() || (x.size() > 0 && (x.minCoeff() < 0.0f || x.maxCoeff() > 1.0f)))
      throw ValidationError("dataset: trajectory " + std::to_string(i) + " has values outside [0,1]");
    if (controls[k].rows() != n - 1 || controls[k].cols() != control_dim)
      throw ValidationError("dataset: trajectory " + std::to_string(i) + " controls are not (N-1) x |u|");
    if (!controls[k].allFinite()) throw ValidationError("dataset: non-finite controls");
    if (has_states() && (states[k].rows() != n || !states[k].allFinite()))
      throw ValidationError("dataset: bad ground-truth states");
  }
  if (!params.allFinite()) throw ValidationError("dataset: non-finite params");
}

TrajectoryDataset TrajectoryDataset::select(const std::vector<Index>& positions) const {
  TrajectoryDataset out = *this;
  out.measurements.clear();
  out.controls.clear();
  out.states.clear();
  out.ids.clear();
  out.params = Matrix<float>(static_cast<Index>(positions.size()), param_dim);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const Index p = positions[i];
    if (p < 0 || p >= trajectories()) throw ValidationError("dataset select: position out of range");
    const auto k = static_cast<std::size_t>(p);
    out.measurements.push_back(measurements[k]);
    out.controls.push_back(controls[k]);
    if (has_states()) out.states.push_back(states[k]);
    out.ids.push_back(ids[k]);
    out.params.row(static_cast<Index>(i)) = params.row(p);
  }
  return out;
}

namespace {

struct ArrayEntry {
  std::string file;
  std::vector<std::uint64_t> dims;
  std::uint64_t hash;
};

ArrayEntry write_stacked(const fs::path& dir, const std::string& name,
                         const std::vector<Matrix<float>>& parts, Index rows, Index cols) {
  ArrayEntry e{name + ".bin",
               {static_cast<std::uint64_t>(parts.size()), static_cast<std::uint64_t>(rows),
                static_cast<std::uint64_t>(cols)},
               io::kChecksumBasis};
  std::vector<std::span<const float>> chunks;
  for (const auto& p : parts) {
    std::span<const float> s(p.data(), static_cast<std::size_t>(p.size()));
    chunks.push_back(s);
    e.hash = io::checksum(s, e.hash);
  }
  io::write_array(dir / e.file, e.dims, chunks);
  return e;
}

json entry_json(const ArrayEntry& e) {
  return {{"file", e.file}, {"dims", e.dims}, {"checksum", io::to_hex(e.hash)}};
}

io::FloatArray read_checked(const fs::path& dir, const json& entry, std::size_t rank) {
  const auto file = entry.at("file").get<std::string>();
  io::FloatArray a = io::read_array(dir / file);
  if (a.dims.size() != rank || a.dims != entry.at("dims").get<std::vector<std::uint64_t>>())
    throw FormatError(file + ": stored dims disagree with meta.json");
  if (io::to_hex(io::checksum(a.data)) != entry.at("checksum").get<std::string>())
    throw FormatError(file + ": checksum mismatch");
  return a;
}

std::vector<Matrix<float>> unstack(const io::FloatArray& a) {
  const auto m = static_cast<Index>(a.dims[0]);
  const auto r = static_cast<Index>(a.dims[1]);
  const auto c = static_cast<Index>(a.dims[2]);
  std::vector<Matrix<float>> out;
  for (Index i = 0; i < m; ++i)
    out.push_back(Eigen::Map<const Matrix<float>>(a.data.data() + i * r * c, r, c));
  return out;
}

}  // namespace

void save_dataset(const TrajectoryDataset& ds, const fs::path& dir) {
  ds.validate();
  fs::create_directories(dir);
  const Index n = ds.steps();
  json arrays;
  arrays["measurements"] = entry_json(write_stacked(dir, "measurements", ds.measurements, n, ds.measurement_dim()));
  arrays["controls"] = entry_json(write_stacked(dir, "controls", ds.controls, n - 1, ds.control_dim));
  {
    ArrayEntry e{"params.bin",
                 {static_cast<std::uint64_t>(ds.params.rows()), static_cast<std::uint64_t>(ds.params.cols())},
                 0};
    std::span<const float> s(ds.params.data(), static_cast<std::size_t>(ds.params.size()));
    e.hash = io::checksum(s);
    io::write_array(dir / e.file, e.dims, s);
    arrays["params"] = entry_json(e);
  }
  if (ds.has_states()) {
    arrays["states"] = entry_json(write_stacked(dir, "states", ds.states, n, ds.states.front().cols()));
  }
  json meta = {{"format_version", kDatasetFormatVersion},
               {"system", ds.system},
               {"trajectories", ds.trajectories()},
               {"steps", n},
               {"channels", ds.channels},
               {"height", ds.height},
               {"width", ds.width},
               {"control_dim", ds.control_dim},
               {"param_dim", ds.param_dim},
               {"seed", ds.seed},
               {"frame_dt", ds.frame_dt},
               {"settings", ds.settings},
               {"state_names", ds.state_names},
               {"ids", ds.ids},
               {"arrays", arrays}};
  std::ofstream os(dir / "meta.json");
  os << meta.dump(2) << "\n";
  if (!os) throw std::runtime_error("cannot write " + (dir / "meta.json").string());
}

TrajectoryDataset load_dataset(const fs::path& dir) {
  std::ifstream is(dir / "meta.json");
  if (!is) throw FormatError("no meta.json in " + dir.string());
  json meta;
  try {
    meta = json::parse(is);
  } catch (const json::exception& e) {
    throw FormatError("meta.json: " + std::string(e.what()));
  }
  try {
    const int version = meta.at("format_version").get<int>();
    if (version != kDatasetFormatVersion)
      throw FormatError("dataset format version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kDatasetFormatVersion) + ")");
    TrajectoryDataset ds;
    ds.system = meta.at("system").get<std::string>();
    ds.channels = meta.at("channels").get<Index>();
    ds.height = meta.at("height").get<Index>();
    ds.width = meta.at("width").get<Index>();
    ds.control_dim = meta.at("control_dim").get<Index>();
    ds.param_dim = meta.at("param_dim").get<Index>();
    ds.seed = meta.at("seed").get<std::uint64_t>();
    ds.frame_dt = meta.at("frame_dt").get<double>();
    ds.settings = meta.at("settings").get<std::map<std::string, double>>();
    ds.state_names = meta.at("state_names").get<std::vector<std::string>>();
    ds.ids = meta.at("ids").get<std::vector<Index>>();
    const auto m = meta.at("trajectories").get<std::uint64_t>();
    const auto n = meta.at("steps").get<std::uint64_t>();
    const auto& arrays = meta.at("arrays");

    const auto x = read_checked(dir, arrays.at("measurements"), 3);
    const auto u = read_checked(dir, arrays.at("controls"), 3);
    const auto p = read_checked(dir, arrays.at("params"), 2);
    if (x.dims[0] != m || x.dims[1] != n || u.dims[0] != m || p.dims[0] != m)
      throw FormatError("array shapes disagree with M=" + std::to_string(m) + ", N=" + std::to_string(n));
    ds.measurements = unstack(x);
    ds.controls = unstack(u);
    ds.params = Eigen::Map<const Matrix<float>>(p.data.data(), static_cast<Index>(p.dims[0]),
                                                static_cast<Index>(p.dims[1]));
    if (arrays.contains("states")) ds.states = unstack(read_checked(dir, arrays.at("states"), 3));
    ds.validate();
    return ds;
  } catch (const json::exception& e) {
    throw FormatError("meta.json: " + std::string(e.what()));
  } catch (const ValidationError& e) {
    throw FormatError(dir.string() + ": " + e.what());
  }
}

SequenceWindow make_window(const TrajectoryDataset& ds, Index trajectory, Index offset, Index length,
                           double noise_sigma2, std::mt19937_64& rng) {
  if (trajectory < 0 || trajectory >= ds.trajectories()) throw ValidationError("make_window: bad trajectory");
  if (length < 1 || offset < 0 || offset + length > ds.steps())
    throw ConfigError("window of length " + std::to_string(length) + " at offset " + std::to_string(offset) +
                      " does not fit trajectories of N=" + std::to_string(ds.steps()));
  const auto k = static_cast<std::size_t>(trajectory);
  SequenceWindow w;
  w.x_seq = sim::add_noise<float>(ds.measurements[k].middleRows(offset, length), noise_sigma2, rng);
  w.u_seq = ds.controls[k].middleRows(offset, length - 1);
  w.p = ds.params.row(trajectory).transpose();
  w.trajectory = trajectory;
  w.offset = offset;
  return w;
}

std::vector<SequenceWindow> sample_windows(const TrajectoryDataset& ds, Index batch, Index history,
                                           Index horizon, double noise_sigma2, std::mt19937_64& rng) {
  if (batch < 1 || history < 1 || horizon < 1) throw ConfigError("sample_windows: B, H and T must be >= 1");
  const Index length = history + horizon;
  if (length > ds.steps())
    throw ConfigError("H+T=" + std::to_string(length) + " exceeds trajectory length N=" + std::to_string(ds.steps()));
  std::uniform_int_distribution<Index> traj(0, ds.trajectories() - 1);
  std::uniform_int_distribution<Index> off(0, ds.steps() - length);
  std::vector<SequenceWindow> out;
  out.reserve(static_cast<std::size_t>(batch));
  for (Index b = 0; b < batch; ++b) {
    const Index t = traj(rng);
    const Index o = off(rng);
    out.push_back(make_window(ds, t, o, length, noise_sigma2, rng));
  }
  return out;
}

DatasetSplit split(const TrajectoryDataset& ds, double test_fraction, std::mt19937_64& rng) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must lie in (0, 1)");
  const Index m = ds.trajectories();
  if (m < 2) throw ConfigError("split needs at least two trajectories");
  const Index n_test = std::clamp<Index>(std::llround(test_fraction * static_cast<double>(m)), 1, m - 1);
  std::vector<Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Index> test(order.begin(), order.begin() + n_test);
  std::vector<Index> train(order.begin() + n_test, order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {ds.select(train), ds.select(test)};
}

}  // namespace dklrom
