#include "dklrom/array_io.hpp"
#include "dklrom/data.hpp"
#include "dklrom/errors.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <doctest.h>

#include <algorithm>
#include <bit>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <unistd.h>

using namespace dklrom;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("dklrom_test_data_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

TrajectoryDataset random_dataset(Index m, Index n, Index u_dim, Index p_dim, std::uint64_t seed,
                                 bool states = true) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f), wide(-3.0f, 3.0f);
  TrajectoryDataset ds;
  ds.system = "pendulum";
  ds.channels = 2;
  ds.height = 3;
  ds.width = 4;
  ds.control_dim = u_dim;
  ds.param_dim = p_dim;
  ds.seed = seed;
  ds.frame_dt = 0.02;
  ds.settings = {{"g", 9.81}};
  for (Index i = 0; i < m; ++i) {
    ds.measurements.push_back(Matrix<float>::NullaryExpr(n, ds.measurement_dim(), [&] { return unit(rng); }));
    ds.controls.push_back(Matrix<float>::NullaryExpr(n - 1, u_dim, [&] { return wide(rng); }));
    if (states) ds.states.push_back(Matrix<float>::NullaryExpr(n, 4, [&] { return wide(rng); }));
    ds.ids.push_back(i);
  }
  if (states) ds.state_names = {"a", "b", "c", "d"};
  ds.params = Matrix<float>::NullaryExpr(m, p_dim, [&] { return wide(rng); });
  return ds;
}

bool bitwise_equal(const Matrix<float>& a, const Matrix<float>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::equal(a.data(), a.data() + a.size(), b.data(),
                    [](float x, float y) { return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y); });
}

void flip_byte(const fs::path& file, std::streamoff offset) {
  std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(offset);
  char c;
  f.read(&c, 1);
  c = static_cast<char>(c ^ 0x5a);
  f.seekp(offset);
  f.write(&c, 1);
}

}  // namespace

TEST_CASE("array files round trip and reject corruption") {
  TempDir tmp;
  const std::vector<std::uint64_t> dims{2, 3};
  const std::vector<float> data{1, -2, 3.5f, 0, 1e-30f, -0.0f};
  io::write_array(tmp.path / "a.bin", dims, data);
  const auto a = io::read_array(tmp.path / "a.bin");
  CHECK(a.dims == dims);
  CHECK(a.element_count() == 6);
  CHECK(io::checksum(a.data) == io::checksum(data));
  CHECK(std::bit_cast<std::uint32_t>(a.data[5]) == std::bit_cast<std::uint32_t>(-0.0f));
  CHECK(fs::file_size(tmp.path / "a.bin") == 8 + 4 + 4 + 2 * 8 + 6 * 4);

  CHECK_THROWS_AS(io::write_array(tmp.path / "b.bin", dims, std::span<const float>(data).first(5)), ValidationError);

  fs::copy_file(tmp.path / "a.bin", tmp.path / "magic.bin");
  flip_byte(tmp.path / "magic.bin", 0);
  CHECK_THROWS_AS(io::read_array(tmp.path / "magic.bin"), FormatError);

  fs::copy_file(tmp.path / "a.bin", tmp.path / "dtype.bin");
  flip_byte(tmp.path / "dtype.bin", 12);
  CHECK_THROWS_AS(io::read_array(tmp.path / "dtype.bin"), FormatError);

  fs::copy_file(tmp.path / "a.bin", tmp.path / "short.bin");
  fs::resize_file(tmp.path / "short.bin", fs::file_size(tmp.path / "a.bin") - 1);
  CHECK_THROWS_AS(io::read_array(tmp.path / "short.bin"), FormatError);

  CHECK_THROWS_AS(io::read_array(tmp.path / "missing.bin"), FormatError);
}

TEST_CASE("checksum chaining equals hashing the concatenation") {
  const std::vector<float> a{1, 2, 3}, b{4, 5};
  std::vector<float> ab = a;
  ab.insert(ab.end(), b.begin(), b.end());
  CHECK(io::checksum(b, io::checksum(a)) == io::checksum(ab));
  CHECK(io::checksum(a) != io::checksum(b));
  CHECK(io::to_hex(0xabcull) == "0000000000000abc");
}

TEST_CASE("dataset save and load is bit exact") {
  TempDir tmp;
  const auto ds = random_dataset(3, 7, 1, 2, 5);
  save_dataset(ds, tmp.path / "ds");
  const auto back = load_dataset(tmp.path / "ds");
  CHECK(back.system == ds.system);
  CHECK(back.channels == 2);
  CHECK(back.height == 3);
  CHECK(back.width == 4);
  CHECK(back.seed == 5);
  CHECK(back.frame_dt == 0.02);
  CHECK(back.settings == ds.settings);
  CHECK(back.ids == ds.ids);
  CHECK(back.state_names == ds.state_names);
  for (std::size_t m = 0; m < 3; ++m) {
    CHECK(bitwise_equal(back.measurements[m], ds.measurements[m]));
    CHECK(bitwise_equal(back.controls[m], ds.controls[m]));
    CHECK(bitwise_equal(back.states[m], ds.states[m]));
    CHECK(back.measurements[m].allFinite());
  }
  CHECK(bitwise_equal(back.params, ds.params));
}

TEST_CASE("dataset load honours stored shapes") {
  TempDir tmp;
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<Index> small(1, 6), steps(2, 9), dims(0, 3);
  for (int k = 0; k < 8; ++k) {
    const Index m = small(rng), n = steps(rng), u = dims(rng), p = dims(rng);
    const auto ds = random_dataset(m, n, u, p, 100 + k, k % 2 == 0);
    const auto dir = tmp.path / ("ds" + std::to_string(k));
    save_dataset(ds, dir);
    const auto back = load_dataset(dir);
    CHECK(back.trajectories() == m);
    CHECK(back.steps() == n);
    CHECK(back.control_dim == u);
    CHECK(back.param_dim == p);
    CHECK(back.has_states() == ds.has_states());
    CHECK(back.controls[0].rows() == n - 1);
    CHECK(bitwise_equal(back.measurements.back(), ds.measurements.back()));
  }
}

TEST_CASE("dataset load rejects damaged directories") {
  TempDir tmp;
  const auto ds = random_dataset(2, 4, 1, 0, 9);
  const auto good = tmp.path / "good";
  save_dataset(ds, good);

  auto copy = [&](const std::string& name) {
    const auto dst = tmp.path / name;
    fs::copy(good, dst, fs::copy_options::recursive);
    return dst;
  };

  const auto magic = copy("magic");
  flip_byte(magic / "measurements.bin", 2);
  CHECK_THROWS_AS(load_dataset(magic), FormatError);

  const auto body = copy("body");
  flip_byte(body / "controls.bin", static_cast<std::streamoff>(fs::file_size(body / "controls.bin") - 2));
  CHECK_THROWS_AS(load_dataset(body), FormatError);

  const auto version = copy("version");
  {
    std::ifstream in(version / "meta.json");
    std::string text((std::istreambuf_iterator<char>(in)), {});
    const auto pos = text.find("\"format_version\": 1");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 19, "\"format_version\": 2");
    std::ofstream(version / "meta.json") << text;
  }
  CHECK_THROWS_AS(load_dataset(version), FormatError);

  const auto missing = copy("missing");
  fs::remove(missing / "params.bin");
  CHECK_THROWS_AS(load_dataset(missing), FormatError);

  CHECK_THROWS_AS(load_dataset(tmp.path / "nothing"), FormatError);
}

TEST_CASE("dataset validation") {
  auto ds = random_dataset(2, 4, 1, 1, 3);
  CHECK_NOTHROW(ds.validate());
  auto bad = ds;
  bad.measurements[1](0, 0) = 1.5f;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = ds;
  bad.controls[0] = Matrix<float>::Zero(4, 1);
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = ds;
  bad.params(0, 0) = NAN;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  TempDir tmp;
  CHECK_THROWS_AS(save_dataset(bad, tmp.path / "x"), ValidationError);
}

TEST_CASE("sample_windows stays inside trajectories") {
  const auto ds = random_dataset(3, 10, 1, 2, 4);
  std::mt19937_64 rng(1);
  const auto windows = sample_windows(ds, 50, 3, 2, 0.0, rng);
  CHECK(windows.size() == 50);
  for (const auto& w : windows) {
    CHECK(w.offset + 5 <= 10);
    CHECK(w.x_seq.rows() == 5);
    CHECK(w.u_seq.rows() == 4);
    CHECK(w.p.size() == 2);
    const auto k = static_cast<std::size_t>(w.trajectory);
    CHECK(bitwise_equal(w.x_seq, ds.measurements[k].middleRows(w.offset, 5)));
    CHECK(bitwise_equal(w.u_seq, ds.controls[k].middleRows(w.offset, 4)));
    CHECK(bitwise_equal(w.p.transpose(), ds.params.row(w.trajectory)));
  }
  CHECK_THROWS_AS(sample_windows(ds, 4, 8, 3, 0.0, rng), ConfigError);
  CHECK_THROWS_AS(sample_windows(ds, 4, 0, 3, 0.0, rng), ConfigError);
  CHECK_THROWS_AS(make_window(ds, 0, 7, 5, 0.0, rng), ConfigError);
}

TEST_CASE("sample_windows is deterministic and redraws noise") {
  const auto ds = random_dataset(2, 8, 1, 0, 6);
  std::mt19937_64 a(3), b(3);
  const auto wa = sample_windows(ds, 5, 2, 2, 0.01, a);
  const auto wb = sample_windows(ds, 5, 2, 2, 0.01, b);
  for (std::size_t i = 0; i < 5; ++i) CHECK(bitwise_equal(wa[i].x_seq, wb[i].x_seq));

  std::mt19937_64 rng(8);
  const auto first = make_window(ds, 1, 2, 4, 0.01, rng);
  const auto second = make_window(ds, 1, 2, 4, 0.01, rng);
  CHECK(!bitwise_equal(first.x_seq, second.x_seq));
  CHECK(first.x_seq.minCoeff() >= 0.0f);
  CHECK(first.x_seq.maxCoeff() <= 1.0f);
  CHECK(first.key() != make_window(ds, 0, 2, 4, 0.0, rng).key());
}

TEST_CASE("sample_windows is uniform over trajectory/offset pairs") {
  const Index m = 3, n = 12, h = 2, t = 2;
  const auto ds = random_dataset(m, n, 1, 0, 12, false);
  std::mt19937_64 rng(2024);
  const Index offsets = n - h - t + 1;
  std::vector<double> counts(static_cast<std::size_t>(m * offsets), 0.0);
  const int draws = 100000;
  for (int done = 0; done < draws; done += 1000)
    for (const auto& w : sample_windows(ds, 1000, h, t, 0.0, rng))
      counts[static_cast<std::size_t>(w.trajectory * offsets + w.offset)] += 1;
  const double expected = draws / static_cast<double>(counts.size());
  double chi2 = 0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
  const double p_value = boost::math::cdf(boost::math::complement(dist, chi2));
  CHECK(p_value > 0.01);
}

TEST_CASE("split is disjoint, exhaustive and seeded") {
  const auto ds = random_dataset(10, 4, 1, 1, 2);
  std::mt19937_64 a(5), b(5);
  const auto s = split(ds, 0.2, a);
  const auto s2 = split(ds, 0.2, b);
  CHECK(s.test.trajectories() == 2);
  CHECK(s.train.trajectories() == 8);
  CHECK(s.test.ids == s2.test.ids);
  std::set<Index> all(s.train.ids.begin(), s.train.ids.end());
  for (Index id : s.test.ids) CHECK(all.insert(id).second);
  CHECK(all.size() == 10);
  for (std::size_t i = 0; i < s.test.ids.size(); ++i) {
    const auto id = static_cast<std::size_t>(s.test.ids[i]);
    CHECK(bitwise_equal(s.test.measurements[i], ds.measurements[id]));
    CHECK(bitwise_equal(s.test.params.row(static_cast<Index>(i)), ds.params.row(static_cast<Index>(id))));
  }
  CHECK(split(ds, 0.01, a).test.trajectories() == 1);
  CHECK_THROWS_AS(split(ds, 0.0, a), ConfigError);
  CHECK_THROWS_AS(split(ds, 1.0, a), ConfigError);
  CHECK_THROWS_AS(ds.select({10}), ValidationError);
}
