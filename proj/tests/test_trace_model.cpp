#include <doctest.h>

#include "nullprobe/errors.hpp"
#include "nullprobe/rng.hpp"
#include "nullprobe/trace_model.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

using namespace nullprobe;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("nullprobe_test_" + name);
  fs::remove_all(dir);
  return dir;
}

TraceSet random_traces(std::size_t n, std::size_t layers, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  TraceSet t;
  t.n_samples = n;
  t.n_layers = layers;
  t.d_model = d;
  for (std::size_t l = 0; l < layers; ++l) {
    FloatMatrix m(n, d);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.gaussian());
    t.activations.push_back(m);
  }
  t.labels.resize(n, 1);
  for (std::size_t i = 0; i < n; ++i) t.labels(i, 0) = static_cast<float>(rng.below(2));
  t.label_spec = {LabelKind::kBinary, 0};
  t.provenance["source"] = "unit test";
  return t;
}

void write_bytes(const fs::path& path, const std::vector<float>& values) {
  std::ofstream out(path, std::ios::binary);
  for (float v : values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    const unsigned char le[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                 static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    out.write(reinterpret_cast<const char*>(le), 4);
  }
}

// A directory written the way an external producer would: hand-rolled JSON
// and explicit little-endian bytes.
fs::path external_directory(const std::string& name, int version, std::size_t label_rows) {
  const fs::path dir = scratch_dir(name);
  fs::create_directories(dir);
  std::ofstream(dir / "manifest.json") << R"({
  "format_version": )" << version << R"(,
  "dtype": "f32",
  "byte_order": "little",
  "n_samples": 3,
  "n_layers": 2,
  "d_model": 2,
  "label_dim": 1,
  "label_kind": "categorical",
  "num_classes": 3,
  "layer_files": ["layer_00.bin", "layer_01.bin"],
  "label_file": "labels.bin",
  "provenance": {"model": "external", "seed": "9"}
})";
  write_bytes(dir / "layer_00.bin", {1, 2, 3, 4, 5, 6});
  write_bytes(dir / "layer_01.bin", {-1.5f, 0.25f, 1e-3f, 7, 8, 9});
  std::vector<float> labels = {0, 2, 1};
  labels.resize(label_rows);
  write_bytes(dir / "labels.bin", labels);
  return dir;
}

}  // namespace

TEST_SUITE("trace_model") {

TEST_CASE("layer file holds n_samples * d_model * 4 bytes") {
  const fs::path dir = scratch_dir("size");
  TraceSet t = random_traces(2, 1, 3, 1);
  write_traces(t, dir);
  CHECK(fs::file_size(dir / "layer_00.bin") == 24);
  CHECK(fs::file_size(dir / "labels.bin") == 8);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir)) files += e.is_regular_file() ? 1 : 0;
  CHECK(files == 1 + t.n_layers + 1);
}

TEST_CASE("round trip is bitwise") {
  const fs::path dir = scratch_dir("roundtrip");
  TraceSet t = random_traces(37, 4, 5, 2);
  t.activations[2](3, 1) = std::numeric_limits<float>::denorm_min();
  t.activations[1](0, 0) = -0.0f;
  write_traces(t, dir);
  const TraceSet back = read_traces(dir);
  CHECK(bitwise_equal(t, back));
  CHECK(back.provenance.at("source") == "unit test");
  CHECK(std::signbit(back.activations[1](0, 0)));
}

TEST_CASE("manifest text is stable") {
  const fs::path a = scratch_dir("stable_a");
  const fs::path b = scratch_dir("stable_b");
  const TraceSet t = random_traces(5, 2, 3, 3);
  write_traces(t, a);
  write_traces(t, b);
  std::ifstream fa(a / "manifest.json"), fb(b / "manifest.json");
  const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(sa == sb);
  CHECK(sa.find("\"format_version\": 1") != std::string::npos);
}

TEST_CASE("invalid traces are rejected before anything is written") {
  const fs::path dir = scratch_dir("nan");
  TraceSet t = random_traces(4, 2, 3, 4);
  t.activations[1](2, 2) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(write_traces(t, dir), ValidationError);
  CHECK_FALSE(fs::exists(dir));

  TraceSet bad_label = random_traces(4, 2, 3, 4);
  bad_label.labels(1, 0) = 0.5f;
  CHECK_THROWS_AS(validate(bad_label), ValidationError);

  TraceSet bad_shape = random_traces(4, 2, 3, 4);
  bad_shape.activations[0].resize(3, 3);
  CHECK_THROWS_AS(validate(bad_shape), ValidationError);

  TraceSet bad_class = random_traces(4, 1, 2, 4);
  bad_class.label_spec = {LabelKind::kCategorical, 3};
  bad_class.labels(0, 0) = 3.0f;
  CHECK_THROWS_AS(validate(bad_class), ValidationError);
}

TEST_CASE("externally produced directory loads with declared shapes") {
  const TraceSet t = read_traces(external_directory("external", 1, 3));
  CHECK(t.n_samples == 3);
  CHECK(t.n_layers == 2);
  CHECK(t.d_model == 2);
  CHECK(t.label_spec.kind == LabelKind::kCategorical);
  CHECK(t.label_spec.num_classes == 3);
  CHECK(t.activations[0](1, 0) == 3.0f);
  CHECK(t.activations[1](0, 0) == -1.5f);
  CHECK(t.activations[1](0, 1) == 0.25f);
  CHECK(t.labels(1, 0) == 2.0f);
  CHECK(t.provenance.at("model") == "external");
}

TEST_CASE("short label file is a format error naming the file") {
  const fs::path dir = external_directory("short", 1, 2);
  try {
    read_traces(dir);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("labels.bin") != std::string::npos);
  }
}

TEST_CASE("manifest declaring 10 samples with a 9-row label file is rejected") {
  const fs::path dir = scratch_dir("ten");
  TraceSet t = random_traces(10, 1, 2, 5);
  write_traces(t, dir);
  std::vector<float> nine(9, 0.0f);
  write_bytes(dir / "labels.bin", nine);
  CHECK_THROWS_AS(read_traces(dir), FormatError);
}

TEST_CASE("missing layer file is a format error") {
  const fs::path dir = external_directory("missing", 1, 3);
  fs::remove(dir / "layer_01.bin");
  try {
    read_traces(dir);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("layer_01.bin") != std::string::npos);
  }
}

TEST_CASE("unsupported format version") {
  CHECK_THROWS_AS(read_traces(external_directory("v2", 2, 3)), UnsupportedVersionError);
}

TEST_CASE("real-vector labels round trip") {
  const fs::path dir = scratch_dir("vector");
  TraceSet t = random_traces(6, 2, 3, 6);
  t.labels = FloatMatrix::Random(6, 2);
  t.label_spec = {LabelKind::kRealVector, 0};
  write_traces(t, dir);
  const TraceSet back = read_traces(dir);
  CHECK(back.label_dim() == 2);
  CHECK(bitwise_equal(t, back));
}

TEST_CASE("layer file names") {
  CHECK(layer_file_name(0) == "layer_00.bin");
  CHECK(layer_file_name(12) == "layer_12.bin");
}

}
