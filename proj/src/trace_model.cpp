#include "nullprobe/trace_model.hpp"

#include "nullprobe/errors.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace nullprobe {

namespace {

static_assert(std::endian::native == std::endian::little,
              "trace files are little-endian; big-endian hosts need byte swapping");

constexpr int kFormatVersion = 1;

void check_finite(const FloatMatrix& m, const std::string& what) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (!std::isfinite(m.data()[i])) {
      throw ValidationError(what + " contains a non-finite entry at flat index " +
                            std::to_string(i));
    }
  }
}

void write_tensor(const FloatMatrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(float)));
  if (!out) throw IoError("write failed for " + path.string());
}

FloatMatrix read_tensor(const std::filesystem::path& path, std::size_t rows, std::size_t cols) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw FormatError("missing tensor file " + path.filename().string());
  }
  const auto expected = static_cast<std::uintmax_t>(rows * cols * sizeof(float));
  const auto actual = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot stat " + path.string());
  if (actual != expected) {
    throw FormatError(path.filename().string() + " has " + std::to_string(actual) +
                      " bytes, manifest implies " + std::to_string(expected));
  }
  FloatMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(expected));
  if (!in) throw FormatError("short read on " + path.filename().string());
  return m;
}

std::size_t positive_field(const nlohmann::json& manifest, const char* key) {
  if (!manifest.contains(key) || !manifest[key].is_number_unsigned() ||
      manifest[key].get<std::size_t>() == 0) {
    throw FormatError(std::string("manifest.json: field '") + key +
                      "' must be a positive integer");
  }
  return manifest[key].get<std::size_t>();
}

}  // namespace

std::string to_string(LabelKind kind) {
  switch (kind) {
    case LabelKind::kBinary: return "binary";
    case LabelKind::kCategorical: return "categorical";
    case LabelKind::kReal: return "real";
    case LabelKind::kRealVector: return "real_vector";
  }
  return "unknown";
}

LabelKind label_kind_from_string(const std::string& name) {
  if (name == "binary") return LabelKind::kBinary;
  if (name == "categorical") return LabelKind::kCategorical;
  if (name == "real") return LabelKind::kReal;
  if (name == "real_vector") return LabelKind::kRealVector;
  throw ValidationError("unknown label kind '" + name + "'");
}

Eigen::MatrixXd TraceSet::layer(std::size_t index) const {
  if (index >= activations.size()) {
    throw ValidationError("layer " + std::to_string(index) + " out of range (n_layers=" +
                          std::to_string(activations.size()) + ")");
  }
  return activations[index].cast<double>();
}

Eigen::MatrixXd TraceSet::labels_as_double() const { return labels.cast<double>(); }

std::vector<int> TraceSet::class_labels() const {
  if (!label_spec.is_classification() || labels.cols() != 1) {
    throw ValidationError("class labels require a single-column binary or categorical label");
  }
  std::vector<int> out(static_cast<std::size_t>(labels.rows()));
  for (Eigen::Index i = 0; i < labels.rows(); ++i) out[static_cast<std::size_t>(i)] = static_cast<int>(labels(i, 0));
  return out;
}

void validate(const TraceSet& t) {
  if (t.n_samples == 0 || t.n_layers == 0 || t.d_model == 0) {
    throw ValidationError("n_samples, n_layers and d_model must be positive");
  }
  if (t.activations.size() != t.n_layers) {
    throw ValidationError("expected " + std::to_string(t.n_layers) + " activation matrices, got " +
                          std::to_string(t.activations.size()));
  }
  for (std::size_t l = 0; l < t.n_layers; ++l) {
    const auto& a = t.activations[l];
    if (static_cast<std::size_t>(a.rows()) != t.n_samples ||
        static_cast<std::size_t>(a.cols()) != t.d_model) {
      throw ValidationError("layer " + std::to_string(l) + " has shape " + std::to_string(a.rows()) +
                            "x" + std::to_string(a.cols()) + ", expected " +
                            std::to_string(t.n_samples) + "x" + std::to_string(t.d_model));
    }
    check_finite(a, "layer " + std::to_string(l));
  }
  if (static_cast<std::size_t>(t.labels.rows()) != t.n_samples || t.labels.cols() == 0) {
    throw ValidationError("labels must have n_samples rows and at least one column");
  }
  check_finite(t.labels, "labels");
  switch (t.label_spec.kind) {
    case LabelKind::kBinary:
      for (Eigen::Index i = 0; i < t.labels.size(); ++i) {
        const float v = t.labels.data()[i];
        if (v != 0.0f && v != 1.0f) throw ValidationError("binary label entries must be 0 or 1");
      }
      break;
    case LabelKind::kCategorical: {
      if (t.label_spec.num_classes < 2) throw ValidationError("categorical labels need k >= 2");
      const auto k = static_cast<float>(t.label_spec.num_classes);
      for (Eigen::Index i = 0; i < t.labels.size(); ++i) {
        const float v = t.labels.data()[i];
        if (v < 0.0f || v >= k || v != std::floor(v)) {
          throw ValidationError("categorical label entries must be integers in [0, k)");
        }
      }
      break;
    }
    case LabelKind::kReal:
      if (t.labels.cols() != 1) throw ValidationError("real labels must have exactly one column");
      break;
    case LabelKind::kRealVector:
      break;
  }
}

bool bitwise_equal(const TraceSet& a, const TraceSet& b) {
  auto same = [](const FloatMatrix& x, const FloatMatrix& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() &&
           std::memcmp(x.data(), y.data(), static_cast<std::size_t>(x.size()) * sizeof(float)) == 0;
  };
  if (a.n_samples != b.n_samples || a.n_layers != b.n_layers || a.d_model != b.d_model ||
      !(a.label_spec == b.label_spec) || a.provenance != b.provenance ||
      a.activations.size() != b.activations.size() || !same(a.labels, b.labels)) {
    return false;
  }
  for (std::size_t l = 0; l < a.activations.size(); ++l) {
    if (!same(a.activations[l], b.activations[l])) return false;
  }
  return true;
}

std::string layer_file_name(std::size_t layer) {
  std::string digits = std::to_string(layer);
  if (digits.size() < 2) digits.insert(0, 2 - digits.size(), '0');
  return "layer_" + digits + ".bin";
}

void write_traces(const TraceSet& traces, const std::filesystem::path& directory) {
  validate(traces);

  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw IoError("cannot create directory " + directory.string() + ": " + ec.message());

  nlohmann::json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["dtype"] = "f32";
  manifest["byte_order"] = "little";
  manifest["n_samples"] = traces.n_samples;
  manifest["n_layers"] = traces.n_layers;
  manifest["d_model"] = traces.d_model;
  manifest["label_dim"] = traces.label_dim();
  manifest["label_kind"] = to_string(traces.label_spec.kind);
  if (traces.label_spec.kind == LabelKind::kCategorical) {
    manifest["num_classes"] = traces.label_spec.num_classes;
  }
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t l = 0; l < traces.n_layers; ++l) files.push_back(layer_file_name(l));
  manifest["layer_files"] = files;
  manifest["label_file"] = "labels.bin";
  manifest["provenance"] = traces.provenance;

  for (std::size_t l = 0; l < traces.n_layers; ++l) {
    write_tensor(traces.activations[l], directory / layer_file_name(l));
  }
  write_tensor(traces.labels, directory / "labels.bin");

  std::ofstream out(directory / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write manifest.json in " + directory.string());
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("write failed for manifest.json");
}

TraceSet read_traces(const std::filesystem::path& directory) {
  const auto manifest_path = directory / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw FormatError("missing manifest.json in " + directory.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }
  if (!manifest.is_object()) throw FormatError("manifest.json: top level must be an object");

  if (!manifest.contains("format_version") || !manifest["format_version"].is_number_integer()) {
    throw FormatError("manifest.json: missing integer format_version");
  }
  const int version = manifest["format_version"].get<int>();
  if (version != kFormatVersion) {
    throw UnsupportedVersionError("manifest.json: unsupported format_version " +
                                  std::to_string(version));
  }
  if (manifest.value("dtype", "") != "f32") throw FormatError("manifest.json: dtype must be \"f32\"");
  if (manifest.value("byte_order", "") != "little") {
    throw FormatError("manifest.json: byte_order must be \"little\"");
  }

  TraceSet t;
  t.n_samples = positive_field(manifest, "n_samples");
  t.n_layers = positive_field(manifest, "n_layers");
  t.d_model = positive_field(manifest, "d_model");
  const std::size_t label_dim = positive_field(manifest, "label_dim");
  if (!manifest.contains("label_kind") || !manifest["label_kind"].is_string()) {
    throw FormatError("manifest.json: missing label_kind");
  }
  try {
    t.label_spec.kind = label_kind_from_string(manifest["label_kind"].get<std::string>());
  } catch (const ValidationError& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }
  if (t.label_spec.kind == LabelKind::kCategorical) {
    t.label_spec.num_classes = positive_field(manifest, "num_classes");
  }

  const auto& files = manifest.contains("layer_files") ? manifest["layer_files"] : nlohmann::json();
  if (!files.is_array() || files.size() != t.n_layers) {
    throw FormatError("manifest.json: layer_files must list n_layers file names");
  }
  for (const auto& f : files) {
    if (!f.is_string()) throw FormatError("manifest.json: layer_files entries must be strings");
    t.activations.push_back(read_tensor(directory / f.get<std::string>(), t.n_samples, t.d_model));
  }
  const std::string label_file = manifest.value("label_file", "labels.bin");
  t.labels = read_tensor(directory / label_file, t.n_samples, label_dim);

  if (manifest.contains("provenance")) {
    const auto& p = manifest["provenance"];
    if (!p.is_object()) throw FormatError("manifest.json: provenance must be an object");
    for (const auto& [key, value] : p.items()) {
      t.provenance[key] = value.is_string() ? value.get<std::string>() : value.dump();
    }
  }

  try {
    validate(t);
  } catch (const FormatError&) {
    throw;
  } catch (const ValidationError& e) {
    throw FormatError(std::string("trace directory ") + directory.string() + ": " + e.what());
  }
  return t;
}

}  // namespace nullprobe
