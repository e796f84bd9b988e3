#pragma once

// Computational traces: per-layer pooled activations plus labels for a
// population of inputs, and the on-disk directory format shared with external
// producers.
//
// Directory layout (format_version 1):
//   manifest.json   UTF-8 JSON, keys sorted
//   layer_00.bin    n_samples x d_model float32, little-endian, row-major, no header
//   ...
//   labels.bin      n_samples x label_dim float32, same encoding

#include <Eigen/Core>

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace nullprobe {

using FloatMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class LabelKind { kBinary, kCategorical, kReal, kRealVector };

struct LabelSpec {
  LabelKind kind = LabelKind::kBinary;
  std::size_t num_classes = 0;  // categorical only

  bool is_classification() const {
    return kind == LabelKind::kBinary || kind == LabelKind::kCategorical;
  }
  // Number of distinct classes for classification labels (2 for binary).
  std::size_t class_count() const { return kind == LabelKind::kBinary ? 2 : num_classes; }

  friend bool operator==(const LabelSpec&, const LabelSpec&) = default;
};

std::string to_string(LabelKind kind);
LabelKind label_kind_from_string(const std::string& name);

struct TraceSet {
  std::size_t n_samples = 0;
  std::size_t n_layers = 0;
  std::size_t d_model = 0;
  std::vector<FloatMatrix> activations;  // n_layers entries, each n_samples x d_model
  FloatMatrix labels;                    // n_samples x label_dim
  LabelSpec label_spec;
  std::map<std::string, std::string> provenance;

  std::size_t label_dim() const { return static_cast<std::size_t>(labels.cols()); }

  // Layer activations upcast to double.
  Eigen::MatrixXd layer(std::size_t index) const;
  Eigen::MatrixXd labels_as_double() const;
  // Class index per row; requires a classification label of width 1.
  std::vector<int> class_labels() const;
};

// Throws ValidationError naming the first violated invariant.
void validate(const TraceSet& traces);

// Bitwise equality of all tensors plus shape, label spec and provenance.
bool bitwise_equal(const TraceSet& a, const TraceSet& b);

std::string layer_file_name(std::size_t layer);

void write_traces(const TraceSet& traces, const std::filesystem::path& directory);
TraceSet read_traces(const std::filesystem::path& directory);

}  // namespace nullprobe
