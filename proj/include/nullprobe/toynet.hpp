#pragma once

// A seeded, untrained pre-layer-norm transformer encoder.
//
// Representation layer 0 is token embedding + position embedding; layer l
// (1..n_layers) is the residual stream after block l. Each block computes
//   x += Attn(LN1(x)) ;  x += W_out^T GELU(W_in^T LN2(x))
// with bidirectional multi-head attention and no biases.
//
// Initialization draws every weight i.i.d. N(0, init_std^2) from one Rng stream
// in this order, each tensor row-major: token_embedding, position_embedding,
// then per block wq, wk, wv, wo, w_in, w_out. Layer-norm scale = 1, shift = 0.

#include "nullprobe/synthetic_task.hpp"
#include "nullprobe/trace_model.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nullprobe {

struct ToyModelConfig {
  std::size_t vocab_size = 100;
  std::size_t d_model = 32;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_ff = 64;
  std::size_t max_seq_len = 16;
  double init_std = 0.02;

  std::size_t head_dim() const { return d_model / n_heads; }
};

void validate(const ToyModelConfig& config);

struct BlockParams {
  Eigen::VectorXd ln1_scale, ln1_shift;
  Eigen::MatrixXd wq, wk, wv, wo;  // d_model x d_model, applied as rows * W
  Eigen::VectorXd ln2_scale, ln2_shift;
  Eigen::MatrixXd w_in;   // d_model x d_ff
  Eigen::MatrixXd w_out;  // d_ff x d_model
};

struct ToyModel {
  ToyModelConfig config;
  std::uint64_t seed = 0;
  std::string lineage;  // human-readable history, e.g. "init(7)|plant(layer=4)"
  Eigen::MatrixXd token_embedding;     // vocab x d_model
  Eigen::MatrixXd position_embedding;  // max_seq_len x d_model
  std::vector<BlockParams> blocks;

  // FNV-1a over the bytes of every parameter in initialization order.
  std::uint64_t checksum() const;
};

enum class RandomizationScope { kAll, kBlocksOnly, kEmbeddingsOnly };

std::string to_string(RandomizationScope scope);
RandomizationScope scope_from_string(const std::string& name);

ToyModel init_model(const ToyModelConfig& config, std::uint64_t seed);

// Re-draws the parameter groups inside `scope` from a fresh stream seeded by
// `seed`, in initialization order; layer norms inside scope return to (1, 0).
// Groups outside scope are copied bit for bit. randomize(m, kAll, s) equals
// init_model(m.config, s) up to lineage.
ToyModel randomize(const ToyModel& model, RandomizationScope scope, std::uint64_t seed);

// Optional capture of internals for inspection. Entries are indexed by block
// (0-based) and hold data for the first sequence of the batch only.
struct ForwardRecorder {
  std::vector<Eigen::MatrixXd> ln1_normalized;  // seq x d, before scale/shift
  std::vector<Eigen::MatrixXd> ln2_normalized;
  std::vector<std::vector<Eigen::MatrixXd>> attention;  // [block][head] seq x seq
};

// Overwrites activations during the forward pass. Without `head` the rows of
// representation layer `layer` at `positions` are replaced by `values`
// (positions x d_model). With `head`, the output of that head in block `layer`
// (1-based) is replaced before the output projection (positions x head_dim).
struct Patch {
  std::size_t layer = 0;
  std::vector<std::size_t> positions;
  std::optional<std::size_t> head;
  Eigen::MatrixXd values;
};

// Returns n_layers + 1 matrices, each seq_len x d_model.
std::vector<Eigen::MatrixXd> forward(const ToyModel& model, std::span<const int> tokens,
                                     ForwardRecorder* recorder = nullptr);

std::vector<Eigen::MatrixXd> forward_with_intervention(const ToyModel& model,
                                                       std::span<const int> tokens,
                                                       const Patch& patch);
std::vector<Eigen::MatrixXd> forward_with_intervention(const ToyModel& model,
                                                       std::span<const int> tokens,
                                                       std::span<const Patch> patches);

// Equal-length batch; each layer is (batch * seq_len) x d_model, sample-major.
std::vector<Eigen::MatrixXd> forward_batch(const ToyModel& model,
                                           const std::vector<std::vector<int>>& batch);

// Row-wise layer norm without scale/shift.
Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& x);
double gelu(double x);

// Inputs for a trace run: which task, how many inputs, and the input stream.
struct TraceRecipe {
  TaskParams task;
  std::size_t n_samples = 300;
  std::uint64_t input_seed = 0;
};

std::vector<std::vector<int>> sample_inputs(const SyntheticTask& task, std::size_t n,
                                            std::uint64_t seed);

// Runs the model over n sampled inputs and records every layer. Sentiment and
// coords tasks are mean-pooled over positions (one row per input); token_tag
// emits one row per token (n * seq_len rows).
TraceSet generate_traces(const ToyModel& model, const SyntheticTask& task, std::size_t n_samples,
                         std::uint64_t seed);
TraceSet generate_traces(const ToyModel& model, const TraceRecipe& recipe);

// Signal planting, the stand-in for training.
//
// layer == 0: token embeddings become (1 - alpha) * E + alpha * amplitude * F D^T,
//   where F holds the task's per-token label features and D orthonormal
//   mean-zero directions. The signal is linearly readable at every layer.
// layer >= 1 (token_sentiment only): embeddings carry a sign-scrambled code
//   (positive tokens +-amplitude along u, negatives +-amplitude along w, fixed
//   random sign per token) that no linear probe can read after pooling; block
//   `layer`'s MLP is mixed with a decoder writing |z_u| - |z_w| along a third
//   direction r. The signal becomes linearly readable from representation
//   `layer` upward.
struct PlantSpec {
  double alpha = 0.0;
  std::size_t layer = 0;
  std::uint64_t seed = 0;
  double amplitude = 1.0;
};

ToyModel plant_signal(const ToyModel& model, const SyntheticTask& task, const PlantSpec& spec);

// Hand-built model with two heads that both suppress one MLP readout unit:
// ablating either head alone leaves `readout` unchanged to ~1e-10, ablating
// both moves it by ~10.
struct RedundancyDemo {
  ToyModel model;
  std::vector<int> tokens;
  Eigen::VectorXd readout;  // direction on the pooled final layer
  std::size_t block = 1;
  std::size_t head_a = 0;
  std::size_t head_b = 1;
};

RedundancyDemo make_redundancy_demo(std::uint64_t seed);
double pooled_readout(const std::vector<Eigen::MatrixXd>& layers, const Eigen::VectorXd& direction);

}  // namespace nullprobe
