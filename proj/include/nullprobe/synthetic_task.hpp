#pragma once

// Synthetic probing tasks that stand in for sentiment, tagging and geospatial
// probing datasets at desk scale.
//
// token_sentiment  Each position is a sentiment token with probability
//                  `sentiment_rate` (positive or negative with equal odds,
//                  uniform within each set), otherwise a uniform neutral token.
//                  The generator keeps the number of sentiment tokens odd.
//                  Label = 1 if positives outnumber negatives, else 0; on a tie
//                  (only possible for hand-built inputs) the polarity of the last
//                  sentiment token decides, and no sentiment token means 0.
//                  With probability `label_noise` the label is a fair coin flip.
// token_tag        Uniform tokens; every token type has a tag in [0, num_tags).
//                  One label per position: the tag of the token, except with
//                  probability `tag_noise` the tag of the previous token.
// token_coords     Uniform tokens; every token type has a latent 2-D coordinate
//                  drawn N(0, I). Label = mean coordinate over positions plus
//                  N(0, coord_noise^2 I).
//
// Token sets, tag maps and coordinates are fixed by `seed`. Any label noise is
// drawn from a stream keyed on (seed, token sequence), so labels are a function
// of (seed, tokens) only.

#include "nullprobe/trace_model.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace nullprobe {

enum class TaskKind { kTokenSentiment, kTokenTag, kTokenCoords };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& name);

struct TaskParams {
  TaskKind kind = TaskKind::kTokenSentiment;
  std::uint64_t seed = 0;
  std::size_t vocab_size = 100;
  std::size_t seq_len = 16;
  // token_sentiment
  std::size_t n_positive = 10;
  std::size_t n_negative = 10;
  double sentiment_rate = 0.5;
  double label_noise = 0.0;  // chance the label is replaced by a fair coin; 1 = pure noise
  // token_tag
  std::size_t num_tags = 5;
  double tag_noise = 0.1;
  // token_coords
  double coord_noise = 0.1;
};

class SyntheticTask {
 public:
  explicit SyntheticTask(const TaskParams& params);

  const TaskParams& params() const { return params_; }
  TaskKind kind() const { return params_.kind; }

  // One input sequence of length seq_len.
  std::vector<int> sample_input(std::uint64_t seed) const;
  // Label rows for one input: 1 row for sentiment/coords, seq_len rows for tags.
  Eigen::MatrixXd labels_for(const std::vector<int>& tokens) const;

  LabelSpec label_spec() const;
  std::size_t label_dim() const;
  bool per_token_rows() const { return params_.kind == TaskKind::kTokenTag; }

  // Per-token-type label features used when planting signal into a model:
  // polarity (+1/-1/0) for sentiment, one-hot tag for tagging, coordinates for coords.
  Eigen::MatrixXd token_features() const;
  int polarity(int token) const { return polarity_[static_cast<std::size_t>(token)]; }
  int tag(int token) const { return tags_[static_cast<std::size_t>(token)]; }
  const Eigen::MatrixXd& coordinates() const { return coords_; }

 private:
  std::uint64_t label_stream(const std::vector<int>& tokens) const;

  TaskParams params_;
  std::vector<int> polarity_;  // per token type
  std::vector<int> positive_, negative_, neutral_;
  std::vector<int> tags_;
  Eigen::MatrixXd coords_;  // vocab x 2
};

}  // namespace nullprobe
