#include "nullprobe/synthetic_task.hpp"

#include "nullprobe/errors.hpp"
#include "nullprobe/rng.hpp"

#include <numeric>

namespace nullprobe {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kTokenSentiment: return "token_sentiment";
    case TaskKind::kTokenTag: return "token_tag";
    case TaskKind::kTokenCoords: return "token_coords";
  }
  return "unknown";
}

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "token_sentiment") return TaskKind::kTokenSentiment;
  if (name == "token_tag") return TaskKind::kTokenTag;
  if (name == "token_coords") return TaskKind::kTokenCoords;
  throw ValidationError("unknown task kind '" + name + "'");
}

SyntheticTask::SyntheticTask(const TaskParams& params) : params_(params) {
  const std::size_t v = params.vocab_size;
  if (v < 2 || params.seq_len == 0) throw ValidationError("task: vocab_size >= 2 and seq_len >= 1 required");

  Rng rng(derive_seed(params.seed, 1));
  polarity_.assign(v, 0);
  tags_.assign(v, 0);
  coords_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(v), 2);

  switch (params.kind) {
    case TaskKind::kTokenSentiment: {
      if (params.n_positive == 0 || params.n_negative == 0 ||
          params.n_positive + params.n_negative >= v) {
        throw ValidationError("task: need n_positive, n_negative >= 1 and at least one neutral token");
      }
      if (!(params.sentiment_rate > 0.0 && params.sentiment_rate <= 1.0)) {
        throw ValidationError("task: sentiment_rate must be in (0, 1]");
      }
      if (!(params.label_noise >= 0.0 && params.label_noise <= 1.0)) {
        throw ValidationError("task: label_noise must be in [0, 1]");
      }
      std::vector<int> order(v);
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(std::span<int>(order));
      for (std::size_t i = 0; i < v; ++i) {
        const int tok = order[i];
        if (i < params.n_positive) {
          polarity_[static_cast<std::size_t>(tok)] = 1;
        } else if (i < params.n_positive + params.n_negative) {
          polarity_[static_cast<std::size_t>(tok)] = -1;
        }
      }
      for (std::size_t t = 0; t < v; ++t) {
        const int tok = static_cast<int>(t);
        (polarity_[t] > 0 ? positive_ : polarity_[t] < 0 ? negative_ : neutral_).push_back(tok);
      }
      break;
    }
    case TaskKind::kTokenTag:
      if (params.num_tags < 2) throw ValidationError("task: num_tags must be >= 2");
      if (!(params.tag_noise >= 0.0 && params.tag_noise <= 1.0)) {
        throw ValidationError("task: tag_noise must be in [0, 1]");
      }
      for (std::size_t t = 0; t < v; ++t) tags_[t] = static_cast<int>(rng.below(params.num_tags));
      break;
    case TaskKind::kTokenCoords:
      if (!(params.coord_noise >= 0.0)) throw ValidationError("task: coord_noise must be >= 0");
      for (std::size_t t = 0; t < v; ++t) {
        coords_(static_cast<Eigen::Index>(t), 0) = rng.gaussian();
        coords_(static_cast<Eigen::Index>(t), 1) = rng.gaussian();
      }
      break;
  }
}

std::vector<int> SyntheticTask::sample_input(std::uint64_t seed) const {
  Rng rng(seed);
  const std::size_t n = params_.seq_len;
  std::vector<int> tokens(n);
  if (params_.kind != TaskKind::kTokenSentiment) {
    for (auto& t : tokens) t = static_cast<int>(rng.below(params_.vocab_size));
    return tokens;
  }
  std::vector<bool> is_sentiment(n);
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    is_sentiment[i] = rng.uniform() < params_.sentiment_rate;
    count += is_sentiment[i] ? 1 : 0;
  }
  if (count % 2 == 0) {
    // Toggle the last position to make the count odd; ties cannot occur.
    is_sentiment[n - 1] = !is_sentiment[n - 1];
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (is_sentiment[i]) {
      const auto& pool = rng.uniform() < 0.5 ? positive_ : negative_;
      tokens[i] = pool[rng.below(pool.size())];
    } else {
      tokens[i] = neutral_[rng.below(neutral_.size())];
    }
  }
  return tokens;
}

std::uint64_t SyntheticTask::label_stream(const std::vector<int>& tokens) const {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (int t : tokens) {
    h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(t));
    h *= 0x100000001B3ULL;
  }
  return derive_seed(params_.seed ^ h, 2);
}

Eigen::MatrixXd SyntheticTask::labels_for(const std::vector<int>& tokens) const {
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= params_.vocab_size) {
      throw ValidationError("task: token id out of range");
    }
  }
  switch (params_.kind) {
    case TaskKind::kTokenSentiment: {
      int balance = 0;
      int last = 0;
      for (int t : tokens) {
        const int p = polarity_[static_cast<std::size_t>(t)];
        balance += p;
        if (p != 0) last = p;
      }
      Eigen::MatrixXd y(1, 1);
      y(0, 0) = balance > 0 ? 1.0 : balance < 0 ? 0.0 : (last > 0 ? 1.0 : 0.0);
      if (params_.label_noise > 0.0) {
        Rng rng(label_stream(tokens));
        if (rng.uniform() < params_.label_noise) y(0, 0) = rng.uniform() < 0.5 ? 1.0 : 0.0;
      }
      return y;
    }
    case TaskKind::kTokenTag: {
      Rng rng(label_stream(tokens));
      Eigen::MatrixXd y(static_cast<Eigen::Index>(tokens.size()), 1);
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        const bool contextual = i > 0 && rng.uniform() < params_.tag_noise;
        const int source = contextual ? tokens[i - 1] : tokens[i];
        y(static_cast<Eigen::Index>(i), 0) = tags_[static_cast<std::size_t>(source)];
      }
      return y;
    }
    case TaskKind::kTokenCoords: {
      Rng rng(label_stream(tokens));
      Eigen::MatrixXd y = Eigen::MatrixXd::Zero(1, 2);
      for (int t : tokens) y += coords_.row(t);
      y /= static_cast<double>(tokens.size());
      y(0, 0) += params_.coord_noise * rng.gaussian();
      y(0, 1) += params_.coord_noise * rng.gaussian();
      return y;
    }
  }
  return {};
}

LabelSpec SyntheticTask::label_spec() const {
  switch (params_.kind) {
    case TaskKind::kTokenSentiment: return {LabelKind::kBinary, 0};
    case TaskKind::kTokenTag: return {LabelKind::kCategorical, params_.num_tags};
    case TaskKind::kTokenCoords: return {LabelKind::kRealVector, 0};
  }
  return {};
}

std::size_t SyntheticTask::label_dim() const {
  return params_.kind == TaskKind::kTokenCoords ? 2 : 1;
}

Eigen::MatrixXd SyntheticTask::token_features() const {
  const auto v = static_cast<Eigen::Index>(params_.vocab_size);
  switch (params_.kind) {
    case TaskKind::kTokenSentiment: {
      Eigen::MatrixXd f(v, 1);
      for (Eigen::Index t = 0; t < v; ++t) f(t, 0) = polarity_[static_cast<std::size_t>(t)];
      return f;
    }
    case TaskKind::kTokenTag: {
      Eigen::MatrixXd f = Eigen::MatrixXd::Zero(v, static_cast<Eigen::Index>(params_.num_tags));
      for (Eigen::Index t = 0; t < v; ++t) f(t, tags_[static_cast<std::size_t>(t)]) = 1.0;
      return f;
    }
    case TaskKind::kTokenCoords:
      return coords_;
  }
  return {};
}

}  // namespace nullprobe
