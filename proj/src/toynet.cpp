#include "nullprobe/toynet.hpp"

#include "nullprobe/errors.hpp"
#include "nullprobe/rng.hpp"

#include <Eigen/QR>

#include <cmath>
#include <cstring>
#include <numbers>
#include <numeric>

namespace nullprobe {

namespace {

constexpr double kLayerNormEps = 1e-12;

void fill_gaussian(Eigen::MatrixXd& m, Rng& rng, double std) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = std * rng.gaussian();
  }
}

void reset_layer_norms(BlockParams& b, std::size_t d) {
  const auto n = static_cast<Eigen::Index>(d);
  b.ln1_scale = Eigen::VectorXd::Ones(n);
  b.ln1_shift = Eigen::VectorXd::Zero(n);
  b.ln2_scale = Eigen::VectorXd::Ones(n);
  b.ln2_shift = Eigen::VectorXd::Zero(n);
}

void draw_embeddings(ToyModel& m, Rng& rng) {
  const double s = m.config.init_std;
  fill_gaussian(m.token_embedding, rng, s);
  fill_gaussian(m.position_embedding, rng, s);
}

void draw_block(BlockParams& b, Rng& rng, double s) {
  fill_gaussian(b.wq, rng, s);
  fill_gaussian(b.wk, rng, s);
  fill_gaussian(b.wv, rng, s);
  fill_gaussian(b.wo, rng, s);
  fill_gaussian(b.w_in, rng, s);
  fill_gaussian(b.w_out, rng, s);
}

ToyModel allocate(const ToyModelConfig& c) {
  ToyModel m;
  m.config = c;
  const auto d = static_cast<Eigen::Index>(c.d_model);
  const auto ff = static_cast<Eigen::Index>(c.d_ff);
  m.token_embedding.resize(static_cast<Eigen::Index>(c.vocab_size), d);
  m.position_embedding.resize(static_cast<Eigen::Index>(c.max_seq_len), d);
  m.blocks.resize(c.n_layers);
  for (auto& b : m.blocks) {
    b.wq.resize(d, d);
    b.wk.resize(d, d);
    b.wv.resize(d, d);
    b.wo.resize(d, d);
    b.w_in.resize(d, ff);
    b.w_out.resize(ff, d);
    reset_layer_norms(b, c.d_model);
  }
  return m;
}

template <typename Derived>
void hash_bytes(std::uint64_t& h, const Eigen::DenseBase<Derived>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double v = m(r, c);
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char byte : bytes) {
        h ^= byte;
        h *= 0x100000001B3ULL;
      }
    }
  }
}

Eigen::MatrixXd apply_layer_norm(const Eigen::MatrixXd& x, const Eigen::VectorXd& scale,
                                 const Eigen::VectorXd& shift, Eigen::MatrixXd* normalized_out) {
  Eigen::MatrixXd n = normalize_rows(x);
  if (normalized_out != nullptr) *normalized_out = n;
  return (n.array().rowwise() * scale.transpose().array()).rowwise() + shift.transpose().array();
}

void softmax_rows(Eigen::MatrixXd& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double mx = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - mx).exp();
    s.row(r) /= s.row(r).sum();
  }
}

void check_tokens(const ToyModel& model, std::span<const int> tokens) {
  if (tokens.empty()) throw ValidationError("forward: empty token sequence");
  if (tokens.size() > model.config.max_seq_len) {
    throw ValidationError("forward: sequence length " + std::to_string(tokens.size()) +
                          " exceeds max_seq_len " + std::to_string(model.config.max_seq_len));
  }
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= model.config.vocab_size) {
      throw ValidationError("forward: token id " + std::to_string(t) + " out of range [0, " +
                            std::to_string(model.config.vocab_size) + ")");
    }
  }
}

void check_patch(const ToyModel& model, std::size_t seq_len, const Patch& p) {
  const auto& c = model.config;
  if (p.layer > c.n_layers) throw ValidationError("patch: layer out of range");
  if (p.positions.empty()) throw ValidationError("patch: no positions selected");
  for (auto pos : p.positions) {
    if (pos >= seq_len) throw ValidationError("patch: position out of range");
  }
  std::size_t width = c.d_model;
  if (p.head) {
    if (p.layer == 0) throw ValidationError("patch: head patches need a block layer >= 1");
    if (*p.head >= c.n_heads) throw ValidationError("patch: head index out of range");
    width = c.head_dim();
  }
  if (static_cast<std::size_t>(p.values.rows()) != p.positions.size() ||
      static_cast<std::size_t>(p.values.cols()) != width) {
    throw ValidationError("patch: values must be " + std::to_string(p.positions.size()) + "x" +
                          std::to_string(width) + ", got " + std::to_string(p.values.rows()) + "x" +
                          std::to_string(p.values.cols()));
  }
}

// Shared forward pass over an equal-length batch.
std::vector<Eigen::MatrixXd> run(const ToyModel& model,
                                 const std::vector<std::vector<int>>& batch,
                                 std::span<const Patch> patches, ForwardRecorder* recorder) {
  const auto& c = model.config;
  const std::size_t seq = batch.front().size();
  for (const auto& tokens : batch) {
    if (tokens.size() != seq) throw ValidationError("forward_batch: sequences must share a length");
    check_tokens(model, tokens);
  }
  for (const auto& p : patches) check_patch(model, seq, p);

  const auto d = static_cast<Eigen::Index>(c.d_model);
  const auto s = static_cast<Eigen::Index>(seq);
  const auto hd = static_cast<Eigen::Index>(c.head_dim());
  const auto rows = static_cast<Eigen::Index>(batch.size()) * s;

  auto patch_residual = [&](Eigen::MatrixXd& x, std::size_t layer) {
    for (const auto& p : patches) {
      if (p.head || p.layer != layer) continue;
      for (Eigen::Index n = 0; n < static_cast<Eigen::Index>(batch.size()); ++n) {
        for (std::size_t j = 0; j < p.positions.size(); ++j) {
          x.row(n * s + static_cast<Eigen::Index>(p.positions[j])) = p.values.row(static_cast<Eigen::Index>(j));
        }
      }
    }
  };

  Eigen::MatrixXd x(rows, d);
  for (Eigen::Index n = 0; n < static_cast<Eigen::Index>(batch.size()); ++n) {
    for (Eigen::Index i = 0; i < s; ++i) {
      x.row(n * s + i) = model.token_embedding.row(batch[static_cast<std::size_t>(n)][static_cast<std::size_t>(i)]) +
                         model.position_embedding.row(i);
    }
  }
  patch_residual(x, 0);

  std::vector<Eigen::MatrixXd> layers;
  layers.reserve(c.n_layers + 1);
  layers.push_back(x);

  if (recorder != nullptr) *recorder = ForwardRecorder{};
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& b = model.blocks[l];
    Eigen::MatrixXd n1;
    const Eigen::MatrixXd h = apply_layer_norm(x, b.ln1_scale, b.ln1_shift, &n1);
    Eigen::MatrixXd wqkv(d, 3 * d);
    wqkv << b.wq, b.wk, b.wv;
    const Eigen::MatrixXd qkv = h * wqkv;
    Eigen::MatrixXd heads(rows, d);
    if (recorder != nullptr) {
      recorder->ln1_normalized.push_back(n1.topRows(s));
      recorder->attention.emplace_back();
    }
    // Per-sequence attention blocks are tiny; lazy products skip the blocked
    // GEMM path and its temporaries.
    Eigen::MatrixXd scores(s, s);
    for (Eigen::Index n = 0; n < static_cast<Eigen::Index>(batch.size()); ++n) {
      for (Eigen::Index head = 0; head < static_cast<Eigen::Index>(c.n_heads); ++head) {
        const auto qh = qkv.block(n * s, head * hd, s, hd);
        const auto kh = qkv.block(n * s, d + head * hd, s, hd);
        const auto vh = qkv.block(n * s, 2 * d + head * hd, s, hd);
        scores.noalias() = qh.lazyProduct(kh.transpose());
        scores *= inv_sqrt;
        softmax_rows(scores);
        heads.block(n * s, head * hd, s, hd).noalias() = scores.lazyProduct(vh);
        if (recorder != nullptr && n == 0) recorder->attention.back().push_back(scores);
      }
    }
    for (const auto& p : patches) {
      if (!p.head || p.layer != l + 1) continue;
      const auto head = static_cast<Eigen::Index>(*p.head);
      for (Eigen::Index n = 0; n < static_cast<Eigen::Index>(batch.size()); ++n) {
        for (std::size_t j = 0; j < p.positions.size(); ++j) {
          heads.block(n * s + static_cast<Eigen::Index>(p.positions[j]), head * hd, 1, hd) =
              p.values.row(static_cast<Eigen::Index>(j));
        }
      }
    }
    x += heads * b.wo;

    Eigen::MatrixXd n2;
    const Eigen::MatrixXd h2 = apply_layer_norm(x, b.ln2_scale, b.ln2_shift, &n2);
    if (recorder != nullptr) recorder->ln2_normalized.push_back(n2.topRows(s));
    Eigen::MatrixXd hidden = h2 * b.w_in;
    hidden = hidden.unaryExpr([](double z) { return gelu(z); });
    x += hidden * b.w_out;

    patch_residual(x, l + 1);
    layers.push_back(x);
  }
  return layers;
}

// k orthonormal directions in R^d, each orthogonal to the all-ones vector.
Eigen::MatrixXd mean_zero_directions(std::size_t d, std::size_t k, std::uint64_t seed) {
  if (k + 1 > d) throw ValidationError("plant: d_model too small for the requested directions");
  Rng rng(seed);
  Eigen::MatrixXd basis(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k + 1));
  basis.col(0).setOnes();
  for (Eigen::Index j = 1; j <= static_cast<Eigen::Index>(k); ++j) {
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(d); ++i) basis(i, j) = rng.gaussian();
  }
  // Modified Gram-Schmidt keeps column order, so column 0 stays along ones.
  for (Eigen::Index j = 0; j < basis.cols(); ++j) {
    for (Eigen::Index p = 0; p < j; ++p) basis.col(j) -= basis.col(p).dot(basis.col(j)) * basis.col(p);
    basis.col(j).normalize();
  }
  return basis.rightCols(static_cast<Eigen::Index>(k));
}

}  // namespace

void validate(const ToyModelConfig& c) {
  if (c.vocab_size == 0 || c.d_model == 0 || c.n_layers == 0 || c.n_heads == 0 || c.d_ff == 0 ||
      c.max_seq_len == 0) {
    throw ValidationError("model config: all dimensions must be >= 1");
  }
  if (c.d_model % c.n_heads != 0) {
    throw ValidationError("model config: d_model must be divisible by n_heads");
  }
  if (!(c.init_std >= 0.0) || !std::isfinite(c.init_std)) {
    throw ValidationError("model config: init_std must be finite and nonnegative");
  }
}

std::uint64_t ToyModel::checksum() const {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  hash_bytes(h, token_embedding);
  hash_bytes(h, position_embedding);
  for (const auto& b : blocks) {
    hash_bytes(h, b.wq);
    hash_bytes(h, b.wk);
    hash_bytes(h, b.wv);
    hash_bytes(h, b.wo);
    hash_bytes(h, b.w_in);
    hash_bytes(h, b.w_out);
    hash_bytes(h, b.ln1_scale);
    hash_bytes(h, b.ln1_shift);
    hash_bytes(h, b.ln2_scale);
    hash_bytes(h, b.ln2_shift);
  }
  return h;
}

std::string to_string(RandomizationScope scope) {
  switch (scope) {
    case RandomizationScope::kAll: return "all";
    case RandomizationScope::kBlocksOnly: return "blocks_only";
    case RandomizationScope::kEmbeddingsOnly: return "embeddings_only";
  }
  return "unknown";
}

RandomizationScope scope_from_string(const std::string& name) {
  if (name == "all") return RandomizationScope::kAll;
  if (name == "blocks_only") return RandomizationScope::kBlocksOnly;
  if (name == "embeddings_only") return RandomizationScope::kEmbeddingsOnly;
  throw ValidationError("unknown randomization scope '" + name + "'");
}

ToyModel init_model(const ToyModelConfig& config, std::uint64_t seed) {
  validate(config);
  ToyModel m = allocate(config);
  m.seed = seed;
  m.lineage = "init(" + std::to_string(seed) + ")";
  Rng rng(seed);
  draw_embeddings(m, rng);
  for (auto& b : m.blocks) draw_block(b, rng, config.init_std);
  return m;
}

ToyModel randomize(const ToyModel& model, RandomizationScope scope, std::uint64_t seed) {
  ToyModel m = model;
  m.lineage += "|randomize(" + to_string(scope) + "," + std::to_string(seed) + ")";
  Rng rng(seed);
  if (scope != RandomizationScope::kBlocksOnly) draw_embeddings(m, rng);
  if (scope != RandomizationScope::kEmbeddingsOnly) {
    for (auto& b : m.blocks) {
      draw_block(b, rng, m.config.init_std);
      reset_layer_norms(b, m.config.d_model);
    }
  }
  return m;
}

Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  const double inv_d = 1.0 / static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() * inv_d;
    const auto centered = x.row(r).array() - mean;
    const double var = centered.square().sum() * inv_d;
    out.row(r) = centered / std::sqrt(var + kLayerNormEps);
  }
  return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

std::vector<Eigen::MatrixXd> forward(const ToyModel& model, std::span<const int> tokens,
                                     ForwardRecorder* recorder) {
  return run(model, {std::vector<int>(tokens.begin(), tokens.end())}, {}, recorder);
}

std::vector<Eigen::MatrixXd> forward_with_intervention(const ToyModel& model,
                                                       std::span<const int> tokens,
                                                       const Patch& patch) {
  return forward_with_intervention(model, tokens, std::span<const Patch>(&patch, 1));
}

std::vector<Eigen::MatrixXd> forward_with_intervention(const ToyModel& model,
                                                       std::span<const int> tokens,
                                                       std::span<const Patch> patches) {
  return run(model, {std::vector<int>(tokens.begin(), tokens.end())}, patches, nullptr);
}

std::vector<Eigen::MatrixXd> forward_batch(const ToyModel& model,
                                           const std::vector<std::vector<int>>& batch) {
  if (batch.empty()) throw ValidationError("forward_batch: empty batch");
  return run(model, batch, {}, nullptr);
}

std::vector<std::vector<int>> sample_inputs(const SyntheticTask& task, std::size_t n,
                                            std::uint64_t seed) {
  std::vector<std::vector<int>> inputs;
  inputs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) inputs.push_back(task.sample_input(derive_seed(seed, i + 1)));
  return inputs;
}

TraceSet generate_traces(const ToyModel& model, const SyntheticTask& task, std::size_t n_samples,
                         std::uint64_t seed) {
  if (n_samples == 0) throw ValidationError("generate_traces: n_samples must be >= 1");
  const auto& tp = task.params();
  if (tp.vocab_size > model.config.vocab_size) {
    throw ValidationError("generate_traces: task vocabulary larger than the model's");
  }
  if (tp.seq_len > model.config.max_seq_len) {
    throw ValidationError("generate_traces: task seq_len exceeds max_seq_len");
  }

  const auto inputs = sample_inputs(task, n_samples, seed);
  const auto s = static_cast<Eigen::Index>(tp.seq_len);
  const auto d = static_cast<Eigen::Index>(model.config.d_model);
  const bool per_token = task.per_token_rows();
  const auto rows = static_cast<Eigen::Index>(n_samples) * (per_token ? s : 1);

  TraceSet t;
  t.n_layers = model.config.n_layers + 1;
  t.d_model = model.config.d_model;
  t.n_samples = static_cast<std::size_t>(rows);
  t.label_spec = task.label_spec();
  t.activations.assign(t.n_layers, FloatMatrix(rows, d));
  t.labels.resize(rows, static_cast<Eigen::Index>(task.label_dim()));

  // Chunked to bound memory on large runs.
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < n_samples; start += kChunk) {
    const std::size_t end = std::min(n_samples, start + kChunk);
    std::vector<std::vector<int>> batch(inputs.begin() + static_cast<std::ptrdiff_t>(start),
                                        inputs.begin() + static_cast<std::ptrdiff_t>(end));
    const auto layers = forward_batch(model, batch);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (std::size_t i = start; i < end; ++i) {
        const auto local = static_cast<Eigen::Index>(i - start) * s;
        if (per_token) {
          t.activations[l].middleRows(static_cast<Eigen::Index>(i) * s, s) =
              layers[l].middleRows(local, s).cast<float>();
        } else {
          t.activations[l].row(static_cast<Eigen::Index>(i)) =
              layers[l].middleRows(local, s).colwise().mean().cast<float>();
        }
      }
    }
    for (std::size_t i = start; i < end; ++i) {
      const Eigen::MatrixXd y = task.labels_for(inputs[i]);
      t.labels.middleRows(static_cast<Eigen::Index>(i) * y.rows(), y.rows()) = y.cast<float>();
    }
  }

  t.provenance["model"] = model.lineage;
  t.provenance["model_checksum"] = std::to_string(model.checksum());
  t.provenance["task"] = to_string(tp.kind);
  t.provenance["task_seed"] = std::to_string(tp.seed);
  t.provenance["input_seed"] = std::to_string(seed);
  t.provenance["pooling"] = per_token ? "per_token" : "mean_tokens";
  return t;
}

TraceSet generate_traces(const ToyModel& model, const TraceRecipe& recipe) {
  return generate_traces(model, SyntheticTask(recipe.task), recipe.n_samples, recipe.input_seed);
}

ToyModel plant_signal(const ToyModel& model, const SyntheticTask& task, const PlantSpec& spec) {
  if (!(spec.alpha >= 0.0 && spec.alpha <= 1.0)) throw ValidationError("plant: alpha must be in [0, 1]");
  if (spec.layer > model.config.n_layers) throw ValidationError("plant: layer out of range");
  if (task.params().vocab_size > model.config.vocab_size) {
    throw ValidationError("plant: task vocabulary larger than the model's");
  }
  ToyModel m = model;
  m.lineage += "|plant(alpha=" + std::to_string(spec.alpha) + ",layer=" + std::to_string(spec.layer) +
               ",seed=" + std::to_string(spec.seed) + ")";
  const double a = spec.alpha;
  const auto vocab = static_cast<Eigen::Index>(task.params().vocab_size);
  const std::size_t d = m.config.d_model;

  if (spec.layer == 0) {
    const Eigen::MatrixXd features = task.token_features();
    const Eigen::MatrixXd dirs = mean_zero_directions(d, static_cast<std::size_t>(features.cols()), spec.seed);
    const Eigen::MatrixXd planted = spec.amplitude * features * dirs.transpose();
    m.token_embedding.topRows(vocab) = (1.0 - a) * m.token_embedding.topRows(vocab) + a * planted;
    return m;
  }

  if (task.kind() != TaskKind::kTokenSentiment) {
    throw ValidationError("plant: block-level planting is only defined for token_sentiment");
  }
  if (m.config.d_ff < 4) throw ValidationError("plant: block-level planting needs d_ff >= 4");
  const Eigen::MatrixXd dirs = mean_zero_directions(d, 3, spec.seed);
  const Eigen::VectorXd u = dirs.col(0), w = dirs.col(1), r = dirs.col(2);

  Rng rng(derive_seed(spec.seed, 1));
  // Signs alternate within each polarity class so the pooled code sums to zero
  // in expectation for either label.
  int pos_seen = 0, neg_seen = 0;
  std::vector<int> order(static_cast<std::size_t>(vocab));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<int>(order));
  Eigen::MatrixXd code = Eigen::MatrixXd::Zero(vocab, static_cast<Eigen::Index>(d));
  for (int tok : order) {
    const int p = task.polarity(tok);
    if (p > 0) {
      code.row(tok) = spec.amplitude * ((pos_seen++ % 2 == 0) ? 1.0 : -1.0) * u.transpose();
    } else if (p < 0) {
      code.row(tok) = spec.amplitude * ((neg_seen++ % 2 == 0) ? 1.0 : -1.0) * w.transpose();
    }
  }
  m.token_embedding.topRows(vocab) = (1.0 - a) * m.token_embedding.topRows(vocab) + a * code;

  constexpr double kGain = 1.0;
  constexpr double kWrite = 0.2;
  auto& b = m.blocks[spec.layer - 1];
  Eigen::MatrixXd dec_in = Eigen::MatrixXd::Zero(b.w_in.rows(), b.w_in.cols());
  dec_in.col(0) = kGain * u;
  dec_in.col(1) = -kGain * u;
  dec_in.col(2) = kGain * w;
  dec_in.col(3) = -kGain * w;
  Eigen::MatrixXd dec_out = Eigen::MatrixXd::Zero(b.w_out.rows(), b.w_out.cols());
  dec_out.row(0) = kWrite * r.transpose();
  dec_out.row(1) = kWrite * r.transpose();
  dec_out.row(2) = -kWrite * r.transpose();
  dec_out.row(3) = -kWrite * r.transpose();
  b.w_in = (1.0 - a) * b.w_in + a * dec_in;
  b.w_out = (1.0 - a) * b.w_out + a * dec_out;
  return m;
}

RedundancyDemo make_redundancy_demo(std::uint64_t seed) {
  ToyModelConfig c;
  c.vocab_size = 16;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 8;
  c.max_seq_len = 6;
  c.init_std = 0.02;

  RedundancyDemo demo;
  demo.model = init_model(c, seed);
  demo.model.lineage += "|redundancy_demo";
  auto& b = demo.model.blocks[0];
  b.wq.setZero();
  b.wk.setZero();
  b.wv.setZero();
  b.wo.setZero();
  b.w_in.setZero();
  b.w_out.setZero();

  const Eigen::MatrixXd dirs = mean_zero_directions(c.d_model, 3, derive_seed(seed, 7));
  const Eigen::VectorXd carrier = dirs.col(0), write = dirs.col(1), readout = dirs.col(2);

  // A large shared component gives both heads a constant value to copy.
  demo.model.position_embedding.rowwise() += carrier.transpose();
  const auto hd = static_cast<Eigen::Index>(c.head_dim());
  for (Eigen::Index head = 0; head < 2; ++head) {
    b.wv.col(head * hd) = carrier;
    b.wo.row(head * hd) = write.transpose();
  }
  // One unit fires only when neither head wrote along `write`.
  constexpr double kGain = 4.0;
  b.w_in.col(0) = kGain * (carrier - write);
  b.w_out.row(0) = readout.transpose();

  demo.readout = readout;
  Rng rng(derive_seed(seed, 8));
  demo.tokens.resize(c.max_seq_len);
  for (auto& t : demo.tokens) t = static_cast<int>(rng.below(c.vocab_size));
  return demo;
}

double pooled_readout(const std::vector<Eigen::MatrixXd>& layers, const Eigen::VectorXd& direction) {
  return layers.back().colwise().mean().dot(direction.transpose());
}

}  // namespace nullprobe
