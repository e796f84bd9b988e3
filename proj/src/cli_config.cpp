#include "nullprobe/cli.hpp"

#include "nullprobe/errors.hpp"
#include "nullprobe/rng.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace nullprobe {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& message) {
  throw ValidationError("config: " + path + ": " + message);
}

// Reads one section, rejecting keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  // Call after the last read.
  void done() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) fail(key_path(key), "unknown key");
    }
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (const json* v = find(key)) out = convert<T>(*v, key_path(key));
  }

  template <typename T>
  bool read_optional(const std::string& key, T& out) {
    const json* v = find(key);
    if (v == nullptr) return false;
    out = convert<T>(*v, key_path(key));
    return true;
  }

 private:
  template <typename T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(path, "expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) fail(path, "expected a number");
      return v.get<double>();
    } else {
      static_assert(std::is_integral_v<T>);
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
        fail(path, "expected a non-negative integer");
      }
      return static_cast<T>(v.get<std::uint64_t>());
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Fn>
auto wrap(const std::string& path, Fn&& fn) {
  try {
    return fn();
  } catch (const ValidationError& e) {
    fail(path, e.what());
  }
}

}  // namespace

std::vector<std::size_t> parse_layer_list(const std::string& text) {
  auto number = [&](const std::string& s) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
      throw ValidationError("layers: cannot parse '" + text + "'");
    }
    return static_cast<std::size_t>(std::stoull(s));
  };
  std::vector<std::size_t> out;
  if (const auto colon = text.find(':'); colon != std::string::npos) {
    const std::size_t first = number(text.substr(0, colon));
    const std::size_t last = number(text.substr(colon + 1));
    if (last < first) throw ValidationError("layers: empty range '" + text + "'");
    for (std::size_t l = first; l <= last; ++l) out.push_back(l);
    return out;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(number(item));
  if (out.empty()) throw ValidationError("layers: empty list");
  return out;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Section top(j, "");
  top.read("seed", c.seed);
  top.read("threads", c.threads);

  bool model_seed = false;
  if (const json* m = top.find("model")) {
    Section s(*m, "model");
    s.read("vocab_size", c.model.vocab_size);
    s.read("d_model", c.model.d_model);
    s.read("n_layers", c.model.n_layers);
    s.read("n_heads", c.model.n_heads);
    s.read("d_ff", c.model.d_ff);
    s.read("max_seq_len", c.model.max_seq_len);
    s.read("init_std", c.model.init_std);
    model_seed = s.read_optional("seed", c.model_seed);
    s.done();
  }

  bool plant_seed = false;
  c.plant.layer = c.model.n_layers;
  if (const json* p = top.find("plant")) {
    Section s(*p, "plant");
    s.read("alpha", c.plant.alpha);
    s.read("layer", c.plant.layer);
    s.read("amplitude", c.plant.amplitude);
    plant_seed = s.read_optional("seed", c.plant.seed);
    s.done();
  }

  bool task_seed = false;
  c.task.vocab_size = c.model.vocab_size;
  c.task.seq_len = c.model.max_seq_len;
  if (const json* t = top.find("task")) {
    Section s(*t, "task");
    std::string kind = to_string(c.task.kind);
    s.read("kind", kind);
    c.task.kind = wrap("task.kind", [&] { return task_kind_from_string(kind); });
    task_seed = s.read_optional("seed", c.task.seed);
    s.read("vocab_size", c.task.vocab_size);
    s.read("seq_len", c.task.seq_len);
    s.read("n_positive", c.task.n_positive);
    s.read("n_negative", c.task.n_negative);
    s.read("sentiment_rate", c.task.sentiment_rate);
    s.read("label_noise", c.task.label_noise);
    s.read("num_tags", c.task.num_tags);
    s.read("tag_noise", c.task.tag_noise);
    s.read("coord_noise", c.task.coord_noise);
    s.done();
  }

  bool input_seed = false;
  if (const json* t = top.find("traces")) {
    Section s(*t, "traces");
    s.read("n_samples", c.n_samples);
    input_seed = s.read_optional("input_seed", c.input_seed);
    std::string dir;
    if (s.read_optional("dir", dir)) c.traces_dir = dir;
    s.done();
  }

  bool cv_seed = false;
  if (const json* p = top.find("probe")) {
    Section s(*p, "probe");
    s.read("kind", c.probe_kind);
    s.read("l2_lambda", c.probe.l2_lambda);
    s.read("tolerance", c.probe.tolerance);
    s.read("max_iterations", c.probe.max_iterations);
    s.read("folds", c.folds);
    cv_seed = s.read_optional("seed", c.cv_seed);
    s.read("metric", c.metric);
    s.done();
  }

  if (const json* l = top.find("layers")) {
    if (l->is_string()) {
      c.layers = wrap("layers", [&] { return parse_layer_list(l->get<std::string>()); });
    } else if (l->is_array()) {
      for (std::size_t i = 0; i < l->size(); ++i) {
        const auto& v = (*l)[i];
        if (!v.is_number_unsigned()) fail("layers[" + std::to_string(i) + "]", "expected a non-negative integer");
        c.layers.push_back(v.get<std::size_t>());
      }
    } else {
      fail("layers", "expected a list of layer indices or a string such as \"0:4\"");
    }
  }

  bool master_seed = false;
  if (const json* t = top.find("test")) {
    Section s(*t, "test");
    s.read("family", c.family);
    s.read("B", c.B);
    s.read("chance_B", c.chance_B);
    s.read("alpha", c.alpha);
    std::string correction = to_string(c.correction);
    s.read("correction", correction);
    c.correction = wrap("test.correction", [&] { return correction_from_string(correction); });
    master_seed = s.read_optional("master_seed", c.master_seed);
    s.done();
  }

  top.done();

  if (!model_seed) c.model_seed = derive_seed(c.seed, 1);
  if (!task_seed) c.task.seed = derive_seed(c.seed, 2);
  if (!input_seed) c.input_seed = derive_seed(c.seed, 3);
  if (!plant_seed) c.plant.seed = derive_seed(c.seed, 4);
  if (!cv_seed) c.cv_seed = derive_seed(c.seed, 5);
  if (!master_seed) c.master_seed = derive_seed(c.seed, 6);
  return c;
}

json run_config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["model"] = {{"vocab_size", c.model.vocab_size}, {"d_model", c.model.d_model},   {"n_layers", c.model.n_layers},
                {"n_heads", c.model.n_heads},       {"d_ff", c.model.d_ff},         {"max_seq_len", c.model.max_seq_len},
                {"init_std", c.model.init_std},     {"seed", c.model_seed}};
  j["plant"] = {{"alpha", c.plant.alpha}, {"layer", c.plant.layer}, {"amplitude", c.plant.amplitude}, {"seed", c.plant.seed}};
  j["task"] = {{"kind", to_string(c.task.kind)},
               {"seed", c.task.seed},
               {"vocab_size", c.task.vocab_size},
               {"seq_len", c.task.seq_len},
               {"n_positive", c.task.n_positive},
               {"n_negative", c.task.n_negative},
               {"sentiment_rate", c.task.sentiment_rate},
               {"label_noise", c.task.label_noise},
               {"num_tags", c.task.num_tags},
               {"tag_noise", c.task.tag_noise},
               {"coord_noise", c.task.coord_noise}};
  j["traces"] = {{"n_samples", c.n_samples}, {"input_seed", c.input_seed}};
  j["probe"] = {{"kind", c.probe_kind},          {"l2_lambda", c.probe.l2_lambda}, {"tolerance", c.probe.tolerance},
                {"max_iterations", c.probe.max_iterations}, {"folds", c.folds}, {"seed", c.cv_seed},
                {"metric", c.metric}};
  j["layers"] = c.layers;
  j["test"] = {{"family", c.family}, {"B", c.B},
               {"chance_B", c.chance_B}, {"alpha", c.alpha},
               {"correction", to_string(c.correction)}, {"master_seed", c.master_seed}};
  return j;
}

void validate(const RunConfig& c) {
  wrap("model", [&] { validate(c.model); });
  wrap("task", [&] { SyntheticTask task(c.task); });
  if (c.task.vocab_size > c.model.vocab_size) fail("task.vocab_size", "exceeds model.vocab_size");
  if (c.task.seq_len > c.model.max_seq_len) fail("task.seq_len", "exceeds model.max_seq_len");
  if (!(c.plant.alpha >= 0.0 && c.plant.alpha <= 1.0)) fail("plant.alpha", "must be in [0, 1]");
  if (c.plant.layer > c.model.n_layers) fail("plant.layer", "exceeds model.n_layers");
  if (c.plant.alpha > 0.0 && c.plant.layer >= 1 && c.task.kind != TaskKind::kTokenSentiment) {
    fail("plant.layer", "signal above layer 0 can only be planted for token_sentiment");
  }
  if (c.n_samples == 0) fail("traces.n_samples", "must be >= 1");
  if (c.probe_kind != "auto") wrap("probe.kind", [&] { return probe_kind_from_string(c.probe_kind); });
  if (c.metric != "auto") wrap("probe.metric", [&] { return metric_kind_from_string(c.metric); });
  wrap("probe", [&] { validate(c.probe); });
  if (c.folds < 2) fail("probe.folds", "must be >= 2");
  const std::size_t rows = c.n_samples * (c.task.kind == TaskKind::kTokenTag ? c.task.seq_len : 1);
  if (!c.traces_dir && c.folds > rows) fail("probe.folds", "exceeds the number of trace rows");
  wrap("test.family", [&] { return family_from_tag(c.family); });
  if (c.B < 1) fail("test.B", "must be >= 1");
  if (c.chance_B < 1) fail("test.chance_B", "must be >= 1");
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) fail("test.alpha", "must be in (0, 1)");
  if (c.threads < 1) fail("threads", "must be >= 1");
  std::set<std::size_t> distinct(c.layers.begin(), c.layers.end());
  if (distinct.size() != c.layers.size()) fail("layers", "repeated layer");
  if (!c.traces_dir) {
    for (auto l : c.layers) {
      if (l > c.model.n_layers) fail("layers", "layer " + std::to_string(l) + " exceeds model.n_layers");
    }
  }
}

}  // namespace nullprobe
