#include "nullprobe/nulltest.hpp"

#include "nullprobe/errors.hpp"
#include "nullprobe/parallel.hpp"
#include "nullprobe/rng.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nullprobe {

namespace {

// Relative slack on p <= threshold so that thresholds such as i*alpha/m that
// are not exactly representable still admit the p-values that hit them.
constexpr double kThresholdSlack = 1e-12;

bool at_or_below(double p, double threshold) { return p <= threshold * (1.0 + kThresholdSlack); }

void check_pvalues(std::span<const double> pvals, double alpha) {
  for (double p : pvals) {
    if (!(p > 0.0 && p <= 1.0)) throw ValidationError("p-values must lie in (0, 1]");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
}

}  // namespace

std::string family_tag(const NullFamily& family) {
  if (const auto* w = std::get_if<WeightRandomization>(&family)) return "weights:" + to_string(w->scope);
  if (std::holds_alternative<LabelPermutation>(family)) return "label_permutation";
  return "orthogonal_rotation";
}

NullFamily family_from_tag(const std::string& tag) {
  if (tag == "label_permutation") return LabelPermutation{};
  if (tag == "orthogonal_rotation") return OrthogonalRotation{};
  const std::string prefix = "weights:";
  if (tag.rfind(prefix, 0) == 0) return WeightRandomization{scope_from_string(tag.substr(prefix.size()))};
  if (tag == "weights") return WeightRandomization{RandomizationScope::kAll};
  throw ValidationError("unknown null family '" + tag + "'");
}

TestStatistic cv_probe_statistic(const ProbeSpec& spec, std::size_t k, MetricKind metric_kind) {
  validate(spec);
  if (k < 2) throw ValidationError("cv folds must be >= 2");
  return {"cv_" + to_string(metric_kind),
          [spec, k, metric_kind](const TraceSet& traces, std::size_t layer, std::uint64_t seed) {
            return kfold_cv(traces, layer, spec, k, seed, metric_kind).mean;
          }};
}

TestStatistic pc_correlation_statistic(std::size_t k) {
  if (k == 0) throw ValidationError("pc count must be >= 1");
  return {"pc_max_abs_corr", [k](const TraceSet& traces, std::size_t layer, std::uint64_t) {
            const auto corr = component_label_correlations(traces, layer, k);
            double best = 0.0;
            for (double c : corr) best = std::max(best, std::abs(c));
            return best;
          }};
}

Experiment Experiment::from_model(ToyModel model, const TraceRecipe& recipe) {
  Experiment e;
  e.traces = generate_traces(model, recipe);
  e.model = std::move(model);
  e.recipe = recipe;
  return e;
}

Experiment Experiment::from_traces(TraceSet traces) {
  validate(traces);
  Experiment e;
  e.traces = std::move(traces);
  return e;
}

Eigen::MatrixXd haar_orthogonal(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ValidationError("orthogonal matrix size must be >= 1");
  Rng rng(seed);
  const auto size = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd g(size, size);
  for (Eigen::Index i = 0; i < size; ++i)
    for (Eigen::Index j = 0; j < size; ++j) g(i, j) = rng.gaussian();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(size, size);
  const Eigen::MatrixXd& r = qr.matrixQR();
  for (Eigen::Index j = 0; j < size; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

TraceSet permute_labels(const TraceSet& traces, std::uint64_t seed) {
  std::vector<std::size_t> order(traces.n_samples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  TraceSet out = traces;
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.labels.row(static_cast<Eigen::Index>(i)) = traces.labels.row(static_cast<Eigen::Index>(order[i]));
  }
  return out;
}

TraceSet rotate_activations(const TraceSet& traces, std::uint64_t seed) {
  TraceSet out = traces;
  for (std::size_t l = 0; l < traces.n_layers; ++l) {
    const Eigen::MatrixXd q = haar_orthogonal(traces.d_model, derive_seed(seed, l));
    out.activations[l] = (traces.layer(l) * q).cast<float>();
  }
  return out;
}

TraceSet materialize_null(const Experiment& experiment, const NullFamily& family, std::uint64_t seed) {
  if (const auto* w = std::get_if<WeightRandomization>(&family)) {
    if (!experiment.model || !experiment.recipe) {
      throw ValidationError("weight randomization needs a model and a trace recipe");
    }
    return generate_traces(randomize(*experiment.model, w->scope, seed), *experiment.recipe);
  }
  if (std::holds_alternative<LabelPermutation>(family)) return permute_labels(experiment.traces, seed);
  return rotate_activations(experiment.traces, seed);
}

double mc_pvalue(double t_obs, std::span<const double> t_null) {
  if (t_null.empty()) throw ValidationError("null statistics are empty");
  const auto exceed = std::count_if(t_null.begin(), t_null.end(), [t_obs](double t) { return t >= t_obs; });
  return static_cast<double>(1 + exceed) / static_cast<double>(t_null.size() + 1);
}

namespace {

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_sd(std::span<const double> v, double mean) {
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

double effect_size_z(double t_obs, std::span<const double> t_null) {
  if (t_null.size() < 2) throw ValidationError("effect size needs at least 2 null statistics");
  const double mean = mean_of(t_null);
  const double sd = sample_sd(t_null, mean);
  if (!(sd > 0.0)) throw DegenerateNullError("null statistics have zero spread");
  return (t_obs - mean) / sd;
}

void summarize(TestReport& report) {
  report.B = report.t_null.size();
  report.p_hat = mc_pvalue(report.t_obs, report.t_null);
  report.null_mean = mean_of(report.t_null);
  report.null_sd = report.B >= 2 ? sample_sd(report.t_null, report.null_mean) : 0.0;
  report.z_effect.reset();
  if (report.null_sd > 0.0) report.z_effect = (report.t_obs - report.null_mean) / report.null_sd;
}

std::vector<TestReport> run_test(const Experiment& experiment, const TestStatistic& statistic,
                                 const NullFamily& family, std::span<const std::size_t> layers,
                                 const TestOptions& options) {
  if (options.B < 1) throw ValidationError("B must be >= 1");
  if (layers.empty()) throw ValidationError("no layers to test");
  for (std::size_t layer : layers) {
    if (layer >= experiment.traces.n_layers) {
      throw ValidationError("layer " + std::to_string(layer) + " out of range");
    }
  }
  if (std::holds_alternative<WeightRandomization>(family) && (!experiment.model || !experiment.recipe)) {
    throw ValidationError("weight randomization needs a model and a trace recipe");
  }

  auto score = [&](const TraceSet& traces, std::size_t replicate, std::vector<double>& out) {
    try {
      for (std::size_t i = 0; i < layers.size(); ++i) {
        out[i] = statistic.evaluate(traces, layers[i], options.analysis_seed);
      }
    } catch (const ReplicateError&) {
      throw;
    } catch (const StatisticalError& e) {
      throw ReplicateError(replicate, (replicate == 0 ? std::string("target run: ")
                                                      : "replicate " + std::to_string(replicate) + ": ") +
                                          e.what());
    }
  };

  std::vector<double> observed(layers.size());
  score(experiment.traces, 0, observed);

  // nulls[b][i]: replicate b + 1 at layers[i]
  std::vector<std::vector<double>> nulls(options.B, std::vector<double>(layers.size()));
  parallel_for(options.B, options.threads, [&](std::size_t b) {
    const std::uint64_t seed = derive_seed(options.master_seed, b + 1);
    const TraceSet null_traces = materialize_null(experiment, family, seed);
    score(null_traces, b + 1, nulls[b]);
  });

  std::vector<TestReport> reports(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    TestReport& r = reports[i];
    r.statistic = statistic.name;
    r.family = family_tag(family);
    r.layer = layers[i];
    r.master_seed = options.master_seed;
    r.t_obs = observed[i];
    r.t_null.resize(options.B);
    for (std::size_t b = 0; b < options.B; ++b) r.t_null[b] = nulls[b][i];
    summarize(r);
  }
  return reports;
}

TestReport run_test(const Experiment& experiment, const TestStatistic& statistic, const NullFamily& family,
                    std::size_t layer, const TestOptions& options) {
  const std::size_t layers[] = {layer};
  return run_test(experiment, statistic, family, layers, options).front();
}

std::string to_string(CorrectionMethod method) {
  return method == CorrectionMethod::kBonferroni ? "bonferroni" : "benjamini_hochberg";
}

CorrectionMethod correction_from_string(const std::string& name) {
  if (name == "bonferroni") return CorrectionMethod::kBonferroni;
  if (name == "benjamini_hochberg" || name == "bh") return CorrectionMethod::kBenjaminiHochberg;
  throw ValidationError("unknown correction '" + name + "'");
}

CorrectionResult bonferroni(std::span<const double> pvals, double alpha) {
  check_pvalues(pvals, alpha);
  CorrectionResult out;
  out.method = CorrectionMethod::kBonferroni;
  out.alpha = alpha;
  out.raw.assign(pvals.begin(), pvals.end());
  const auto m = static_cast<double>(pvals.size());
  for (double p : pvals) {
    out.adjusted.push_back(std::min(1.0, m * p));
    out.reject.push_back(at_or_below(m * p, alpha));
  }
  return out;
}

CorrectionResult benjamini_hochberg(std::span<const double> pvals, double alpha) {
  check_pvalues(pvals, alpha);
  CorrectionResult out;
  out.method = CorrectionMethod::kBenjaminiHochberg;
  out.alpha = alpha;
  out.raw.assign(pvals.begin(), pvals.end());
  const std::size_t m = pvals.size();
  out.adjusted.assign(m, 1.0);
  out.reject.assign(m, false);
  if (m == 0) return out;

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pvals[a] < pvals[b]; });

  std::size_t cutoff = 0;  // number of rejected ranks
  for (std::size_t rank = 1; rank <= m; ++rank) {
    const double threshold = static_cast<double>(rank) * alpha / static_cast<double>(m);
    if (at_or_below(pvals[order[rank - 1]], threshold)) cutoff = rank;
  }
  for (std::size_t rank = 1; rank <= cutoff; ++rank) out.reject[order[rank - 1]] = true;

  double running = 1.0;
  for (std::size_t rank = m; rank >= 1; --rank) {
    const double p = pvals[order[rank - 1]];
    // m / rank >= 1 first, so rounding can never push the product below p
    running = std::min(running, p * (static_cast<double>(m) / static_cast<double>(rank)));
    out.adjusted[order[rank - 1]] = std::min(1.0, running);
  }
  return out;
}

CorrectionResult correct(std::span<const double> pvals, double alpha, CorrectionMethod method) {
  return method == CorrectionMethod::kBonferroni ? bonferroni(pvals, alpha) : benjamini_hochberg(pvals, alpha);
}

std::pair<double, double> bootstrap_ci(std::span<const double> values, double level, std::size_t n_boot,
                                       std::uint64_t seed) {
  if (values.empty()) throw ValidationError("bootstrap needs at least one value");
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("confidence level must lie in (0, 1)");
  if (n_boot == 0) throw ValidationError("n_boot must be >= 1");
  Rng rng(seed);
  const std::size_t n = values.size();
  std::vector<double> means(n_boot);
  for (auto& m : means) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += values[rng.below(n)];
    m = sum / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  auto nearest_rank = [&](double q) {
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n_boot)));
    return means[std::clamp<std::size_t>(rank, 1, n_boot) - 1];
  };
  const double tail = (1.0 - level) / 2.0;
  return {nearest_rank(tail), nearest_rank(1.0 - tail)};
}

double calibrate_type1(const Experiment& base, const NullFamily& family, const TestStatistic& statistic,
                       std::size_t layer, double alpha, std::size_t n_reps, std::size_t B, std::uint64_t seed,
                       std::size_t threads) {
  if (n_reps < 100) throw ValidationError("calibration needs n_reps >= 100");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  std::vector<char> rejected(n_reps, 0);
  parallel_for(n_reps, threads, [&](std::size_t r) {
    const std::uint64_t rep_seed = derive_seed(seed, r);
    Experiment target;
    if (const auto* w = std::get_if<WeightRandomization>(&family)) {
      if (!base.model || !base.recipe) throw ValidationError("weight randomization needs a model and a trace recipe");
      target = Experiment::from_model(randomize(*base.model, w->scope, derive_seed(rep_seed, 0)), *base.recipe);
    } else {
      target = Experiment::from_traces(materialize_null(base, family, derive_seed(rep_seed, 0)));
    }
    TestOptions options;
    options.B = B;
    options.master_seed = derive_seed(rep_seed, 1);
    options.analysis_seed = derive_seed(rep_seed, 2);
    const TestReport report = run_test(target, statistic, family, layer, options);
    rejected[r] = report.p_hat <= alpha ? 1 : 0;
  });
  const auto count = std::count(rejected.begin(), rejected.end(), char{1});
  return static_cast<double>(count) / static_cast<double>(n_reps);
}

nlohmann::json to_json(const TestReport& report) {
  nlohmann::json j;
  j["statistic"] = report.statistic;
  j["family"] = report.family;
  j["layer"] = report.layer;
  j["B"] = report.B;
  j["master_seed"] = report.master_seed;
  j["t_obs"] = report.t_obs;
  j["t_null"] = report.t_null;
  j["p_hat"] = report.p_hat;
  j["null_mean"] = report.null_mean;
  j["null_sd"] = report.null_sd;
  j["z_effect"] = report.z_effect ? nlohmann::json(*report.z_effect) : nlohmann::json(nullptr);
  return j;
}

TestReport test_report_from_json(const nlohmann::json& j) {
  try {
    TestReport r;
    r.statistic = j.at("statistic").get<std::string>();
    r.family = j.at("family").get<std::string>();
    r.layer = j.at("layer").get<std::size_t>();
    r.B = j.at("B").get<std::size_t>();
    r.master_seed = j.at("master_seed").get<std::uint64_t>();
    r.t_obs = j.at("t_obs").get<double>();
    r.t_null = j.at("t_null").get<std::vector<double>>();
    r.p_hat = j.at("p_hat").get<double>();
    r.null_mean = j.at("null_mean").get<double>();
    r.null_sd = j.at("null_sd").get<double>();
    if (!j.at("z_effect").is_null()) r.z_effect = j.at("z_effect").get<double>();
    if (r.t_null.size() != r.B) throw ValidationError("test report: t_null length differs from B");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("test report: ") + e.what());
  }
}

nlohmann::json to_json(const CorrectionResult& result) {
  nlohmann::json j;
  j["method"] = to_string(result.method);
  j["alpha"] = result.alpha;
  j["raw"] = result.raw;
  j["adjusted"] = result.adjusted;
  j["reject"] = result.reject;
  return j;
}

}  // namespace nullprobe
