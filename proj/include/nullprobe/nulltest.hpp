#pragma once

// Monte-Carlo hypothesis tests of interpretability findings against null
// models of random computation, plus effect sizes, multiple-comparison
// corrections, bootstrap intervals and Type-I calibration.
//
// For a statistic T, the observed value T_obs is computed on the target and
// T_null[b] on null replicate b = 1..B, with replicate seed
// derive_seed(master_seed, b). Every replicate uses the same inputs and the same
// analysis seed as the target, so the null transformation is the only thing
// that varies. The p-value is (1 + #{b : T_null[b] >= T_obs}) / (B + 1).

#include "nullprobe/estimators.hpp"
#include "nullprobe/toynet.hpp"
#include "nullprobe/trace_model.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace nullprobe {

struct WeightRandomization {
  RandomizationScope scope = RandomizationScope::kAll;
};
struct LabelPermutation {};
// Independent Haar-random orthogonal matrix applied to each layer.
struct OrthogonalRotation {};

using NullFamily = std::variant<WeightRandomization, LabelPermutation, OrthogonalRotation>;

// "weights:all", "weights:blocks_only", "weights:embeddings_only",
// "label_permutation", "orthogonal_rotation".
std::string family_tag(const NullFamily& family);
NullFamily family_from_tag(const std::string& tag);

// Deterministic given its seed; larger means a better explanatory fit.
struct TestStatistic {
  std::string name;
  std::function<double(const TraceSet&, std::size_t layer, std::uint64_t seed)> evaluate;
};

// Mean k-fold CV metric of a linear probe ("cv_accuracy", "cv_r2", "cv_pearson").
TestStatistic cv_probe_statistic(const ProbeSpec& spec, std::size_t k, MetricKind metric);
// max_i |corr(PC_i scores, label)| over the top-k components ("pc_max_abs_corr").
TestStatistic pc_correlation_statistic(std::size_t k);

// The system under test. Weight-randomization nulls need the model and recipe;
// label and rotation nulls only need traces.
struct Experiment {
  std::optional<ToyModel> model;
  std::optional<TraceRecipe> recipe;
  TraceSet traces;

  static Experiment from_model(ToyModel model, const TraceRecipe& recipe);
  static Experiment from_traces(TraceSet traces);
};

Eigen::MatrixXd haar_orthogonal(std::size_t n, std::uint64_t seed);
TraceSet permute_labels(const TraceSet& traces, std::uint64_t seed);
TraceSet rotate_activations(const TraceSet& traces, std::uint64_t seed);

// Traces of one null replicate.
TraceSet materialize_null(const Experiment& experiment, const NullFamily& family, std::uint64_t seed);

struct TestReport {
  std::string statistic;
  std::string family;
  std::size_t layer = 0;
  std::size_t B = 0;
  std::uint64_t master_seed = 0;
  double t_obs = 0.0;
  std::vector<double> t_null;
  double p_hat = 1.0;
  double null_mean = 0.0;
  double null_sd = 0.0;
  std::optional<double> z_effect;  // absent when B < 2 or the null sd is zero
};

struct TestOptions {
  std::size_t B = 99;
  std::uint64_t master_seed = 0;
  std::uint64_t analysis_seed = 0;
  std::size_t threads = 1;
};

// One report per requested layer; each replicate is materialized once and
// scored at every layer. Results do not depend on `threads`.
std::vector<TestReport> run_test(const Experiment& experiment, const TestStatistic& statistic,
                                 const NullFamily& family, std::span<const std::size_t> layers,
                                 const TestOptions& options);
TestReport run_test(const Experiment& experiment, const TestStatistic& statistic,
                    const NullFamily& family, std::size_t layer, const TestOptions& options);

// Fills p_hat, moments and Z from t_obs and t_null.
void summarize(TestReport& report);

double mc_pvalue(double t_obs, std::span<const double> t_null);
// (T_obs - mean) / sd with divisor B - 1.
double effect_size_z(double t_obs, std::span<const double> t_null);

enum class CorrectionMethod { kBonferroni, kBenjaminiHochberg };
std::string to_string(CorrectionMethod method);
CorrectionMethod correction_from_string(const std::string& name);

struct CorrectionResult {
  std::vector<double> raw;
  std::vector<double> adjusted;
  std::vector<bool> reject;
  CorrectionMethod method = CorrectionMethod::kBenjaminiHochberg;
  double alpha = 0.05;
};

CorrectionResult bonferroni(std::span<const double> pvals, double alpha);
CorrectionResult benjamini_hochberg(std::span<const double> pvals, double alpha);
CorrectionResult correct(std::span<const double> pvals, double alpha, CorrectionMethod method);

// Percentile bootstrap of the mean with nearest-rank quantiles.
std::pair<double, double> bootstrap_ci(std::span<const double> values, double level, std::size_t n_boot,
                                       std::uint64_t seed);

// Fraction of n_reps tests (target itself drawn from the null family) with
// p_hat <= alpha.
double calibrate_type1(const Experiment& base, const NullFamily& family, const TestStatistic& statistic,
                       std::size_t layer, double alpha, std::size_t n_reps, std::size_t B,
                       std::uint64_t seed, std::size_t threads = 1);

nlohmann::json to_json(const TestReport& report);
TestReport test_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CorrectionResult& result);

}  // namespace nullprobe
