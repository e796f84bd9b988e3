#pragma once

// Linear probes, PCA, cross-validation and metrics: the interpretability
// methods whose outputs the null tests scrutinize.

#include "nullprobe/trace_model.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace nullprobe {

enum class ProbeKind { kLogistic, kRidge };
enum class MetricKind { kAccuracy, kR2, kPearson };

std::string to_string(ProbeKind kind);
std::string to_string(MetricKind kind);
ProbeKind probe_kind_from_string(const std::string& name);
MetricKind metric_kind_from_string(const std::string& name);

struct ProbeSpec {
  ProbeKind kind = ProbeKind::kLogistic;
  double l2_lambda = 1e-2;
  double tolerance = 1e-8;  // gradient norm at which Newton stops
  std::size_t max_iterations = 200;
};

void validate(const ProbeSpec& spec);

struct LogisticFit {
  Eigen::VectorXd weights;
  double bias = 0.0;
  std::size_t iterations = 0;
  double gradient_norm = 0.0;
};

// Minimizes (1/n) sum_i logloss(y_i, w.x_i + b) + lambda * ||w||^2 (bias not
// penalized) by damped Newton steps. y entries must be 0 or 1.
LogisticFit fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const ProbeSpec& spec);
Eigen::VectorXd logistic_scores(const LogisticFit& fit, const Eigen::MatrixXd& x);

struct RidgeFit {
  Eigen::MatrixXd weights;    // d x m
  Eigen::RowVectorXd intercept;  // 1 x m
};

// W = (Xc^T Xc + n lambda I)^{-1} Xc^T Yc on mean-centered data.
RidgeFit fit_ridge(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double lambda);
Eigen::MatrixXd ridge_predict(const RidgeFit& fit, const Eigen::MatrixXd& x);

struct EigenDecomposition {
  Eigen::VectorXd values;   // descending
  Eigen::MatrixXd vectors;  // columns match values
};

// Cyclic Jacobi rotations on a symmetric matrix.
EigenDecomposition symmetric_eigen(const Eigen::MatrixXd& a);

struct PcaResult {
  Eigen::MatrixXd components;          // k x d, orthonormal rows
  Eigen::VectorXd explained_variance;  // k, nonincreasing
  Eigen::RowVectorXd mean;             // 1 x d

  Eigen::MatrixXd transform(const Eigen::MatrixXd& x) const;
};

// Top-k principal axes of the sample covariance (divisor n - 1). The
// largest-magnitude entry of each component is made positive.
PcaResult pca(const Eigen::MatrixXd& x, std::size_t k);

// Rows are samples. accuracy: fraction of rows matching exactly; r2 and
// pearson: per-column values averaged uniformly.
double metric(const Eigen::MatrixXd& predictions, const Eigen::MatrixXd& truth, MetricKind kind);

struct CvResult {
  std::size_t k = 0;
  std::vector<double> per_fold_metric;
  double mean = 0.0;
  double std = 0.0;  // population
  MetricKind metric_kind = MetricKind::kAccuracy;
};

// Deterministic partition of [0, n) into k folds whose sizes differ by at most
// one. With `strata` (one class id per index) each class is shuffled and dealt
// round-robin so folds are stratified.
std::vector<std::vector<std::size_t>> kfold_partition(std::size_t n, std::size_t k, std::uint64_t seed,
                                                      const std::vector<int>* strata = nullptr);

// Features are standardized with training-fold statistics before every fit.
// Classification labels use the logistic probe (one-vs-rest beyond two
// classes) and stratified folds; real labels use ridge.
CvResult kfold_cv(const TraceSet& traces, std::size_t layer, const ProbeSpec& spec, std::size_t k,
                  std::uint64_t seed, MetricKind metric_kind);

// Pearson correlation of each of the top-k PC scores with a scalar label.
std::vector<double> component_label_correlations(const TraceSet& traces, std::size_t layer, std::size_t k);

}  // namespace nullprobe
