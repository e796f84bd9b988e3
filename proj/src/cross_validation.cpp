#include "nullprobe/errors.hpp"
#include "nullprobe/estimators.hpp"
#include "nullprobe/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace nullprobe {

namespace {

struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd inv_scale;

  explicit Standardizer(const Eigen::MatrixXd& train) {
    mean = train.colwise().mean();
    const Eigen::MatrixXd centered = train.rowwise() - mean;
    const double denom = static_cast<double>(std::max<Eigen::Index>(train.rows(), 1));
    inv_scale.resize(train.cols());
    for (Eigen::Index c = 0; c < train.cols(); ++c) {
      const double sd = std::sqrt(centered.col(c).squaredNorm() / denom);
      inv_scale[c] = sd > 0.0 ? 1.0 / sd : 1.0;
    }
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    return (x.rowwise() - mean).array().rowwise() * inv_scale.array();
  }
};

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

// Predicted class index per row, one-vs-rest beyond two classes.
Eigen::MatrixXd classify(const Eigen::MatrixXd& train_x, const std::vector<int>& train_y,
                         const Eigen::MatrixXd& test_x, std::size_t n_classes, const ProbeSpec& spec,
                         std::size_t fold) {
  const auto n = static_cast<Eigen::Index>(train_y.size());
  auto fit_one = [&](int positive_class) {
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = train_y[static_cast<std::size_t>(i)] == positive_class ? 1.0 : 0.0;
    try {
      return fit_logistic(train_x, y, spec);
    } catch (const DegenerateLabelError&) {
      throw DegenerateFoldError(fold, "kfold_cv: training split of fold " + std::to_string(fold) +
                                          " lacks class " + std::to_string(positive_class));
    }
  };

  Eigen::MatrixXd pred(test_x.rows(), 1);
  if (n_classes == 2) {
    const auto fit = fit_one(1);
    const Eigen::VectorXd s = logistic_scores(fit, test_x);
    for (Eigen::Index i = 0; i < s.size(); ++i) pred(i, 0) = s[i] > 0.0 ? 1.0 : 0.0;
    return pred;
  }
  Eigen::MatrixXd scores(test_x.rows(), static_cast<Eigen::Index>(n_classes));
  for (std::size_t c = 0; c < n_classes; ++c) {
    scores.col(static_cast<Eigen::Index>(c)) = logistic_scores(fit_one(static_cast<int>(c)), test_x);
  }
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index arg = 0;
    scores.row(i).maxCoeff(&arg);
    pred(i, 0) = static_cast<double>(arg);
  }
  return pred;
}

}  // namespace

std::vector<std::vector<std::size_t>> kfold_partition(std::size_t n, std::size_t k, std::uint64_t seed,
                                                      const std::vector<int>* strata) {
  if (k < 2) throw ValidationError("kfold: k must be >= 2");
  if (k > n) throw ValidationError("kfold: k=" + std::to_string(k) + " exceeds n=" + std::to_string(n));
  if (strata != nullptr && strata->size() != n) throw ValidationError("kfold: strata size mismatch");

  Rng rng(seed);
  std::vector<std::vector<std::size_t>> groups;
  if (strata == nullptr) {
    groups.emplace_back(n);
    std::iota(groups[0].begin(), groups[0].end(), std::size_t{0});
  } else {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < n; ++i) by_class[(*strata)[i]].push_back(i);
    for (auto& [cls, idx] : by_class) groups.push_back(std::move(idx));
  }

  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t dealt = 0;
  for (auto& g : groups) {
    rng.shuffle(std::span<std::size_t>(g));
    for (auto idx : g) folds[dealt++ % k].push_back(idx);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

CvResult kfold_cv(const TraceSet& traces, std::size_t layer, const ProbeSpec& spec, std::size_t k,
                  std::uint64_t seed, MetricKind metric_kind) {
  validate(spec);
  if (layer >= traces.n_layers) {
    throw ValidationError("kfold_cv: layer " + std::to_string(layer) + " >= n_layers " +
                          std::to_string(traces.n_layers));
  }
  const bool classification = traces.label_spec.is_classification();
  if (classification != (spec.kind == ProbeKind::kLogistic)) {
    throw ValidationError("kfold_cv: logistic probes need class labels, ridge probes need real labels");
  }
  if (classification && metric_kind != MetricKind::kAccuracy) {
    throw ValidationError("kfold_cv: classification probes report accuracy");
  }
  if (!classification && metric_kind == MetricKind::kAccuracy) {
    throw ValidationError("kfold_cv: ridge probes report r2 or pearson");
  }

  const Eigen::MatrixXd x = traces.layer(layer);
  const Eigen::MatrixXd y = traces.labels_as_double();
  std::vector<int> classes;
  if (classification) classes = traces.class_labels();
  const auto folds = kfold_partition(traces.n_samples, k, seed, classification ? &classes : nullptr);

  CvResult result;
  result.k = k;
  result.metric_kind = metric_kind;
  std::vector<char> in_fold(traces.n_samples);
  for (std::size_t f = 0; f < k; ++f) {
    std::fill(in_fold.begin(), in_fold.end(), 0);
    for (auto i : folds[f]) in_fold[i] = 1;
    std::vector<std::size_t> train;
    train.reserve(traces.n_samples - folds[f].size());
    for (std::size_t i = 0; i < traces.n_samples; ++i) {
      if (!in_fold[i]) train.push_back(i);
    }

    const Eigen::MatrixXd raw_train = take_rows(x, train);
    const Standardizer scaler(raw_train);
    const Eigen::MatrixXd train_x = scaler.apply(raw_train);
    const Eigen::MatrixXd test_x = scaler.apply(take_rows(x, folds[f]));
    const Eigen::MatrixXd test_y = take_rows(y, folds[f]);

    Eigen::MatrixXd pred;
    if (classification) {
      std::vector<int> train_y(train.size());
      for (std::size_t i = 0; i < train.size(); ++i) train_y[i] = classes[train[i]];
      pred = classify(train_x, train_y, test_x, traces.label_spec.class_count(), spec, f);
    } else {
      pred = ridge_predict(fit_ridge(train_x, take_rows(y, train), spec.l2_lambda), test_x);
    }
    result.per_fold_metric.push_back(metric(pred, test_y, metric_kind));
  }

  const double kk = static_cast<double>(k);
  result.mean = std::accumulate(result.per_fold_metric.begin(), result.per_fold_metric.end(), 0.0) / kk;
  double ss = 0.0;
  for (double m : result.per_fold_metric) ss += (m - result.mean) * (m - result.mean);
  result.std = std::sqrt(ss / kk);
  return result;
}

}  // namespace nullprobe
