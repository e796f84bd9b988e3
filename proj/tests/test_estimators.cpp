#include <doctest.h>

#include "nullprobe/errors.hpp"
#include "nullprobe/estimators.hpp"
#include "nullprobe/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>

using namespace nullprobe;

namespace {

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.gaussian();
  return m;
}

// Penalized mean log-loss, written out independently of the solver.
double penalized_loss(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w, double b,
                      double lambda) {
  double total = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double z = x.row(i).dot(w) + b;
    total += std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - y[i] * z;
  }
  return total / static_cast<double>(x.rows()) + lambda * w.squaredNorm();
}

TraceSet single_layer(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, LabelKind kind) {
  TraceSet t;
  t.n_samples = static_cast<std::size_t>(x.rows());
  t.n_layers = 1;
  t.d_model = static_cast<std::size_t>(x.cols());
  t.activations.push_back(x.cast<float>());
  t.labels = y.cast<float>();
  t.label_spec = {kind, 0};
  return t;
}

}  // namespace

TEST_SUITE("estimators") {

TEST_CASE("logistic: symmetric data gives zero weights") {
  Eigen::MatrixXd x(4, 2);
  x << 1, 2, -1, -2, 3, -1, -3, 1;
  Eigen::VectorXd y(4);
  y << 1, 1, 0, 0;
  // The loss is invariant under x -> -x and the classes are balanced.
  const LogisticFit fit = fit_logistic(x, y, ProbeSpec{});
  CHECK(fit.weights.norm() < 1e-6);
  CHECK(std::abs(fit.bias) < 1e-6);
}

TEST_CASE("logistic: separable pair is fit perfectly") {
  Eigen::MatrixXd x(2, 1);
  x << -1, 1;
  Eigen::VectorXd y(2);
  y << 0, 1;
  ProbeSpec spec;
  spec.l2_lambda = 1e-3;
  const LogisticFit fit = fit_logistic(x, y, spec);
  const Eigen::VectorXd s = logistic_scores(fit, x);
  CHECK(s[0] < 0.0);
  CHECK(s[1] > 0.0);
}

TEST_CASE("logistic: gradient vanishes and matches finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Eigen::MatrixXd x = gaussian_matrix(20, 5, seed);
    Rng rng(seed + 100);
    Eigen::VectorXd y(20);
    for (int i = 0; i < 20; ++i) y[i] = i < 2 ? i : static_cast<double>(rng.below(2));
    ProbeSpec spec;
    const LogisticFit fit = fit_logistic(x, y, spec);

    const double h = 1e-5;
    Eigen::VectorXd fd(6);
    for (int j = 0; j < 5; ++j) {
      Eigen::VectorXd wp = fit.weights, wm = fit.weights;
      wp[j] += h;
      wm[j] -= h;
      fd[j] = (penalized_loss(x, y, wp, fit.bias, spec.l2_lambda) -
               penalized_loss(x, y, wm, fit.bias, spec.l2_lambda)) / (2 * h);
    }
    fd[5] = (penalized_loss(x, y, fit.weights, fit.bias + h, spec.l2_lambda) -
             penalized_loss(x, y, fit.weights, fit.bias - h, spec.l2_lambda)) / (2 * h);
    CHECK(fd.norm() <= 1e-6);
    CHECK(fit.gradient_norm <= 1e-6);

    // Away from the optimum the analytic gradient must match finite differences too.
    Eigen::VectorXd w = fit.weights.array() + 0.3;
    const double b = fit.bias - 0.2;
    Eigen::VectorXd analytic = Eigen::VectorXd::Zero(6);
    for (int i = 0; i < 20; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-(x.row(i).dot(w) + b)));
      analytic.head(5) += (p - y[i]) * x.row(i).transpose() / 20.0;
      analytic[5] += (p - y[i]) / 20.0;
    }
    analytic.head(5) += 2 * spec.l2_lambda * w;
    for (int j = 0; j < 6; ++j) {
      Eigen::VectorXd wp = w, wm = w;
      double bp = b, bm = b;
      if (j < 5) {
        wp[j] += h;
        wm[j] -= h;
      } else {
        bp += h;
        bm -= h;
      }
      const double numeric =
          (penalized_loss(x, y, wp, bp, spec.l2_lambda) - penalized_loss(x, y, wm, bm, spec.l2_lambda)) / (2 * h);
      CHECK(std::abs(numeric - analytic[j]) <= 1e-4 * std::max(1.0, std::abs(analytic[j])));
    }
  }
}

TEST_CASE("logistic errors") {
  const Eigen::MatrixXd x = gaussian_matrix(5, 2, 1);
  CHECK_THROWS_AS(fit_logistic(x, Eigen::VectorXd::Ones(5), ProbeSpec{}), DegenerateLabelError);
  ProbeSpec tight;
  tight.max_iterations = 1;
  tight.tolerance = 1e-300;
  Eigen::VectorXd y(5);
  y << 0, 1, 0, 1, 1;
  try {
    fit_logistic(x, y, tight);
    FAIL("expected a convergence error");
  } catch (const ConvergenceError& e) {
    CHECK(e.grad_norm() > 0.0);
  }
  ProbeSpec bad;
  bad.l2_lambda = -1;
  CHECK_THROWS_AS(validate(bad), ValidationError);
}

TEST_CASE("ridge closed-form examples") {
  Eigen::MatrixXd x(2, 1);
  x << 1, 2;
  Eigen::MatrixXd y(2, 1);
  y << 1, 2;
  RidgeFit fit = fit_ridge(x, y, 0.0);
  CHECK(fit.weights(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(fit.intercept[0]) < 1e-12);

  x << 1, -1;
  y << 1, -1;
  fit = fit_ridge(x, y, 1.0);
  CHECK(fit.weights(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("ridge stationarity and scale equivariance") {
  const Eigen::MatrixXd x = gaussian_matrix(30, 4, 7);
  const Eigen::MatrixXd y = gaussian_matrix(30, 2, 8);
  const double lambda = 0.1;
  const RidgeFit fit = fit_ridge(x, y, lambda);
  const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd yc = y.rowwise() - y.colwise().mean();
  const Eigen::MatrixXd grad = 2 * xc.transpose() * (xc * fit.weights - yc) / 30.0 + 2 * lambda * fit.weights;
  CHECK(grad.cwiseAbs().maxCoeff() < 1e-8);

  const RidgeFit scaled = fit_ridge(x, 4.0 * y, lambda);
  CHECK(scaled.weights == 4.0 * fit.weights);
  CHECK(scaled.intercept == 4.0 * fit.intercept);

  const Eigen::MatrixXd pred = ridge_predict(fit, x);
  CHECK((pred.colwise().mean() - y.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("ridge singular systems") {
  const Eigen::MatrixXd wide = gaussian_matrix(3, 5, 9);
  CHECK_THROWS_AS(fit_ridge(wide, gaussian_matrix(3, 1, 10), 0.0), SingularSystemError);
  CHECK_NOTHROW(fit_ridge(wide, gaussian_matrix(3, 1, 10), 0.1));
  Eigen::MatrixXd dup(4, 2);
  dup << 1, 1, 2, 2, 3, 3, 4, 4;
  CHECK_THROWS_AS(fit_ridge(dup, gaussian_matrix(4, 1, 11), 0.0), SingularSystemError);
}

TEST_CASE("jacobi eigen agrees with the reconstruction") {
  const Eigen::MatrixXd g = gaussian_matrix(6, 6, 12);
  const Eigen::MatrixXd a = g + g.transpose();
  const EigenDecomposition e = symmetric_eigen(a);
  const Eigen::MatrixXd rebuilt = e.vectors * e.values.asDiagonal() * e.vectors.transpose();
  CHECK((rebuilt - a).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((e.vectors.transpose() * e.vectors - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-10);
  for (int i = 1; i < 6; ++i) CHECK(e.values[i - 1] >= e.values[i]);
}

TEST_CASE("pca on a line has rank one") {
  Eigen::MatrixXd x(50, 3);
  const Eigen::RowVector3d dir(1, -2, 0.5);
  for (int i = 0; i < 50; ++i) x.row(i) = Eigen::RowVector3d(4, 5, 6) + (i * 0.37 - 3.0) * dir;
  const PcaResult p = pca(x, 3);
  CHECK(p.explained_variance[0] > 1.0);
  CHECK(std::abs(p.explained_variance[1]) <= 1e-10);
  CHECK(std::abs(p.explained_variance[2]) <= 1e-10);
  CHECK(std::abs(std::abs(p.components.row(0).dot(dir.normalized())) - 1.0) < 1e-10);
  // sign convention: largest-magnitude entry positive
  Eigen::Index arg;
  p.components.row(0).cwiseAbs().maxCoeff(&arg);
  CHECK(p.components(0, arg) > 0.0);
}

TEST_CASE("pca on isotropic data has similar variances") {
  const PcaResult p = pca(gaussian_matrix(10000, 2, 13), 2);
  CHECK(p.explained_variance[1] / p.explained_variance[0] > 0.9);
}

TEST_CASE("pca components are orthonormal and ordered") {
  for (std::uint64_t seed = 20; seed < 25; ++seed) {
    const PcaResult p = pca(gaussian_matrix(40, 8, seed), 5);
    const Eigen::MatrixXd gram = p.components * p.components.transpose();
    CHECK((gram - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-8);
    for (int i = 1; i < 5; ++i) CHECK(p.explained_variance[i - 1] >= p.explained_variance[i]);
    CHECK(p.explained_variance.minCoeff() >= 0.0);
  }
  CHECK_THROWS_AS(pca(gaussian_matrix(4, 3, 1), 4), ValidationError);
  CHECK_THROWS_AS(pca(gaussian_matrix(4, 3, 1), 0), ValidationError);
}

TEST_CASE("k-fold partition is a partition") {
  for (std::size_t n : {6u, 10u, 37u}) {
    for (std::size_t k : {2u, 3u, 6u}) {
      const auto folds = kfold_partition(n, k, 5);
      REQUIRE(folds.size() == k);
      std::set<std::size_t> seen;
      std::size_t lo = n, hi = 0;
      for (const auto& f : folds) {
        lo = std::min(lo, f.size());
        hi = std::max(hi, f.size());
        for (std::size_t i : f) CHECK(seen.insert(i).second);
      }
      CHECK(seen.size() == n);
      CHECK(hi - lo <= 1);
    }
  }
  const auto loo = kfold_partition(6, 6, 1);
  for (const auto& f : loo) CHECK(f.size() == 1);
  CHECK(kfold_partition(37, 5, 9) == kfold_partition(37, 5, 9));
}

TEST_CASE("stratified folds balance classes") {
  std::vector<int> strata(40);
  for (int i = 0; i < 40; ++i) strata[i] = i < 10 ? 1 : 0;
  for (const auto& f : kfold_partition(40, 5, 3, &strata)) {
    int ones = 0;
    for (std::size_t i : f) ones += strata[i];
    CHECK(ones == 2);
  }
}

TEST_CASE("noise labels give chance accuracy") {
  Rng rng(31);
  Eigen::VectorXd y(1000);
  for (int i = 0; i < 1000; ++i) y[i] = static_cast<double>(rng.below(2));
  const TraceSet t = single_layer(gaussian_matrix(1000, 8, 32), y, LabelKind::kBinary);
  const CvResult cv = kfold_cv(t, 0, ProbeSpec{}, 10, 4, MetricKind::kAccuracy);
  CHECK(cv.mean >= 0.45);
  CHECK(cv.mean <= 0.55);
  CHECK(cv.per_fold_metric.size() == 10);
  double sum = 0;
  for (double m : cv.per_fold_metric) sum += m;
  CHECK(cv.mean == doctest::Approx(sum / 10).epsilon(1e-14));
  const CvResult again = kfold_cv(t, 0, ProbeSpec{}, 10, 4, MetricKind::kAccuracy);
  CHECK(again.per_fold_metric == cv.per_fold_metric);
}

TEST_CASE("ridge cross-validation recovers a linear signal") {
  const Eigen::MatrixXd x = gaussian_matrix(200, 4, 40);
  const Eigen::VectorXd y = x.col(0) - 0.5 * x.col(2) + 0.05 * gaussian_matrix(200, 1, 41).col(0);
  ProbeSpec spec;
  spec.kind = ProbeKind::kRidge;
  const CvResult cv = kfold_cv(single_layer(x, y, LabelKind::kReal), 0, spec, 5, 1, MetricKind::kR2);
  CHECK(cv.mean > 0.95);
  for (double m : cv.per_fold_metric) CHECK(m <= 1.0);
}

TEST_CASE("a fold with a single class is an error, not skipped") {
  Eigen::VectorXd y = Eigen::VectorXd::Zero(10);
  y[0] = 1;
  const TraceSet t = single_layer(gaussian_matrix(10, 2, 1), y, LabelKind::kBinary);
  CHECK_THROWS_AS(kfold_cv(t, 0, ProbeSpec{}, 5, 1, MetricKind::kAccuracy), DegenerateFoldError);
}

TEST_CASE("metric examples") {
  Eigen::MatrixXd truth(4, 1);
  truth << 1, 0, 1, 1;
  CHECK(metric(truth, truth, MetricKind::kAccuracy) == 1.0);
  Eigen::MatrixXd real(3, 1);
  real << 1.5, -2, 4;
  CHECK(metric(real, real, MetricKind::kR2) == 1.0);
  CHECK(std::abs(metric(Eigen::MatrixXd::Constant(3, 1, real.mean()), real, MetricKind::kR2)) < 1e-15);

  Eigen::MatrixXd a(3, 1), b(3, 1);
  a << 1, 2, 3;
  b << 3, 2, 1;
  CHECK(metric(a, b, MetricKind::kPearson) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK_THROWS_AS(metric(a, Eigen::MatrixXd::Ones(3, 1), MetricKind::kR2), UndefinedMetricError);
  CHECK_THROWS_AS(metric(a, Eigen::MatrixXd::Ones(3, 1), MetricKind::kPearson), UndefinedMetricError);

  Eigen::MatrixXd two(3, 2), pred(3, 2);
  two << 1, 0, 2, 1, 3, 5;
  pred << 1, 0, 2, 1, 3, 3;
  const double r2_second = 1.0 - 4.0 / ((0 - 2) * (0 - 2) + (1 - 2) * (1 - 2) + (5 - 2) * (5 - 2));
  CHECK(metric(pred, two, MetricKind::kR2) == doctest::Approx((1.0 + r2_second) / 2).epsilon(1e-14));
}

TEST_CASE("component correlations find a planted first component") {
  Rng rng(50);
  Eigen::VectorXd y(500);
  for (int i = 0; i < 500; ++i) y[i] = static_cast<double>(rng.below(2));
  Eigen::MatrixXd x = 0.1 * gaussian_matrix(500, 6, 51);
  x.col(3) += 3.0 * y;
  const TraceSet t = single_layer(x, y, LabelKind::kBinary);
  const auto corr = component_label_correlations(t, 0, 3);
  CHECK(std::abs(corr[0]) > 0.9);

  TraceSet shifted = t;
  shifted.activations[0].rowwise() += Eigen::RowVectorXf::Constant(6, 17.0f);
  const auto corr_shifted = component_label_correlations(shifted, 0, 3);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(corr_shifted[i] - corr[i]) < 1e-4);

  const TraceSet constant = single_layer(x, Eigen::VectorXd::Ones(500), LabelKind::kBinary);
  CHECK_THROWS_AS(component_label_correlations(constant, 0, 3), UndefinedMetricError);
}

}
