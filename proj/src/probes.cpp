#include "nullprobe/errors.hpp"
#include "nullprobe/estimators.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>

namespace nullprobe {

namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Design matrix with a trailing column of ones for the bias.
Eigen::MatrixXd augment(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd xa(x.rows(), x.cols() + 1);
  xa.leftCols(x.cols()) = x;
  xa.col(x.cols()).setOnes();
  return xa;
}

double objective(const Eigen::MatrixXd& xa, const Eigen::VectorXd& y, const Eigen::VectorXd& theta,
                 double lambda) {
  const Eigen::VectorXd z = xa * theta;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) loss += softplus(z[i]) - y[i] * z[i];
  const auto d = theta.size() - 1;
  return loss / static_cast<double>(z.size()) + lambda * theta.head(d).squaredNorm();
}

double gradient_norm(const Eigen::MatrixXd& xa, const Eigen::VectorXd& y, const Eigen::VectorXd& theta,
                     double lambda) {
  const Eigen::VectorXd z = xa * theta;
  Eigen::VectorXd residual(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) residual[i] = sigmoid(z[i]) - y[i];
  Eigen::VectorXd g = xa.transpose() * residual / static_cast<double>(z.size());
  const auto d = theta.size() - 1;
  g.head(d) += 2.0 * lambda * theta.head(d);
  return g.norm();
}

}  // namespace

std::string to_string(ProbeKind kind) { return kind == ProbeKind::kLogistic ? "logistic" : "ridge"; }

std::string to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::kAccuracy: return "accuracy";
    case MetricKind::kR2: return "r2";
    case MetricKind::kPearson: return "pearson";
  }
  return "unknown";
}

ProbeKind probe_kind_from_string(const std::string& name) {
  if (name == "logistic") return ProbeKind::kLogistic;
  if (name == "ridge") return ProbeKind::kRidge;
  throw ValidationError("unknown probe kind '" + name + "'");
}

MetricKind metric_kind_from_string(const std::string& name) {
  if (name == "accuracy") return MetricKind::kAccuracy;
  if (name == "r2") return MetricKind::kR2;
  if (name == "pearson") return MetricKind::kPearson;
  throw ValidationError("unknown metric kind '" + name + "'");
}

void validate(const ProbeSpec& spec) {
  if (!(spec.l2_lambda >= 0.0) || !std::isfinite(spec.l2_lambda)) {
    throw ValidationError("probe: l2_lambda must be finite and >= 0");
  }
  if (!(spec.tolerance > 0.0)) throw ValidationError("probe: tolerance must be > 0");
  if (spec.max_iterations == 0) throw ValidationError("probe: max_iterations must be >= 1");
}

LogisticFit fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const ProbeSpec& spec) {
  validate(spec);
  const auto n = x.rows();
  const auto d = x.cols();
  if (n < 2) throw ValidationError("fit_logistic: need at least two samples");
  if (y.size() != n) throw ValidationError("fit_logistic: label count differs from row count");
  if (!x.allFinite()) throw ValidationError("fit_logistic: non-finite features");
  Eigen::Index positives = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (y[i] != 0.0 && y[i] != 1.0) throw ValidationError("fit_logistic: labels must be 0 or 1");
    positives += y[i] == 1.0 ? 1 : 0;
  }
  if (positives == 0 || positives == n) {
    throw DegenerateLabelError("fit_logistic: labels contain a single class");
  }

  const Eigen::MatrixXd xa = augment(x);
  const double inv_n = 1.0 / static_cast<double>(n);
  const double lambda = spec.l2_lambda;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d + 1);
  double current = objective(xa, y, theta, lambda);

  Eigen::VectorXd grad(d + 1);
  Eigen::MatrixXd hess(d + 1, d + 1);
  Eigen::MatrixXd weighted(n, d + 1);
  for (std::size_t iter = 0;; ++iter) {
    const Eigen::VectorXd z = xa * theta;
    Eigen::VectorXd residual(n), curvature(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = sigmoid(z[i]);
      residual[i] = p - y[i];
      curvature[i] = p * (1.0 - p);
    }
    grad.noalias() = xa.transpose() * residual * inv_n;
    grad.head(d) += 2.0 * lambda * theta.head(d);
    const double gnorm = grad.norm();
    if (gnorm <= spec.tolerance) {
      return {theta.head(d), theta[d], iter, gnorm};
    }
    if (iter >= spec.max_iterations) {
      throw ConvergenceError(gnorm, "fit_logistic: no convergence after " +
                                        std::to_string(spec.max_iterations) +
                                        " iterations (gradient norm " + std::to_string(gnorm) + ")");
    }

    weighted = xa.array().colwise() * (curvature.array() * inv_n).sqrt();
    hess.setZero();
    hess.selfadjointView<Eigen::Lower>().rankUpdate(weighted.transpose());
    hess.diagonal().head(d).array() += 2.0 * lambda;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hess.selfadjointView<Eigen::Lower>());
    Eigen::VectorXd step = ldlt.solve(grad);
    if (ldlt.info() != Eigen::Success || !step.allFinite()) step = grad;

    // Backtracking on the objective. Near the optimum the decrease drops below
    // rounding of the objective; there the full step is kept if it shrinks the gradient.
    const double slope = grad.dot(step);
    Eigen::VectorXd candidate = theta - step;
    double next = objective(xa, y, candidate, lambda);
    const double floor = 1e-13 * std::max(1.0, std::abs(current));
    if (std::abs(current - next) <= floor) {
      if (gradient_norm(xa, y, candidate, lambda) >= gnorm) {
        throw ConvergenceError(gnorm, "fit_logistic: stalled at gradient norm " + std::to_string(gnorm));
      }
    } else {
      double t = 1.0;
      while (next > current - 1e-4 * t * slope && t > 1e-10) {
        t *= 0.5;
        candidate = theta - t * step;
        next = objective(xa, y, candidate, lambda);
      }
      if (next > current) {
        throw ConvergenceError(gnorm, "fit_logistic: line search failed (gradient norm " +
                                          std::to_string(gnorm) + ")");
      }
    }
    theta = candidate;
    current = next;
  }
}

Eigen::VectorXd logistic_scores(const LogisticFit& fit, const Eigen::MatrixXd& x) {
  return (x * fit.weights).array() + fit.bias;
}

RidgeFit fit_ridge(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double lambda) {
  const auto n = x.rows();
  if (n < 1) throw ValidationError("fit_ridge: need at least one sample");
  if (y.rows() != n) throw ValidationError("fit_ridge: label rows differ from feature rows");
  if (!(lambda >= 0.0)) throw ValidationError("fit_ridge: lambda must be >= 0");
  if (lambda == 0.0 && x.cols() > n) {
    throw SingularSystemError("fit_ridge: lambda = 0 with more features than samples");
  }
  const Eigen::RowVectorXd x_mean = x.colwise().mean();
  const Eigen::RowVectorXd y_mean = y.colwise().mean();
  const Eigen::MatrixXd xc = x.rowwise() - x_mean;
  const Eigen::MatrixXd yc = y.rowwise() - y_mean;

  Eigen::MatrixXd gram = xc.transpose() * xc;
  gram.diagonal().array() += static_cast<double>(n) * lambda;
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-13) {
    throw SingularSystemError("fit_ridge: normal equations are singular");
  }
  RidgeFit fit;
  fit.weights = llt.solve(xc.transpose() * yc);
  fit.intercept = y_mean - x_mean * fit.weights;
  return fit;
}

Eigen::MatrixXd ridge_predict(const RidgeFit& fit, const Eigen::MatrixXd& x) {
  return (x * fit.weights).rowwise() + fit.intercept;
}

double metric(const Eigen::MatrixXd& predictions, const Eigen::MatrixXd& truth, MetricKind kind) {
  if (predictions.rows() != truth.rows() || predictions.cols() != truth.cols()) {
    throw ValidationError("metric: prediction and truth shapes differ");
  }
  const auto n = truth.rows();
  if (n == 0) throw ValidationError("metric: empty input");

  if (kind == MetricKind::kAccuracy) {
    Eigen::Index hits = 0;
    for (Eigen::Index i = 0; i < n; ++i) hits += (predictions.row(i) == truth.row(i)) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(n);
  }

  double total = 0.0;
  for (Eigen::Index c = 0; c < truth.cols(); ++c) {
    const Eigen::VectorXd t = truth.col(c);
    const Eigen::VectorXd p = predictions.col(c);
    const Eigen::VectorXd tc = t.array() - t.mean();
    const double ss_tot = tc.squaredNorm();
    if (ss_tot == 0.0) throw UndefinedMetricError("metric: truth has zero variance");
    if (kind == MetricKind::kR2) {
      total += 1.0 - (p - t).squaredNorm() / ss_tot;
    } else {
      const Eigen::VectorXd pc = p.array() - p.mean();
      const double ss_pred = pc.squaredNorm();
      if (ss_pred == 0.0) throw UndefinedMetricError("metric: predictions have zero variance");
      total += pc.dot(tc) / std::sqrt(ss_pred * ss_tot);
    }
  }
  return total / static_cast<double>(truth.cols());
}

}  // namespace nullprobe
