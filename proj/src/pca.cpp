#include "nullprobe/errors.hpp"
#include "nullprobe/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nullprobe {

EigenDecomposition symmetric_eigen(const Eigen::MatrixXd& input) {
  if (input.rows() != input.cols()) throw ValidationError("symmetric_eigen: matrix must be square");
  const auto n = input.rows();
  Eigen::MatrixXd a = 0.5 * (input + input.transpose());
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);

  const double scale = std::max(a.norm(), 1e-300);
  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    }
    if (std::sqrt(2.0 * off) <= 1e-15 * scale) break;

    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= 1e-300) continue;
        // Rotation angle zeroing a(p, q) (Golub & Van Loan, sym.schur2).
        const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (tau >= 0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });
  EigenDecomposition out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values[i] = a(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)]);
    out.vectors.col(i) = v.col(order[static_cast<std::size_t>(i)]);
  }
  return out;
}

Eigen::MatrixXd PcaResult::transform(const Eigen::MatrixXd& x) const {
  return (x.rowwise() - mean) * components.transpose();
}

PcaResult pca(const Eigen::MatrixXd& x, std::size_t k) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto d = static_cast<std::size_t>(x.cols());
  if (k == 0 || k > std::min(n, d)) {
    throw ValidationError("pca: k=" + std::to_string(k) + " must be in [1, min(n, d)=" +
                          std::to_string(std::min(n, d)) + "]");
  }
  if (n < 2) throw ValidationError("pca: need at least two samples");

  PcaResult result;
  result.mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - result.mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  const auto eig = symmetric_eigen(cov);

  const auto kk = static_cast<Eigen::Index>(k);
  result.components.resize(kk, static_cast<Eigen::Index>(d));
  result.explained_variance.resize(kk);
  for (Eigen::Index i = 0; i < kk; ++i) {
    Eigen::VectorXd c = eig.vectors.col(i);
    Eigen::Index arg = 0;
    c.cwiseAbs().maxCoeff(&arg);
    if (c[arg] < 0) c = -c;
    result.components.row(i) = c.transpose();
    result.explained_variance[i] = std::max(0.0, eig.values[i]);
  }
  return result;
}

std::vector<double> component_label_correlations(const TraceSet& traces, std::size_t layer, std::size_t k) {
  const auto kind = traces.label_spec.kind;
  if (traces.labels.cols() != 1 || (kind != LabelKind::kBinary && kind != LabelKind::kReal)) {
    throw ValidationError("component_label_correlations: needs a binary or real scalar label");
  }
  const Eigen::MatrixXd x = traces.layer(layer);
  const Eigen::MatrixXd y = traces.labels_as_double();
  const auto fit = pca(x, k);
  const Eigen::MatrixXd scores = fit.transform(x);
  std::vector<double> out(k);
  for (std::size_t i = 0; i < k; ++i) {
    out[i] = metric(scores.col(static_cast<Eigen::Index>(i)), y, MetricKind::kPearson);
  }
  return out;
}

}  // namespace nullprobe
