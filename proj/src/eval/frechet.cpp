#include <Eigen/Dense>

#include "harmon/common.hpp"
#include "harmon/eval/eval.hpp"

namespace harmon::eval {

namespace {

// Symmetric PSD square root; small negative eigenvalues are clamped to zero.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

void moments(const std::vector<std::vector<double>>& rows, Eigen::VectorXd& mu,
             Eigen::MatrixXd& cov) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(rows[0].size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    x.row(i) = Eigen::Map<const Eigen::VectorXd>(rows[i].data(), d);
  mu = x.colwise().mean();
  Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
  cov = centered.transpose() * centered / static_cast<double>(n - 1);
  cov += 1e-6 * Eigen::MatrixXd::Identity(d, d);
}

}  // namespace

double frechet_distance(const std::vector<std::vector<double>>& a,
                        const std::vector<std::vector<double>>& b) {
  if (a.size() < 2 || b.size() < 2)
    throw EvalError("frechet_distance: need at least two samples per set");
  const std::size_t d = a[0].size();
  if (d == 0) throw EvalError("frechet_distance: empty feature rows");
  for (const auto& r : a)
    if (r.size() != d) throw EvalError("frechet_distance: ragged feature rows");
  for (const auto& r : b)
    if (r.size() != d) throw EvalError("frechet_distance: feature dimensions differ");

  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  moments(a, mu_a, cov_a);
  moments(b, mu_b, cov_b);

  // tr((S_A S_B)^{1/2}) through the symmetric product R S_B R, R = S_A^{1/2}.
  Eigen::MatrixXd root_a = psd_sqrt(cov_a);
  Eigen::MatrixXd inner = root_a * cov_b * root_a;
  inner = 0.5 * (inner + inner.transpose().eval());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner);
  const double tr_cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  const double dist =
      (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_cross;
  return dist < 0.0 ? 0.0 : dist;
}

}  // namespace harmon::eval
