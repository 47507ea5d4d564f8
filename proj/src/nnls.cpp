#include "palette/nnls.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "palette/common.hpp"

namespace palette {

namespace {

// Least squares restricted to the passive columns; other entries are zero.
Eigen::VectorXd solve_passive(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                              const std::vector<bool>& passive) {
  std::vector<Eigen::Index> cols;
  for (Eigen::Index j = 0; j < A.cols(); ++j) {
    if (passive[j]) cols.push_back(j);
  }
  Eigen::VectorXd z = Eigen::VectorXd::Zero(A.cols());
  if (cols.empty()) return z;
  Eigen::MatrixXd sub(A.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = A.col(cols[k]);
  const Eigen::VectorXd sol = sub.colPivHouseholderQr().solve(b);
  for (std::size_t k = 0; k < cols.size(); ++k) z(cols[k]) = sol(static_cast<Eigen::Index>(k));
  return z;
}

}  // namespace

NnlsResult nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const std::vector<bool>& free,
                std::size_t max_iterations) {
  const Eigen::Index n = A.cols();
  if (A.rows() != b.size()) throw ContractViolation("nnls: row count of A and b differ");
  if (!free.empty() && static_cast<Eigen::Index>(free.size()) != n) {
    throw ContractViolation("nnls: free mask size differs from column count");
  }
  std::vector<bool> is_free = free.empty() ? std::vector<bool>(n, false) : free;
  if (max_iterations == 0) max_iterations = 3 * static_cast<std::size_t>(std::max<Eigen::Index>(n, 1)) + 10;

  NnlsResult r;
  r.x = Eigen::VectorXd::Zero(n);
  if (n == 0) {
    r.converged = true;
    return r;
  }

  const double norm1 = A.cwiseAbs().colwise().sum().maxCoeff();
  const double tol = 10.0 * std::numeric_limits<double>::epsilon() * norm1 *
                     static_cast<double>(std::max(A.rows(), n));

  std::vector<bool> passive = is_free;
  if (std::any_of(is_free.begin(), is_free.end(), [](bool f) { return f; })) {
    r.x = solve_passive(A, b, passive);
  }

  for (; r.iterations < max_iterations; ++r.iterations) {
    const Eigen::VectorXd w = A.transpose() * (b - A * r.x);
    Eigen::Index best = -1;
    double best_w = tol;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (passive[j] || is_free[j]) continue;
      if (w(j) > best_w) {
        best_w = w(j);
        best = j;
      }
    }
    if (best < 0) {
      r.converged = true;
      break;
    }
    passive[best] = true;

    for (std::size_t inner = 0; inner < max_iterations; ++inner) {
      const Eigen::VectorXd z = solve_passive(A, b, passive);
      double alpha = std::numeric_limits<double>::infinity();
      Eigen::Index blocking = -1;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (!passive[j] || is_free[j] || z(j) > 0.0) continue;
        const double denom = r.x(j) - z(j);
        const double a = denom > 0.0 ? r.x(j) / denom : 0.0;
        if (a < alpha) {
          alpha = a;
          blocking = j;
        }
      }
      if (blocking < 0) {
        r.x = z;
        break;
      }
      r.x += alpha * (z - r.x);
      r.x(blocking) = 0.0;
      passive[blocking] = false;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (passive[j] && !is_free[j] && r.x(j) <= 0.0) {
          passive[j] = false;
          r.x(j) = 0.0;
        }
      }
    }
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    if (!is_free[j] && r.x(j) < 0.0) r.x(j) = 0.0;
  }
  return r;
}

}  // namespace palette
