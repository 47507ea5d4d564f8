#include <doctest.h>

#include <limits>

#include "palette/common.hpp"
#include "palette/nnls.hpp"

using namespace palette;

namespace {

// Exhaustive oracle: for every passive subset solve unconstrained least
// squares on it, keep feasible solutions, return the one with least residual.
Eigen::VectorXd brute_nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const std::vector<bool>& free) {
  const auto n = A.cols();
  Eigen::VectorXd best = Eigen::VectorXd::Zero(n);
  double best_r = std::numeric_limits<double>::infinity();
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    bool ok = true;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!free.empty() && free[static_cast<std::size_t>(j)] && !(mask & (1u << j))) ok = false;
    }
    if (!ok) continue;
    std::vector<Eigen::Index> cols;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (mask & (1u << j)) cols.push_back(j);
    }
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    if (!cols.empty()) {
      Eigen::MatrixXd sub(A.rows(), static_cast<Eigen::Index>(cols.size()));
      for (std::size_t k = 0; k < cols.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = A.col(cols[k]);
      const Eigen::VectorXd z = sub.completeOrthogonalDecomposition().solve(b);
      for (std::size_t k = 0; k < cols.size(); ++k) x[cols[k]] = z[static_cast<Eigen::Index>(k)];
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      const bool is_free = !free.empty() && free[static_cast<std::size_t>(j)];
      if (!is_free && x[j] < -1e-12) ok = false;
    }
    if (!ok) continue;
    const double r = (A * x - b).squaredNorm();
    if (r < best_r - 1e-12) {
      best_r = r;
      best = x;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("exact nonnegative system is recovered") {
  Eigen::MatrixXd A(4, 2);
  A << 1, 0, 0, 1, 1, 1, 2, 1;
  const Eigen::Vector2d truth(2.0, 3.0);
  const auto r = nnls(A, A * truth);
  CHECK(r.converged);
  CHECK((r.x - truth).norm() < 1e-10);
}

TEST_CASE("negative unconstrained solution is clamped") {
  Eigen::MatrixXd A(3, 2);
  A << 1, 0, 0, 1, 0, 0;
  Eigen::Vector3d b(-1.0, 2.0, 0.0);
  const auto r = nnls(A, b);
  CHECK(r.x[0] == 0.0);
  CHECK(r.x[1] == doctest::Approx(2.0));
}

TEST_CASE("free variables may go negative") {
  Eigen::MatrixXd A(3, 2);
  A << 1, 1, 2, 1, 3, 1;
  Eigen::Vector3d b(-3, -1, 1);  // 2 x - 5
  const auto r = nnls(A, b, {false, true});
  CHECK(r.x[0] == doctest::Approx(2.0));
  CHECK(r.x[1] == doctest::Approx(-5.0));
}

TEST_CASE("matches the exhaustive oracle on random problems") {
  Rng rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const auto rows = static_cast<Eigen::Index>(3 + rng.uniform_index(10));
    const auto cols = static_cast<Eigen::Index>(1 + rng.uniform_index(5));
    Eigen::MatrixXd A(rows, cols);
    Eigen::VectorXd b(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) A(i, j) = rng.normal();
      b[i] = 3.0 * rng.normal();
    }
    std::vector<bool> free(static_cast<std::size_t>(cols), false);
    if (trial % 3 == 0) free.back() = true;
    const auto r = nnls(A, b, free);
    const auto oracle = brute_nnls(A, b, free);
    CHECK(r.converged);
    const double ours = (A * r.x - b).squaredNorm();
    const double theirs = (A * oracle - b).squaredNorm();
    CHECK(ours == doctest::Approx(theirs).epsilon(1e-8));
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (!free[static_cast<std::size_t>(j)]) CHECK(r.x[j] >= 0.0);
    }
  }
}

TEST_CASE("zero columns and empty systems") {
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(3, 2);
  const auto r = nnls(A, Eigen::Vector3d(1, 2, 3));
  CHECK(r.x.isZero());
  const auto e = nnls(Eigen::MatrixXd(0, 0), Eigen::VectorXd(0));
  CHECK(e.x.size() == 0);
}
