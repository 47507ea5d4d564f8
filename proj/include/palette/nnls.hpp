#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace palette {

struct NnlsResult {
  Eigen::VectorXd x;
  std::size_t iterations = 0;
  bool converged = false;
};

// Lawson-Hanson active-set solver for
//   minimize ||A x - b||_2  subject to  x_i >= 0 for every i with !free[i].
// `free` may be empty (all variables constrained). Free variables stay in
// the passive set throughout, which is how an unconstrained intercept is fit.
NnlsResult nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                const std::vector<bool>& free = {}, std::size_t max_iterations = 0);

}  // namespace palette
