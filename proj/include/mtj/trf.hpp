#pragma once

#include <functional>

#include <Eigen/Dense>

namespace mtj {

/// Bounded nonlinear least squares, min 0.5 * |f(x)|^2 subject to lb <= x <= ub,
/// by the trust-region reflective method (Branch, Coleman & Li), following the
/// structure of the exact-solver variant: Coleman-Li scaling, a dogleg-free
/// exact trust-region subproblem solved through an SVD, and step selection
/// among the reflected step, the truncated Newton step and the scaled
/// Cauchy step. Iterates stay strictly inside the box.
struct TrfOptions {
  double gtol = 1e-8;   ///< scaled gradient infinity norm
  double xtol = 1e-10;  ///< absolute step norm
  int max_iterations = 200;
  int max_evaluations = 2000;
};

struct TrfResult {
  Eigen::VectorXd x;
  Eigen::VectorXd residual;
  double cost = 0.0;  ///< 0.5 * |f|^2
  double initial_cost = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  enum class Reason { none, gradient, step, max_iterations } reason = Reason::none;
};

struct LsqProblem {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> residual;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> jacobian;
};

/// Throws NumericError when the initial residual is not finite and UsageError
/// when the bounds or starting point are malformed.
TrfResult solve_trf(const LsqProblem& problem, Eigen::VectorXd x0, const Eigen::VectorXd& lb,
                    const Eigen::VectorXd& ub, const TrfOptions& options = {});

/// Moves x strictly inside (lb, ub), as done for the starting point.
Eigen::VectorXd make_strictly_feasible(const Eigen::VectorXd& x, const Eigen::VectorXd& lb, const Eigen::VectorXd& ub,
                                       double rstep = 1e-10);

}  // namespace mtj
