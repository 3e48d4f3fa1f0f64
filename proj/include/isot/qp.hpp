#pragma once

#include <Eigen/Dense>

#include <vector>

namespace isot {

/// Dense convex QP
///   min 1/2 x'Hx + g'x   s.t.  E x = b,  lower <= x <= upper
/// with H positive definite. Sized for a handful of variables.
struct BoxQp {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::MatrixXd E;  // may have zero rows; rows may be linearly dependent
  Eigen::VectorXd b;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

struct QpOptions {
  double tolerance = 1e-10;
  int max_iterations = 100;
};

struct QpResult {
  Eigen::VectorXd x;
  Eigen::VectorXd eq_multipliers;     // one per row of E
  Eigen::VectorXd bound_multipliers;  // >0 pushing up from lower, <0 pushing down from upper
  std::vector<int> active;            // -1 at lower, +1 at upper, 0 free
  double kkt_residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Primal active-set method. `start` must be feasible (E start = b within
/// tolerance and inside the box); the iterates stay feasible.
QpResult solve_box_qp(const BoxQp& qp, const Eigen::VectorXd& start, const QpOptions& options = {});

/// Max of stationarity, primal infeasibility, dual infeasibility and
/// complementarity violations for a candidate primal/dual point.
double kkt_violation(const BoxQp& qp, const QpResult& result);

}  // namespace isot
