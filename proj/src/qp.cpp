#include "isot/qp.hpp"

#include <algorithm>
#include <cmath>

#include "isot/errors.hpp"

namespace isot {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Orthonormal basis of the null space of C (n columns when C has no rows).
MatrixXd null_space_basis(const MatrixXd& C, int n) {
  if (C.rows() == 0) return MatrixXd::Identity(n, n);
  Eigen::JacobiSVD<MatrixXd> svd(C, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  const double cutoff = 1e-10 * std::max(1.0, s.size() > 0 ? s[0] : 0.0);
  int rank = 0;
  for (int i = 0; i < s.size(); ++i) {
    if (s[i] > cutoff) ++rank;
  }
  return svd.matrixV().rightCols(n - rank);
}

MatrixXd working_matrix(const BoxQp& qp, const std::vector<int>& active) {
  const int n = static_cast<int>(qp.H.rows());
  int count = 0;
  for (int a : active) count += (a != 0);
  MatrixXd C = MatrixXd::Zero(qp.E.rows() + count, n);
  C.topRows(qp.E.rows()) = qp.E;
  int row = static_cast<int>(qp.E.rows());
  for (int i = 0; i < n; ++i) {
    if (active[static_cast<std::size_t>(i)] != 0) C(row++, i) = 1.0;
  }
  return C;
}

// Least-squares multipliers for grad = C' nu, split back into equality and bound parts.
void multipliers(const BoxQp& qp, const VectorXd& grad, const std::vector<int>& active, QpResult& out) {
  const int n = static_cast<int>(qp.H.rows());
  const MatrixXd C = working_matrix(qp, active);
  VectorXd nu = VectorXd::Zero(C.rows());
  if (C.rows() > 0) {
    nu = C.transpose().completeOrthogonalDecomposition().solve(grad);
  }
  out.eq_multipliers = nu.head(qp.E.rows());
  out.bound_multipliers = VectorXd::Zero(n);
  int row = static_cast<int>(qp.E.rows());
  for (int i = 0; i < n; ++i) {
    if (active[static_cast<std::size_t>(i)] != 0) out.bound_multipliers[i] = nu[row++];
  }
}

}  // namespace

QpResult solve_box_qp(const BoxQp& qp, const VectorXd& start, const QpOptions& options) {
  const int n = static_cast<int>(qp.H.rows());
  if (qp.H.cols() != n || qp.g.size() != n || start.size() != n || qp.lower.size() != n ||
      qp.upper.size() != n || qp.E.cols() != (qp.E.rows() > 0 ? n : qp.E.cols()) ||
      qp.b.size() != qp.E.rows()) {
    throw InvalidInput("inconsistent QP dimensions");
  }
  if ((qp.lower.array() > qp.upper.array()).any()) throw InvalidInput("QP lower bound above upper bound");

  const double tol = options.tolerance;
  QpResult out;
  out.x = start;
  out.active.assign(static_cast<std::size_t>(n), 0);
  std::vector<bool> fixed(static_cast<std::size_t>(n), false);
  for (int i = 0; i < n; ++i) {
    auto& a = out.active[static_cast<std::size_t>(i)];
    if (qp.upper[i] - qp.lower[i] <= tol) {
      fixed[static_cast<std::size_t>(i)] = true;
      a = -1;
      out.x[i] = qp.lower[i];
    } else if (out.x[i] <= qp.lower[i] + tol) {
      a = -1;
      out.x[i] = qp.lower[i];
    } else if (out.x[i] >= qp.upper[i] - tol) {
      a = 1;
      out.x[i] = qp.upper[i];
    }
  }

  for (out.iterations = 0; out.iterations < options.max_iterations; ++out.iterations) {
    const VectorXd grad = qp.H * out.x + qp.g;
    const MatrixXd Z = null_space_basis(working_matrix(qp, out.active), n);
    VectorXd p = VectorXd::Zero(n);
    bool stationary = true;
    if (Z.cols() > 0) {
      const VectorXd reduced_grad = Z.transpose() * grad;
      // With a nearly singular reduced Hessian, roundoff in the gradient is
      // amplified into the step, so stationarity is also judged on the
      // reduced gradient relative to the problem scale.
      const double scale = 1.0 + qp.H.lpNorm<Eigen::Infinity>() * out.x.lpNorm<Eigen::Infinity>() +
                           qp.g.lpNorm<Eigen::Infinity>();
      const MatrixXd reduced = Z.transpose() * qp.H * Z;
      p = Z * reduced.ldlt().solve(-reduced_grad);
      stationary = p.lpNorm<Eigen::Infinity>() <= tol * (1.0 + out.x.lpNorm<Eigen::Infinity>()) ||
                   reduced_grad.lpNorm<Eigen::Infinity>() <= tol * scale;
    }

    if (stationary) {
      multipliers(qp, grad, out.active, out);
      int release = -1;
      double worst = tol * (1.0 + grad.lpNorm<Eigen::Infinity>());
      for (int i = 0; i < n; ++i) {
        const int a = out.active[static_cast<std::size_t>(i)];
        if (a == 0 || fixed[static_cast<std::size_t>(i)]) continue;
        const double violation = a < 0 ? -out.bound_multipliers[i] : out.bound_multipliers[i];
        if (violation > worst) {
          worst = violation;
          release = i;
        }
      }
      if (release < 0) {
        out.converged = true;
        break;
      }
      out.active[static_cast<std::size_t>(release)] = 0;
      continue;
    }

    double step = 1.0;
    int blocking = -1;
    for (int i = 0; i < n; ++i) {
      if (out.active[static_cast<std::size_t>(i)] != 0) continue;
      double limit = step;
      if (p[i] < 0.0) {
        limit = (qp.lower[i] - out.x[i]) / p[i];
      } else if (p[i] > 0.0) {
        limit = (qp.upper[i] - out.x[i]) / p[i];
      }
      if (limit < step) {
        step = std::max(limit, 0.0);
        blocking = i;
      }
    }
    out.x += step * p;
    if (blocking >= 0) {
      const bool at_lower = p[blocking] < 0.0;
      out.x[blocking] = at_lower ? qp.lower[blocking] : qp.upper[blocking];
      out.active[static_cast<std::size_t>(blocking)] = at_lower ? -1 : 1;
    }
  }

  if (!out.converged) multipliers(qp, qp.H * out.x + qp.g, out.active, out);
  out.kkt_residual = kkt_violation(qp, out);
  return out;
}

double kkt_violation(const BoxQp& qp, const QpResult& r) {
  const VectorXd grad = qp.H * r.x + qp.g;
  VectorXd stationarity = grad - r.bound_multipliers;
  if (qp.E.rows() > 0) stationarity -= qp.E.transpose() * r.eq_multipliers;
  double v = stationarity.lpNorm<Eigen::Infinity>();
  if (qp.E.rows() > 0) v = std::max(v, (qp.E * r.x - qp.b).lpNorm<Eigen::Infinity>());
  for (int i = 0; i < r.x.size(); ++i) {
    v = std::max(v, qp.lower[i] - r.x[i]);
    v = std::max(v, r.x[i] - qp.upper[i]);
    const double mu = r.bound_multipliers[i];
    if (mu > 0.0) v = std::max(v, mu * (r.x[i] - qp.lower[i]));
    if (mu < 0.0) v = std::max(v, -mu * (qp.upper[i] - r.x[i]));
  }
  return v;
}

}  // namespace isot
