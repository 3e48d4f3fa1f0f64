#pragma once

// Independent reference computations used only by the tests. Nothing here
// calls into the code path it is used to check.

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <vector>

namespace oracle {

using Eigen::Matrix4d;
using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

inline Matrix4d rot_z(double t) {
  Matrix4d T = Matrix4d::Identity();
  T.topLeftCorner<3, 3>() = Eigen::AngleAxisd(t, Vector3d::UnitZ()).toRotationMatrix();
  return T;
}
inline Matrix4d rot_x(double t) {
  Matrix4d T = Matrix4d::Identity();
  T.topLeftCorner<3, 3>() = Eigen::AngleAxisd(t, Vector3d::UnitX()).toRotationMatrix();
  return T;
}
inline Matrix4d trans(double x, double y, double z) {
  Matrix4d T = Matrix4d::Identity();
  T(0, 3) = x;
  T(1, 3) = y;
  T(2, 3) = z;
  return T;
}

struct Dh {
  double a, alpha, d, theta0;
};

/// Product of elementary transforms Rz * Tz * Tx * Rx per joint.
inline Matrix4d naive_fk(const std::vector<Dh>& rows, const VectorXd& q) {
  Matrix4d T = Matrix4d::Identity();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    T = T * rot_z(q[static_cast<Eigen::Index>(i)] + r.theta0) * trans(0, 0, r.d) * trans(r.a, 0, 0) * rot_x(r.alpha);
  }
  return T;
}

/// Central differences of a vector-valued function.
inline MatrixXd central_difference(const std::function<VectorXd(const VectorXd&)>& f, const VectorXd& x,
                                   double eps) {
  const VectorXd f0 = f(x);
  MatrixXd J(f0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    VectorXd xp = x, xm = x;
    xp[i] += eps;
    xm[i] -= eps;
    J.col(i) = (f(xp) - f(xm)) / (2.0 * eps);
  }
  return J;
}

inline Vector3d cross(const Vector3d& a, const Vector3d& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

/// Hamilton product on (w, x, y, z) arrays.
inline Eigen::Vector4d quat_mul(const Eigen::Vector4d& p, const Eigen::Vector4d& q) {
  return {p[0] * q[0] - p[1] * q[1] - p[2] * q[2] - p[3] * q[3],
          p[0] * q[1] + p[1] * q[0] + p[2] * q[3] - p[3] * q[2],
          p[0] * q[2] - p[1] * q[3] + p[2] * q[0] + p[3] * q[1],
          p[0] * q[3] + p[1] * q[2] - p[2] * q[1] + p[3] * q[0]};
}

/// Damped normal equations: argmin |J x - r|^2 + lambda^2 |x|^2 via (J'J + lambda^2 I) x = J' r.
inline VectorXd damped_normal_equations(const MatrixXd& J, const VectorXd& r, double lambda) {
  const MatrixXd A = J.transpose() * J + lambda * lambda * MatrixXd::Identity(J.cols(), J.cols());
  return A.fullPivLu().solve(J.transpose() * r);
}

/// Brute-force minimization of 1/2 x'Hx + g'x over a 2D box grid.
inline Eigen::Vector2d grid_search_2d(const Eigen::Matrix2d& H, const Eigen::Vector2d& g, const Eigen::Vector2d& lo,
                                      const Eigen::Vector2d& hi, double step) {
  double best = std::numeric_limits<double>::infinity();
  Eigen::Vector2d arg = lo;
  const int nx = static_cast<int>(std::round((hi[0] - lo[0]) / step));
  const int ny = static_cast<int>(std::round((hi[1] - lo[1]) / step));
  for (int i = 0; i <= nx; ++i) {
    const double x = lo[0] + i * step;
    for (int j = 0; j <= ny; ++j) {
      const double y = lo[1] + j * step;
      const double f = 0.5 * (H(0, 0) * x * x + 2 * H(0, 1) * x * y + H(1, 1) * y * y) + g[0] * x + g[1] * y;
      if (f < best) {
        best = f;
        arg = {x, y};
      }
    }
  }
  return arg;
}

/// Lawson-Hanson non-negative least squares: argmin |A x - b| s.t. x >= 0.
inline VectorXd lawson_hanson(const MatrixXd& A, const VectorXd& b) {
  const Eigen::Index m = A.cols();
  VectorXd x = VectorXd::Zero(m);
  std::vector<bool> passive(static_cast<std::size_t>(m), false);
  const double tol = 1e-13 * std::max(1.0, A.norm() * b.norm());
  auto solve_passive = [&](VectorXd& z) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < m; ++j) if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
    MatrixXd Ap(A.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) Ap.col(static_cast<Eigen::Index>(k)) = A.col(idx[k]);
    const VectorXd zp = Ap.completeOrthogonalDecomposition().solve(b);
    z = VectorXd::Zero(m);
    for (std::size_t k = 0; k < idx.size(); ++k) z[idx[k]] = zp[static_cast<Eigen::Index>(k)];
  };
  for (int outer = 0; outer < 3 * static_cast<int>(m) + 10; ++outer) {
    const VectorXd w = A.transpose() * (b - A * x);
    Eigen::Index best = -1;
    double wmax = tol;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (!passive[static_cast<std::size_t>(j)] && w[j] > wmax) {
        wmax = w[j];
        best = j;
      }
    }
    if (best < 0) break;
    passive[static_cast<std::size_t>(best)] = true;
    VectorXd z;
    for (int inner = 0; inner <= static_cast<int>(m); ++inner) {
      solve_passive(z);
      bool ok = true;
      for (Eigen::Index j = 0; j < m; ++j) ok = ok && (!passive[static_cast<std::size_t>(j)] || z[j] > 0.0);
      if (ok) break;
      double alpha = 1.0;
      for (Eigen::Index j = 0; j < m; ++j) {
        if (passive[static_cast<std::size_t>(j)] && z[j] <= 0.0) alpha = std::min(alpha, x[j] / (x[j] - z[j]));
      }
      x += alpha * (z - x);
      for (Eigen::Index j = 0; j < m; ++j) {
        if (passive[static_cast<std::size_t>(j)] && x[j] <= 1e-15) {
          passive[static_cast<std::size_t>(j)] = false;
          x[j] = 0.0;
        }
      }
    }
    x = z.cwiseMax(0.0);
  }
  return x;
}

/// KKT check of  min 1/2 x'Hx + g'x  s.t. Ex = b, l <= x <= u  at a primal point
/// only: multipliers are recovered here by non-negative least squares over
/// the bounds that are active at x. Returns the worst violation.
inline double kkt_residual(const MatrixXd& H, const VectorXd& g, const MatrixXd& E, const VectorXd& b,
                           const VectorXd& l, const VectorXd& u, const VectorXd& x, double active_tol = 1e-9) {
  const Eigen::Index n = x.size();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    worst = std::max(worst, l[i] - x[i]);
    worst = std::max(worst, x[i] - u[i]);
  }
  if (E.rows() > 0) worst = std::max(worst, (E * x - b).cwiseAbs().maxCoeff());

  // columns: E' and pinned variables (free sign), then +e_i for active lower
  // and -e_i for active upper (>= 0)
  std::vector<Eigen::Index> pinned, lo, hi;
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool at_lo = x[i] - l[i] <= active_tol, at_hi = u[i] - x[i] <= active_tol;
    if (at_lo && at_hi) pinned.push_back(i);
    else if (at_lo) lo.push_back(i);
    else if (at_hi) hi.push_back(i);
  }
  const Eigen::Index free_cols = E.rows() + static_cast<Eigen::Index>(pinned.size());
  const Eigen::Index m = free_cols + static_cast<Eigen::Index>(lo.size() + hi.size());
  MatrixXd A = MatrixXd::Zero(n, m);
  if (E.rows() > 0) A.leftCols(E.rows()) = E.transpose();
  Eigen::Index c = E.rows();
  for (auto i : pinned) A(i, c++) = 1.0;
  for (auto i : lo) A(i, c++) = 1.0;
  for (auto i : hi) A(i, c++) = -1.0;
  const VectorXd grad = H * x + g;

  // Free columns are eliminated by projection, the rest is Lawson-Hanson NNLS.
  VectorXd mu = VectorXd::Zero(m);
  if (m > 0) {
    const MatrixXd Af = A.leftCols(free_cols);
    const MatrixXd As = A.rightCols(m - free_cols);
    MatrixXd P = MatrixXd::Identity(n, n);
    if (free_cols > 0) P -= Af * Af.completeOrthogonalDecomposition().pseudoInverse();
    const VectorXd s = lawson_hanson(P * As, P * grad);
    VectorXd a = VectorXd::Zero(free_cols);
    if (free_cols > 0) a = Af.completeOrthogonalDecomposition().solve(grad - As * s);
    mu << a, s;
  }
  const VectorXd stationarity = grad - A * mu;
  worst = std::max(worst, stationarity.cwiseAbs().maxCoeff());
  return worst;
}

/// Connected components of the "distance <= radius" graph, by union-find over
/// all pairs. Returns clusters as sorted index sets, dropping small ones.
inline std::set<std::vector<int>> union_find_clusters(const std::vector<Vector3d>& pts, double radius,
                                                      int min_points) {
  const std::size_t n = pts.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if ((pts[i] - pts[j]).norm() <= radius) parent[find(i)] = find(j);
    }
  }
  std::map<std::size_t, std::vector<int>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[find(i)].push_back(static_cast<int>(i));
  std::set<std::vector<int>> out;
  for (auto& [_, g] : groups) {
    if (static_cast<int>(g.size()) >= min_points) out.insert(g);
  }
  return out;
}

/// Brute-force mean distance to the k nearest neighbours of every point.
inline std::vector<double> knn_mean_distance(const std::vector<Vector3d>& pts, int k) {
  std::vector<double> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (i != j) d.push_back((pts[i] - pts[j]).norm());
    }
    std::sort(d.begin(), d.end());
    const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), d.size());
    out.push_back(kk ? std::accumulate(d.begin(), d.begin() + static_cast<long>(kk), 0.0) / static_cast<double>(kk) : 0.0);
  }
  return out;
}

/// Polar coordinates about the base origin: (|p|, atan2(y, x)).
inline std::pair<double, double> polar(const Vector3d& p) {
  return {std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]), std::atan2(p[1], p[0])};
}

}  // namespace oracle
