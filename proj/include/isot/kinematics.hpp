#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <stdexcept>
#include <string>
#include <vector>

#include "isot/errors.hpp"

namespace isot {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using Quat = Eigen::Quaterniond;

/// Angular workspace bound of the default arm (rad), paired with the 0.85 m reach.
inline constexpr double kWorkspaceAngularReach = 4.7124;

/// One revolute joint in standard (distal) DH convention:
///   T = Rz(theta + theta0) * Tz(d) * Tx(a) * Rx(alpha)
struct DhRow {
  double a = 0.0;
  double alpha = 0.0;
  double d = 0.0;
  double theta0 = 0.0;
};

class KinematicChain {
 public:
  KinematicChain(std::string name, std::vector<DhRow> dh, VecX q_lower, VecX q_upper, double reach);

  const std::string& name() const { return name_; }
  const std::vector<DhRow>& dh() const { return dh_; }
  const VecX& lower() const { return q_lower_; }
  const VecX& upper() const { return q_upper_; }
  double reach() const { return reach_; }
  int dof() const { return static_cast<int>(dh_.size()); }

  VecX midpoint() const { return 0.5 * (q_lower_ + q_upper_); }

  /// Joint angle vector of the elbow-bent home posture of the shipped arm.
  /// Only meaningful for default_chain(); other chains get their midpoint.
  VecX home() const;

 private:
  std::string name_;
  std::vector<DhRow> dh_;
  VecX q_lower_;
  VecX q_upper_;
  double reach_;
};

/// 7-DoF spherical-shoulder/spherical-wrist arm; fully stretched reach 0.85 m.
KinematicChain default_chain();

/// chain.v1 JSON <-> KinematicChain.
KinematicChain load_chain(const std::string& path);
KinematicChain chain_from_json_text(const std::string& text);
std::string chain_to_json_text(const KinematicChain& chain);

/// End-effector pose in the base frame. The orientation is kept unit-norm
/// and sign-canonical (w >= 0).
struct Pose {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();

  Mat4 matrix() const;
  static Pose from_matrix(const Mat4& T);
};

Quat canonical(Quat q);
bool is_unit(const Quat& q, double tol = 1e-9);

Mat4 dh_transform(const DhRow& row, double q);

/// Frames T_0^1 ... T_0^n (n entries) for configuration q.
std::vector<Mat4> link_frames(const KinematicChain& chain, const VecX& q);

Pose forward_kinematics(const KinematicChain& chain, const VecX& q);

/// 6 x n; top rows linear velocity, bottom rows angular velocity.
MatX geometric_jacobian(const KinematicChain& chain, const VecX& q);

/// 2 x 3 selector keeping the x and y rows of the orientation error.
Eigen::Matrix<double, 2, 3> orientation_selector();

/// 5 x n: [J_p; Gamma * J_o].
MatX analytic_cartesian_jacobian(const KinematicChain& chain, const VecX& q);

Mat3 skew(const Vec3& v);

/// Position error followed by the selected quaternion vector error
/// psi*zeta_d - psi_d*zeta - S(zeta_d)*zeta (5 entries).
Eigen::Matrix<double, 5, 1> cartesian_task_error(const Pose& current, const Pose& desired);

/// Tool pointing straight down (tool z along -base z), yaw zero.
Quat tool_down_orientation();

/// Desired orientation that keeps the current rotation about the tool axis:
/// the shortest rotation carrying the current tool z onto the desired tool z,
/// applied to the current orientation. Used when yaw is left uncontrolled.
Quat yaw_free_orientation(const Quat& current, const Quat& desired);

}  // namespace isot
