#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "isot/kinematics.hpp"
#include "isot/qp.hpp"

namespace isot {

// ---------------------------------------------------------------------------
// Linear algebra helpers

/// Damped least-squares inverse J'(JJ' + damping^2 I)^-1. With damping = 0 this
/// is the Moore-Penrose inverse (singular values below 1e-10*sigma_max dropped).
MatX pseudoinverse(const MatX& J, double damping);

/// I - V_r V_r' from the SVD of J, i.e. the exact orthogonal projector onto
/// ker(J). Rank is decided with a relative 1e-10 cutoff, so rank-deficient and
/// all-zero Jacobians are handled without damping.
MatX null_space_projector(const MatX& J);

// ---------------------------------------------------------------------------
// Tasks

struct Priority {
  bool hard = true;
  int level = 0;

  static Priority Hard(int level) { return {true, level}; }
  static Priority Soft() { return {false, 0}; }
};

/// A task evaluated at one state: Jacobian, error, diagonal gain, weight.
struct TaskTerm {
  std::string id;
  MatX jacobian;
  VecX error;
  VecX gain;  // diagonal of Omega
  double weight = 1.0;
  Priority priority;
};

struct TaskSpec {
  std::string id;
  std::function<MatX(const VecX&)> jacobian;
  std::function<VecX(const VecX&)> error;
  VecX gain;
  double weight = 1.0;
  Priority priority;

  TaskTerm evaluate(const VecX& q) const;
};

struct VelocityBounds {
  VecX lower;
  VecX upper;
};

/// Joint-velocity box that also keeps the next Euler step inside [q_L, q_U].
VelocityBounds velocity_bounds(const KinematicChain& chain, const VecX& q, const VecX& max_rate, double dt);

class TaskStack {
 public:
  TaskStack(std::vector<TaskSpec> tasks, VelocityBounds bounds, double dt = 1e-3);

  const std::vector<TaskSpec>& tasks() const { return tasks_; }
  const VelocityBounds& bounds() const { return bounds_; }
  double dt() const { return dt_; }
  const TaskSpec& primary() const;

  std::vector<TaskTerm> evaluate(const VecX& q) const;

 private:
  std::vector<TaskSpec> tasks_;
  VelocityBounds bounds_;
  double dt_;
};

/// Row-stacks weight_j*J_j and weight_j*e_j in the given order.
std::pair<MatX, VecX> augmented_jacobian(std::span<const TaskTerm> tasks);

/// One priority level: stacked weighted Jacobian and target weight*Omega*e.
struct PriorityLevel {
  std::vector<std::string> ids;
  MatX jacobian;
  VecX target;
};

/// Hard tasks grouped by level (ascending); all soft tasks share one final
/// weighted level.
std::vector<PriorityLevel> build_levels(std::span<const TaskTerm> terms);

/// How lower levels are projected in the closed-form solver.
enum class ProjectionForm {
  /// qdot = J0^+ W0 e0 + sum_j N_aug J_j^+ W_j e_j
  kAsWritten,
  /// qdot_k = qdot_{k-1} + (J_k N_aug)^+ (W_k e_k - J_k qdot_{k-1}); the
  /// closed form of the cascaded least-squares problem.
  kRecursive,
};

struct LevelDiagnostics {
  std::vector<std::string> ids;
  BoxQp problem;
  QpResult result;
};

struct Solution {
  VecX qdot;
  std::vector<VecX> task_residuals;  // J_j qdot - Omega_j e_j, per task in stack order
  std::vector<double> slack_norms;   // per level
  double kkt_residual = 0.0;
  bool converged = true;
  std::vector<LevelDiagnostics> levels;  // QP path only
};

Solution solve_prioritized(const TaskStack& stack, const VecX& q, double damping = 1e-4,
                           ProjectionForm form = ProjectionForm::kAsWritten);
Solution solve_prioritized(std::span<const TaskTerm> terms, double damping = 1e-4,
                           ProjectionForm form = ProjectionForm::kAsWritten);

struct CascadeOptions {
  double damping = 1e-4;
  QpOptions qp;
};

/// Lexicographic least squares: level k minimizes
///   1/2 |J_k qdot - W_k e_k|^2 + 1/2 damping^2 |qdot|^2
/// subject to the bounds and to every higher level keeping the task value it
/// achieved. The level residual plays the role of the slack variable.
Solution solve_cascaded_qp(const TaskStack& stack, const VecX& q, const VelocityBounds& bounds,
                           const CascadeOptions& options = {});
Solution solve_cascaded_qp(std::span<const TaskTerm> terms, const VelocityBounds& bounds,
                           const CascadeOptions& options = {});

// ---------------------------------------------------------------------------
// Secondary performance tasks

/// 1/2 * sum over joints 2..n-1 (1-based) of sin^2(q_j).
double manipulability_value(const VecX& q);
MatX manipulability_jacobian(const VecX& q);

/// 1/(2n) * sum ((q_j - mid_j) / (q_U - q_L))^2.
double joint_limit_value(const VecX& q, const KinematicChain& chain);
MatX joint_limit_jacobian(const VecX& q, const KinematicChain& chain);

// ---------------------------------------------------------------------------
// Force task and statics

/// f_desired - R * f_sensor, expressed in the base frame.
Vec3 force_task_error(const Vec3& f_sensor, const Vec3& f_desired, const Mat3& sensor_to_base);

/// 3 x 2 Jacobian of the two prismatic jaws (closing displacement, m). Each
/// column is the contact normal (sensor z, i.e. the inward jaw axis) in the
/// base frame.
MatX gripper_jacobian(const Mat3& sensor_to_base);

/// J' f.
VecX kineto_static_dual(const MatX& J, const VecX& f);

bool is_rotation(const Mat3& R, double tol = 1e-9);

// ---------------------------------------------------------------------------
// Integration

struct StepResult {
  VecX q;
  bool saturated = false;
  std::vector<int> saturated_joints;
};

StepResult integrate_step(const VecX& q, const VecX& qdot, double dt, const KinematicChain& chain);

// ---------------------------------------------------------------------------
// Task factories used by the controller

TaskSpec make_cartesian_task(const KinematicChain& chain, const Pose& desired, double gain, double weight,
                             Priority priority = Priority::Hard(0));
TaskSpec make_manipulability_task(double desired_value, double gain, double weight);
TaskSpec make_joint_limit_task(const KinematicChain& chain, double gain, double weight);

// ---------------------------------------------------------------------------
// Solver configuration (solver.v1)

struct SolverConfig {
  double damping = 1e-4;
  double gain_cartesian = 2.0;
  double gain_force = 1.0;
  double gain_manipulability = 1.0;
  double gain_joint_limit = 1.0;
  double gain_hold = 2.0;
  double alpha_primary = 1.0;
  double alpha_manipulability = 0.5;
  double alpha_joint_limit = 0.5;
  VecX qdot_max = VecX::Constant(7, 1.5);  // rad/s
  double jaw_rate_max = 0.05;               // m/s
  double qp_tolerance = 1e-10;
  int max_active_set_iters = 100;

  CascadeOptions cascade() const { return {damping, {qp_tolerance, max_active_set_iters}}; }
};

SolverConfig solver_config_from_json_text(const std::string& text);
SolverConfig load_solver_config(const std::string& path);
std::string solver_config_to_json_text(const SolverConfig& config);

inline constexpr double kManipulabilityTarget = 2.5;

/// One control step of the arm: Cartesian primary (position plus tool axis,
/// yaw free, position error clamped to `error_clamp`), manipulability and
/// joint-limit secondaries, under joint-rate and joint-limit bounds.
Solution solve_arm_step(const KinematicChain& chain, const SolverConfig& config, const VecX& q, const Pose& setpoint,
                        double gain, double error_clamp, double dt);

}  // namespace isot
