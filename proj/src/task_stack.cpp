#include "isot/task_stack.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace isot {

namespace {

constexpr double kRankCutoff = 1e-10;

struct Svd {
  MatX U;
  VecX s;
  MatX V;
};

Svd full_svd(const MatX& J) {
  Eigen::JacobiSVD<MatX> svd(J, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return {svd.matrixU(), svd.singularValues(), svd.matrixV()};
}

int numerical_rank(const VecX& s) {
  if (s.size() == 0) return 0;
  const double cutoff = kRankCutoff * std::max(1.0, s[0]);
  int r = 0;
  for (int i = 0; i < s.size(); ++i) r += s[i] > cutoff;
  return r;
}

VecX diag_gain(const VecX& gain, Eigen::Index rows) {
  if (gain.size() == 1 && rows != 1) return VecX::Constant(rows, gain[0]);
  return gain;
}

}  // namespace

MatX pseudoinverse(const MatX& J, double damping) {
  if (damping < 0.0) throw InvalidInput("damping must be non-negative");
  const Eigen::Index m = J.rows(), n = J.cols();
  if (m == 0 || n == 0) return MatX::Zero(n, m);
  const Svd svd = full_svd(J);
  const int r = damping > 0.0 ? static_cast<int>(svd.s.size()) : numerical_rank(svd.s);
  MatX out = MatX::Zero(n, m);
  const double lambda2 = damping * damping;
  for (int i = 0; i < r; ++i) {
    const double s = svd.s[i];
    const double inv = s / (s * s + lambda2);
    if (inv == 0.0) continue;
    out.noalias() += inv * svd.V.col(i) * svd.U.col(i).transpose();
  }
  return out;
}

MatX null_space_projector(const MatX& J) {
  const Eigen::Index n = J.cols();
  if (J.rows() == 0) return MatX::Identity(n, n);
  const Svd svd = full_svd(J);
  const int r = numerical_rank(svd.s);
  const MatX Vr = svd.V.leftCols(r);
  return MatX::Identity(n, n) - Vr * Vr.transpose();
}

TaskTerm TaskSpec::evaluate(const VecX& q) const {
  TaskTerm t;
  t.id = id;
  t.jacobian = jacobian(q);
  t.error = error(q);
  t.gain = diag_gain(gain, t.error.size());
  t.weight = weight;
  t.priority = priority;
  if (t.jacobian.rows() != t.error.size() || t.gain.size() != t.error.size()) {
    throw InvalidInput("task '" + id + "' has inconsistent Jacobian/error/gain sizes");
  }
  return t;
}

VelocityBounds velocity_bounds(const KinematicChain& chain, const VecX& q, const VecX& max_rate, double dt) {
  if (!(dt > 0.0)) throw InvalidInput("dt must be positive");
  VelocityBounds b;
  b.lower = (-max_rate).cwiseMax((chain.lower() - q) / dt);
  b.upper = max_rate.cwiseMin((chain.upper() - q) / dt);
  // a joint sitting outside its range still gets a consistent box
  b.lower = b.lower.cwiseMin(b.upper);
  return b;
}

TaskStack::TaskStack(std::vector<TaskSpec> tasks, VelocityBounds bounds, double dt)
    : tasks_(std::move(tasks)), bounds_(std::move(bounds)), dt_(dt) {
  if (tasks_.empty()) throw InvalidInput("task stack needs at least one task");
  if (!(dt_ > 0.0)) throw InvalidInput("dt must be positive");
  int level0 = 0;
  for (const auto& t : tasks_) {
    if (t.gain.size() == 0 || (t.gain.array() <= 0.0).any()) {
      throw InvalidInput("task '" + t.id + "' needs a positive diagonal gain");
    }
    if (t.weight < 0.0) throw InvalidInput("task '" + t.id + "' has a negative weight");
    if (t.priority.hard && t.priority.level < 0) throw InvalidInput("hard priority levels start at 0");
    level0 += t.priority.hard && t.priority.level == 0;
  }
  if (level0 != 1) throw InvalidInput("exactly one hard level-0 task is required");
  if (bounds_.lower.size() != bounds_.upper.size() || (bounds_.lower.array() > bounds_.upper.array()).any()) {
    throw InvalidInput("velocity bounds must satisfy lower <= upper");
  }
}

const TaskSpec& TaskStack::primary() const {
  for (const auto& t : tasks_) {
    if (t.priority.hard && t.priority.level == 0) return t;
  }
  throw InvalidInput("no primary task");  // unreachable, enforced by the constructor
}

std::vector<TaskTerm> TaskStack::evaluate(const VecX& q) const {
  std::vector<TaskTerm> terms;
  terms.reserve(tasks_.size());
  for (const auto& t : tasks_) terms.push_back(t.evaluate(q));
  return terms;
}

std::pair<MatX, VecX> augmented_jacobian(std::span<const TaskTerm> tasks) {
  Eigen::Index rows = 0, cols = 0;
  for (const auto& t : tasks) {
    rows += t.jacobian.rows();
    cols = std::max(cols, t.jacobian.cols());
  }
  MatX J(rows, cols);
  VecX e(rows);
  Eigen::Index r = 0;
  for (const auto& t : tasks) {
    J.middleRows(r, t.jacobian.rows()) = t.weight * t.jacobian;
    e.segment(r, t.error.size()) = t.weight * t.error;
    r += t.jacobian.rows();
  }
  return {J, e};
}

std::vector<PriorityLevel> build_levels(std::span<const TaskTerm> terms) {
  std::map<int, std::vector<const TaskTerm*>> hard;
  std::vector<const TaskTerm*> soft;
  for (const auto& t : terms) {
    if (t.priority.hard) {
      hard[t.priority.level].push_back(&t);
    } else {
      soft.push_back(&t);
    }
  }
  auto make = [](const std::vector<const TaskTerm*>& group) {
    PriorityLevel level;
    Eigen::Index rows = 0;
    for (const auto* t : group) rows += t->jacobian.rows();
    const Eigen::Index n = group.front()->jacobian.cols();
    level.jacobian.resize(rows, n);
    level.target.resize(rows);
    Eigen::Index r = 0;
    for (const auto* t : group) {
      level.ids.push_back(t->id);
      const Eigen::Index k = t->jacobian.rows();
      level.jacobian.middleRows(r, k) = t->weight * t->jacobian;
      level.target.segment(r, k) = t->weight * t->gain.cwiseProduct(t->error);
      r += k;
    }
    return level;
  };
  std::vector<PriorityLevel> levels;
  for (const auto& [_, group] : hard) levels.push_back(make(group));
  if (!soft.empty()) levels.push_back(make(soft));
  return levels;
}

namespace {

void fill_residuals(std::span<const TaskTerm> terms, const std::vector<PriorityLevel>& levels, Solution& sol) {
  for (const auto& t : terms) sol.task_residuals.push_back(t.jacobian * sol.qdot - t.gain.cwiseProduct(t.error));
  for (const auto& l : levels) sol.slack_norms.push_back((l.jacobian * sol.qdot - l.target).norm());
}

MatX stack_rows(const MatX& top, const MatX& bottom) {
  if (top.rows() == 0) return bottom;
  MatX out(top.rows() + bottom.rows(), bottom.cols());
  out << top, bottom;
  return out;
}

}  // namespace

Solution solve_prioritized(std::span<const TaskTerm> terms, double damping, ProjectionForm form) {
  if (terms.empty()) throw InvalidInput("solve_prioritized needs at least one task");
  const auto levels = build_levels(terms);
  const Eigen::Index n = levels.front().jacobian.cols();
  Solution sol;
  sol.qdot = VecX::Zero(n);
  MatX higher(0, n);
  for (std::size_t k = 0; k < levels.size(); ++k) {
    const auto& level = levels[k];
    if (k == 0) {
      sol.qdot = pseudoinverse(level.jacobian, damping) * level.target;
    } else {
      const MatX N = null_space_projector(higher);
      if (form == ProjectionForm::kAsWritten) {
        sol.qdot += N * pseudoinverse(level.jacobian, damping) * level.target;
      } else {
        sol.qdot += pseudoinverse(level.jacobian * N, damping) * (level.target - level.jacobian * sol.qdot);
      }
    }
    higher = stack_rows(higher, level.jacobian);
  }
  fill_residuals(terms, levels, sol);
  return sol;
}

Solution solve_prioritized(const TaskStack& stack, const VecX& q, double damping, ProjectionForm form) {
  const auto terms = stack.evaluate(q);
  return solve_prioritized(std::span<const TaskTerm>(terms), damping, form);
}

Solution solve_cascaded_qp(std::span<const TaskTerm> terms, const VelocityBounds& bounds,
                           const CascadeOptions& options) {
  if (terms.empty()) throw InvalidInput("solve_cascaded_qp needs at least one task");
  const auto levels = build_levels(terms);
  const Eigen::Index n = levels.front().jacobian.cols();
  if (bounds.lower.size() != n || bounds.upper.size() != n) {
    throw InvalidInput("velocity bounds do not match the number of joints");
  }
  if ((bounds.lower.array() > bounds.upper.array()).any()) throw InvalidInput("velocity bounds need l <= u");

  Solution sol;
  VecX x = bounds.lower.cwiseMax(VecX::Zero(n)).cwiseMin(bounds.upper);
  MatX higher(0, n);
  const double lambda2 = options.damping * options.damping;
  for (const auto& level : levels) {
    BoxQp qp;
    qp.H = level.jacobian.transpose() * level.jacobian + lambda2 * MatX::Identity(n, n);
    qp.g = -level.jacobian.transpose() * level.target;
    qp.E = higher;
    qp.b = higher * x;
    qp.lower = bounds.lower;
    qp.upper = bounds.upper;
    QpResult result = solve_box_qp(qp, x, options.qp);
    x = result.x;
    sol.kkt_residual = std::max(sol.kkt_residual, result.kkt_residual);
    sol.converged = sol.converged && result.converged;
    sol.levels.push_back({level.ids, std::move(qp), std::move(result)});
    higher = stack_rows(higher, level.jacobian);
  }
  sol.qdot = x.cwiseMax(bounds.lower).cwiseMin(bounds.upper);
  fill_residuals(terms, levels, sol);
  return sol;
}

Solution solve_cascaded_qp(const TaskStack& stack, const VecX& q, const VelocityBounds& bounds,
                           const CascadeOptions& options) {
  const auto terms = stack.evaluate(q);
  return solve_cascaded_qp(std::span<const TaskTerm>(terms), bounds, options);
}

double manipulability_value(const VecX& q) {
  double v = 0.0;
  for (Eigen::Index j = 1; j + 1 < q.size(); ++j) {
    const double s = std::sin(q[j]);
    v += s * s;
  }
  return 0.5 * v;
}

MatX manipulability_jacobian(const VecX& q) {
  MatX J = MatX::Zero(1, q.size());
  for (Eigen::Index j = 1; j + 1 < q.size(); ++j) J(0, j) = std::cos(q[j]) * std::sin(q[j]);
  return J;
}

double joint_limit_value(const VecX& q, const KinematicChain& chain) {
  if (q.size() != chain.dof()) throw InvalidInput("joint vector does not match the chain");
  const VecX range = chain.upper() - chain.lower();
  const VecX rel = (q - chain.midpoint()).cwiseQuotient(range);
  return rel.squaredNorm() / (2.0 * static_cast<double>(q.size()));
}

MatX joint_limit_jacobian(const VecX& q, const KinematicChain& chain) {
  if (q.size() != chain.dof()) throw InvalidInput("joint vector does not match the chain");
  const VecX range = chain.upper() - chain.lower();
  const VecX grad = (q - chain.midpoint()).cwiseQuotient(range.cwiseProduct(range)) / static_cast<double>(q.size());
  return grad.transpose();
}

bool is_rotation(const Mat3& R, double tol) {
  return (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(R.determinant() - 1.0) <= tol;
}

Vec3 force_task_error(const Vec3& f_sensor, const Vec3& f_desired, const Mat3& sensor_to_base) {
  if (!is_rotation(sensor_to_base, 1e-6)) throw InvalidInput("sensor-to-base matrix is not a rotation");
  return f_desired - sensor_to_base * f_sensor;
}

MatX gripper_jacobian(const Mat3& sensor_to_base) {
  MatX J(3, 2);
  J.col(0) = sensor_to_base.col(2);
  J.col(1) = sensor_to_base.col(2);
  return J;
}

VecX kineto_static_dual(const MatX& J, const VecX& f) {
  if (J.rows() != f.size()) throw InvalidInput("force dimension does not match the Jacobian rows");
  return J.transpose() * f;
}

StepResult integrate_step(const VecX& q, const VecX& qdot, double dt, const KinematicChain& chain) {
  if (!(dt > 0.0)) throw InvalidInput("dt must be positive");
  if (q.size() != chain.dof() || qdot.size() != chain.dof()) throw InvalidInput("joint vector does not match the chain");
  StepResult out;
  out.q = q + qdot * dt;
  for (int i = 0; i < chain.dof(); ++i) {
    if (out.q[i] > chain.upper()[i]) {
      out.q[i] = chain.upper()[i];
      out.saturated_joints.push_back(i);
    } else if (out.q[i] < chain.lower()[i]) {
      out.q[i] = chain.lower()[i];
      out.saturated_joints.push_back(i);
    }
  }
  out.saturated = !out.saturated_joints.empty();
  return out;
}

TaskSpec make_cartesian_task(const KinematicChain& chain, const Pose& desired, double gain, double weight,
                             Priority priority) {
  TaskSpec t;
  t.id = "cartesian";
  t.jacobian = [chain](const VecX& q) { return analytic_cartesian_jacobian(chain, q); };
  t.error = [chain, desired](const VecX& q) -> VecX {
    return cartesian_task_error(forward_kinematics(chain, q), desired);
  };
  t.gain = VecX::Constant(5, gain);
  t.weight = weight;
  t.priority = priority;
  return t;
}

TaskSpec make_manipulability_task(double desired_value, double gain, double weight) {
  TaskSpec t;
  t.id = "manipulability";
  t.jacobian = [](const VecX& q) { return manipulability_jacobian(q); };
  t.error = [desired_value](const VecX& q) { return VecX::Constant(1, desired_value - manipulability_value(q)); };
  t.gain = VecX::Constant(1, gain);
  t.weight = weight;
  t.priority = Priority::Soft();
  return t;
}

TaskSpec make_joint_limit_task(const KinematicChain& chain, double gain, double weight) {
  TaskSpec t;
  t.id = "joint_limit";
  t.jacobian = [chain](const VecX& q) { return joint_limit_jacobian(q, chain); };
  t.error = [chain](const VecX& q) { return VecX::Constant(1, -joint_limit_value(q, chain)); };
  t.gain = VecX::Constant(1, gain);
  t.weight = weight;
  t.priority = Priority::Soft();
  return t;
}

// --- solver.v1 --------------------------------------------------------------

using json = nlohmann::json;

SolverConfig solver_config_from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("byte " + std::to_string(e.byte), e.what());
  }
  if (!doc.is_object()) throw SchemaError("/", "solver config must be an object");
  if (doc.value("schema", std::string("solver.v1")) != "solver.v1") throw SchemaError("/schema", "expected solver.v1");
  SolverConfig c;
  auto num = [&](const json& obj, const std::string& ptr, const char* key, double& out, bool positive) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_number()) throw SchemaError(ptr + "/" + key, "not a number");
    out = v.get<double>();
    if (positive ? !(out > 0.0) : !(out >= 0.0)) {
      throw SchemaError(ptr + "/" + key, positive ? "must be positive" : "must be non-negative");
    }
  };
  num(doc, "", "damping", c.damping, false);
  num(doc, "", "qp_tolerance", c.qp_tolerance, true);
  num(doc, "", "jaw_rate_max", c.jaw_rate_max, true);
  if (doc.contains("max_active_set_iters")) {
    const auto& v = doc.at("max_active_set_iters");
    if (!v.is_number_integer() || v.get<int>() < 1) throw SchemaError("/max_active_set_iters", "must be a positive integer");
    c.max_active_set_iters = v.get<int>();
  }
  if (doc.contains("gains")) {
    const auto& g = doc.at("gains");
    if (!g.is_object()) throw SchemaError("/gains", "must be an object");
    num(g, "/gains", "cartesian", c.gain_cartesian, true);
    num(g, "/gains", "force", c.gain_force, true);
    num(g, "/gains", "manipulability", c.gain_manipulability, true);
    num(g, "/gains", "joint_limit", c.gain_joint_limit, true);
    num(g, "/gains", "hold", c.gain_hold, true);
  }
  if (doc.contains("alphas")) {
    const auto& a = doc.at("alphas");
    if (!a.is_object()) throw SchemaError("/alphas", "must be an object");
    num(a, "/alphas", "primary", c.alpha_primary, false);
    num(a, "/alphas", "manipulability", c.alpha_manipulability, false);
    num(a, "/alphas", "joint_limit", c.alpha_joint_limit, false);
  }
  if (doc.contains("qdot_bounds")) {
    const auto& b = doc.at("qdot_bounds");
    if (b.is_number()) {
      c.qdot_max = VecX::Constant(7, b.get<double>());
    } else if (b.is_array()) {
      c.qdot_max.resize(static_cast<Eigen::Index>(b.size()));
      for (std::size_t i = 0; i < b.size(); ++i) {
        if (!b[i].is_number()) throw SchemaError("/qdot_bounds/" + std::to_string(i), "not a number");
        c.qdot_max[static_cast<Eigen::Index>(i)] = b[i].get<double>();
      }
    } else {
      throw SchemaError("/qdot_bounds", "must be a number or an array");
    }
    if ((c.qdot_max.array() <= 0.0).any()) throw SchemaError("/qdot_bounds", "must be positive");
  }
  return c;
}

SolverConfig load_solver_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError(path, "cannot open solver config");
  std::stringstream ss;
  ss << in.rdbuf();
  return solver_config_from_json_text(ss.str());
}

std::string solver_config_to_json_text(const SolverConfig& c) {
  json doc;
  doc["schema"] = "solver.v1";
  doc["damping"] = c.damping;
  doc["gains"] = {{"cartesian", c.gain_cartesian},
                  {"force", c.gain_force},
                  {"manipulability", c.gain_manipulability},
                  {"joint_limit", c.gain_joint_limit},
                  {"hold", c.gain_hold}};
  doc["alphas"] = {{"primary", c.alpha_primary},
                   {"manipulability", c.alpha_manipulability},
                   {"joint_limit", c.alpha_joint_limit}};
  doc["qdot_bounds"] = std::vector<double>(c.qdot_max.data(), c.qdot_max.data() + c.qdot_max.size());
  doc["jaw_rate_max"] = c.jaw_rate_max;
  doc["qp_tolerance"] = c.qp_tolerance;
  doc["max_active_set_iters"] = c.max_active_set_iters;
  return doc.dump(2);
}

Solution solve_arm_step(const KinematicChain& chain, const SolverConfig& cfg, const VecX& q, const Pose& setpoint,
                        double gain, double error_clamp, double dt) {
  const Pose pose = forward_kinematics(chain, q);
  Pose target = setpoint;
  target.orientation = yaw_free_orientation(pose.orientation, target.orientation);
  VecX e = cartesian_task_error(pose, target);
  const double n = e.head<3>().norm();
  if (n > error_clamp) e.head<3>() *= error_clamp / n;
  std::vector<TaskTerm> terms;
  terms.push_back({"cartesian", analytic_cartesian_jacobian(chain, q), e, VecX::Constant(5, gain), cfg.alpha_primary,
                   Priority::Hard(0)});
  terms.push_back({"manipulability", manipulability_jacobian(q),
                   VecX::Constant(1, kManipulabilityTarget - manipulability_value(q)),
                   VecX::Constant(1, cfg.gain_manipulability), cfg.alpha_manipulability, Priority::Soft()});
  terms.push_back({"joint_limit", joint_limit_jacobian(q, chain), VecX::Constant(1, -joint_limit_value(q, chain)),
                   VecX::Constant(1, cfg.gain_joint_limit), cfg.alpha_joint_limit, Priority::Soft()});
  return solve_cascaded_qp(terms, velocity_bounds(chain, q, cfg.qdot_max, dt), cfg.cascade());
}

}  // namespace isot
