#include "isot/kinematics.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace isot {

using json = nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;

void check_dim(const KinematicChain& chain, const VecX& q) {
  if (q.size() != chain.dof()) {
    throw InvalidInput("joint vector has " + std::to_string(q.size()) + " entries, chain has " +
                       std::to_string(chain.dof()) + " joints");
  }
  if (!q.allFinite()) throw InvalidInput("joint vector is not finite");
}

}  // namespace

KinematicChain::KinematicChain(std::string name, std::vector<DhRow> dh, VecX q_lower, VecX q_upper,
                               double reach)
    : name_(std::move(name)),
      dh_(std::move(dh)),
      q_lower_(std::move(q_lower)),
      q_upper_(std::move(q_upper)),
      reach_(reach) {
  const auto n = static_cast<Eigen::Index>(dh_.size());
  if (n == 0) throw InvalidInput("chain has no joints");
  if (q_lower_.size() != n || q_upper_.size() != n) {
    throw InvalidInput("joint limit vectors do not match the number of DH rows");
  }
  if (!(q_lower_.array() < q_upper_.array()).all()) {
    throw InvalidInput("lower joint limits must be strictly below upper limits");
  }
  if (!(reach_ > 0.0)) throw InvalidInput("reach must be positive");
}

VecX KinematicChain::home() const {
  if (name_ == "isot-7dof" && dof() == 7) {
    VecX q(7);
    q << 0.0, 0.35, 0.0, -1.75, 0.0, 1.0415926535897932, 0.0;
    return q;
  }
  return midpoint();
}

KinematicChain default_chain() {
  // Spherical shoulder and wrist; link lengths sum to the 0.85 m reach.
  std::vector<DhRow> dh = {
      {0.0, -kPi / 2, 0.20, 0.0}, {0.0, kPi / 2, 0.0, 0.0},  {0.0, kPi / 2, 0.30, 0.0},
      {0.0, -kPi / 2, 0.0, 0.0},  {0.0, -kPi / 2, 0.27, 0.0}, {0.0, kPi / 2, 0.0, 0.0},
      {0.0, 0.0, 0.08, 0.0},
  };
  const double deg = kPi / 180.0;
  VecX upper(7);
  upper << 170, 120, 170, 120, 170, 120, 175;
  upper *= deg;
  VecX lower = -upper;
  return {"isot-7dof", std::move(dh), lower, upper, 0.85};
}

KinematicChain chain_from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("byte " + std::to_string(e.byte), e.what());
  }
  auto require = [&](const char* key) -> const json& {
    if (!doc.contains(key)) throw SchemaError(std::string("/") + key, "missing required field");
    return doc.at(key);
  };
  if (doc.value("schema", std::string("chain.v1")) != "chain.v1") {
    throw SchemaError("/schema", "expected chain.v1");
  }
  std::vector<DhRow> rows;
  const auto& dh = require("dh");
  if (!dh.is_array() || dh.empty()) throw SchemaError("/dh", "must be a non-empty array");
  for (std::size_t i = 0; i < dh.size(); ++i) {
    const auto& r = dh[i];
    const std::string where = "/dh/" + std::to_string(i);
    DhRow row;
    try {
      row.a = r.at("a").get<double>();
      row.alpha = r.at("alpha").get<double>();
      row.d = r.at("d").get<double>();
      row.theta0 = r.value("theta0", 0.0);
    } catch (const json::exception& e) {
      throw SchemaError(where, e.what());
    }
    rows.push_back(row);
  }
  auto read_vec = [&](const char* key) {
    const auto& arr = require(key);
    if (!arr.is_array() || arr.size() != rows.size()) {
      throw SchemaError(std::string("/") + key, "must be an array with one entry per joint");
    }
    VecX v(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i) {
      if (!arr[i].is_number()) throw SchemaError(std::string("/") + key + "/" + std::to_string(i), "not a number");
      v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
    }
    return v;
  };
  VecX lower = read_vec("q_lower");
  VecX upper = read_vec("q_upper");
  const auto& reach = require("reach");
  if (!reach.is_number()) throw SchemaError("/reach", "not a number");
  try {
    return {doc.value("name", std::string("chain")), std::move(rows), lower, upper, reach.get<double>()};
  } catch (const InvalidInput& e) {
    throw SchemaError("/", e.what());
  }
}

KinematicChain load_chain(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError(path, "cannot open chain file");
  std::stringstream ss;
  ss << in.rdbuf();
  return chain_from_json_text(ss.str());
}

std::string chain_to_json_text(const KinematicChain& chain) {
  json doc;
  doc["schema"] = "chain.v1";
  doc["name"] = chain.name();
  doc["dh"] = json::array();
  for (const auto& r : chain.dh()) {
    doc["dh"].push_back({{"a", r.a}, {"alpha", r.alpha}, {"d", r.d}, {"theta0", r.theta0}});
  }
  doc["q_lower"] = std::vector<double>(chain.lower().data(), chain.lower().data() + chain.dof());
  doc["q_upper"] = std::vector<double>(chain.upper().data(), chain.upper().data() + chain.dof());
  doc["reach"] = chain.reach();
  return doc.dump(2);
}

Mat4 Pose::matrix() const {
  Mat4 T = Mat4::Identity();
  T.topLeftCorner<3, 3>() = orientation.toRotationMatrix();
  T.topRightCorner<3, 1>() = position;
  return T;
}

Pose Pose::from_matrix(const Mat4& T) {
  Pose p;
  p.position = T.topRightCorner<3, 1>();
  p.orientation = canonical(Quat(Mat3(T.topLeftCorner<3, 3>())));
  return p;
}

Quat canonical(Quat q) {
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  return q;
}

bool is_unit(const Quat& q, double tol) { return std::abs(q.squaredNorm() - 1.0) <= tol; }

Mat4 dh_transform(const DhRow& row, double q) {
  const double th = q + row.theta0;
  const double ct = std::cos(th), st = std::sin(th);
  const double ca = std::cos(row.alpha), sa = std::sin(row.alpha);
  Mat4 T;
  T << ct, -st * ca, st * sa, row.a * ct,  //
      st, ct * ca, -ct * sa, row.a * st,   //
      0.0, sa, ca, row.d,                  //
      0.0, 0.0, 0.0, 1.0;
  return T;
}

std::vector<Mat4> link_frames(const KinematicChain& chain, const VecX& q) {
  check_dim(chain, q);
  std::vector<Mat4> frames;
  frames.reserve(chain.dh().size());
  Mat4 T = Mat4::Identity();
  for (int i = 0; i < chain.dof(); ++i) {
    T = T * dh_transform(chain.dh()[static_cast<std::size_t>(i)], q[i]);
    frames.push_back(T);
  }
  return frames;
}

Pose forward_kinematics(const KinematicChain& chain, const VecX& q) {
  return Pose::from_matrix(link_frames(chain, q).back());
}

MatX geometric_jacobian(const KinematicChain& chain, const VecX& q) {
  const auto frames = link_frames(chain, q);
  const Vec3 p_e = frames.back().topRightCorner<3, 1>();
  MatX J(6, chain.dof());
  Vec3 z = Vec3::UnitZ();
  Vec3 p = Vec3::Zero();
  for (int i = 0; i < chain.dof(); ++i) {
    // joint i rotates about z of frame i-1
    J.block<3, 1>(0, i) = z.cross(p_e - p);
    J.block<3, 1>(3, i) = z;
    const Mat4& T = frames[static_cast<std::size_t>(i)];
    z = T.block<3, 1>(0, 2);
    p = T.topRightCorner<3, 1>();
  }
  return J;
}

Eigen::Matrix<double, 2, 3> orientation_selector() {
  Eigen::Matrix<double, 2, 3> G;
  G << 1, 0, 0, 0, 1, 0;
  return G;
}

MatX analytic_cartesian_jacobian(const KinematicChain& chain, const VecX& q) {
  const MatX J = geometric_jacobian(chain, q);
  MatX J0(5, chain.dof());
  J0.topRows<3>() = J.topRows<3>();
  J0.bottomRows<2>() = orientation_selector() * J.bottomRows<3>();
  return J0;
}

Mat3 skew(const Vec3& v) {
  Mat3 S;
  S << 0.0, -v.z(), v.y(),  //
      v.z(), 0.0, -v.x(),   //
      -v.y(), v.x(), 0.0;
  return S;
}

Eigen::Matrix<double, 5, 1> cartesian_task_error(const Pose& current, const Pose& desired) {
  if (!is_unit(current.orientation) || !is_unit(desired.orientation)) {
    throw InvalidInput("cartesian_task_error requires unit quaternions");
  }
  const Quat qc = canonical(current.orientation);
  Quat qd = canonical(desired.orientation);
  // same hemisphere as the current orientation, so the error takes the short
  // way round even when w is near zero (tool pointing down)
  if (qc.dot(qd) < 0.0) qd.coeffs() = -qd.coeffs();
  const double psi = qc.w(), psi_d = qd.w();
  const Vec3 zeta = qc.vec(), zeta_d = qd.vec();
  const Vec3 e_o = psi * zeta_d - psi_d * zeta - skew(zeta_d) * zeta;
  Eigen::Matrix<double, 5, 1> e;
  e.head<3>() = desired.position - current.position;
  e.tail<2>() = orientation_selector() * e_o;
  return e;
}

Quat tool_down_orientation() {
  // rotation of pi about base y: tool z -> -z, tool x -> -x (matches home yaw)
  return canonical(Quat(0.0, 0.0, 1.0, 0.0));
}

Quat yaw_free_orientation(const Quat& current, const Quat& desired) {
  const Vec3 zc = current * Vec3::UnitZ();
  const Vec3 zd = desired * Vec3::UnitZ();
  // antiparallel axes have no unique shortest rotation; keep the given target
  if (zc.dot(zd) < -1.0 + 1e-9) return canonical(desired);
  return canonical((Quat::FromTwoVectors(zc, zd) * current).normalized());
}

}  // namespace isot
