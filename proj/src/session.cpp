#include "isot/session.hpp"

#include <cmath>

namespace isot {

using nlohmann::json;

namespace {

struct Reject {
  std::string code;
  std::string reason;
};

json error_frame(const std::string& code, const std::string& reason) {
  return {{"type", "error"}, {"code", code}, {"reason", reason}};
}

template <int N>
Eigen::Matrix<double, N, 1> vec_field(const json& frame, const char* key) {
  if (!frame.contains(key) || !frame[key].is_array() || frame[key].size() != N) {
    throw Reject{"invalid_field", std::string("'") + key + "' must be an array of " + std::to_string(N) + " numbers"};
  }
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) {
    const json& x = frame[key][static_cast<std::size_t>(i)];
    if (!x.is_number() || !std::isfinite(x.get<double>())) {
      throw Reject{"invalid_field", std::string("'") + key + "' must hold finite numbers"};
    }
    v[i] = x.get<double>();
  }
  return v;
}

std::string string_field(const json& frame, const char* key) {
  if (!frame.contains(key) || !frame[key].is_string()) {
    throw Reject{"invalid_field", std::string("'") + key + "' must be a string"};
  }
  return frame[key].get<std::string>();
}

json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json pose_json(const Pose& p) {
  return {p.position[0], p.position[1], p.position[2], p.orientation.w(),
          p.orientation.x(), p.orientation.y(), p.orientation.z()};
}

}  // namespace

Session::Session(const Scenario& scenario, const ForceMapper& mapper, std::uint64_t seed)
    : sc_(scenario), mapper_(mapper), seed_(seed) {
  reset();
}

void Session::reset() {
  sim_ = std::make_unique<Simulation>(sc_, mapper_, seed_, 1, false);
  wrist_ = sc_.leader.sample(0.0).wrist;
  palm_until_ = -1.0;
  pending_ = 0.0;
  sim_->set_leader(wrist_, false);
}

json Session::handle(const std::string& text) {
  json frame;
  try {
    frame = json::parse(text);
  } catch (const json::exception& e) {
    return error_frame("malformed", std::string("not JSON: ") + e.what());
  }
  if (!frame.is_object() || !frame.contains("type") || !frame["type"].is_string()) {
    return error_frame("malformed", "frame must be an object with a string 'type'");
  }
  try {
    return command(frame);
  } catch (const Reject& r) {
    return error_frame(r.code, r.reason);
  } catch (const std::exception& e) {
    return error_frame("invalid_field", e.what());
  }
}

json Session::command(const json& frame) {
  const std::string type = frame["type"].get<std::string>();
  const Phase phase = sim_->phase();
  const std::string in = std::string(" (phase is ") + to_string(phase) + ")";

  if (type == "wrist_pose") {
    const Vec3 xyz = vec_field<3>(frame, "xyz");
    if (!sc_.workspace.contains(xyz) || xyz[2] <= 0.0) {
      throw Reject{"out_of_workspace", "wrist must lie inside the workspace and above the table"};
    }
    wrist_ = xyz;
    sim_->set_leader(wrist_, sim_->time() < palm_until_);
  } else if (type == "gesture") {
    const std::string name = string_field(frame, "name");
    if (name == "open_palm") {
      if (phase != Phase::kManipulate) throw Reject{"phase", "open_palm releases a held object" + in};
      palm_until_ = sim_->time() + kPalmHold;
      sim_->set_leader(wrist_, true);
    } else if (name == "home") {
      if (phase == Phase::kGrasp || phase == Phase::kManipulate) {
        throw Reject{"phase", "release the object before going home" + in};
      }
      if (const auto home = sim_->leader_home()) wrist_ = *home;
      sim_->set_leader(wrist_, false);
    } else {
      throw Reject{"invalid_field", "unknown gesture '" + name + "'"};
    }
  } else if (type == "place_object") {
    if (phase != Phase::kHoming) throw Reject{"phase", "objects can only be placed while homing" + in};
    ObjectSpec o;
    if (frame.contains("shape")) o.object.shape = string_field(frame, "shape");
    o.object.dims = vec_field<3>(frame, "dims");
    if ((o.object.dims.array() <= 0.0).any()) throw Reject{"invalid_field", "'dims' must be positive"};
    if (!frame.contains("pose") || !frame["pose"].is_array() ||
        (frame["pose"].size() != 3 && frame["pose"].size() != 7)) {
      throw Reject{"invalid_field", "'pose' must be [x, y, z] or [x, y, z, qw, qx, qy, qz]"};
    }
    if (frame["pose"].size() == 3) {
      o.object.position = vec_field<3>(frame, "pose");
    } else {
      const auto p = vec_field<7>(frame, "pose");
      o.object.position = p.head<3>();
      const Quat q(p[3], p[4], p[5], p[6]);
      if (std::abs(q.norm() - 1.0) > 1e-6) throw Reject{"invalid_field", "pose quaternion must be unit"};
      const Vec3 x = q * Vec3::UnitX();
      o.object.yaw = std::atan2(x[1], x[0]);
    }
    if (!sc_.workspace.contains(o.object.position)) {
      throw Reject{"out_of_workspace", "object must lie inside the workspace"};
    }
    if (frame.contains("mass")) {
      if (!frame["mass"].is_number() || !(frame["mass"].get<double>() > 0.0)) {
        throw Reject{"invalid_field", "'mass' must be positive"};
      }
      o.mass = frame["mass"].get<double>();
    }
    sim_->place_object(o);
  } else if (type == "reset") {
    reset();
  } else {
    throw Reject{"unknown_type", "unknown frame type '" + type + "'"};
  }
  return {{"type", "ack"}, {"command", type}};
}

void Session::advance(double seconds) {
  pending_ += seconds;
  const double dt = sc_.dt();
  while (pending_ >= dt - 1e-12) {
    pending_ -= dt;
    if (sim_->aborted()) continue;
    if (palm_until_ >= 0.0 && sim_->time() >= palm_until_) {
      palm_until_ = -1.0;
      sim_->set_leader(wrist_, false);
    }
    sim_->tick();
  }
}

json Session::state_frame() const {
  const SimState s = sim_->state();
  json detections = json::array();
  for (const auto& d : s.detections) {
    detections.push_back({{"label", d.label}, {"pose", pose_json(d.base_pose)}, {"dims", vec_json(d.dims)},
                          {"points", d.point_count}});
  }
  json objects = json::array();
  for (const auto& o : s.objects) {
    objects.push_back({{"shape", o.spec.object.shape},
                       {"dims", vec_json(o.spec.object.dims)},
                       {"position", vec_json(o.spec.object.position)},
                       {"yaw", o.spec.object.yaw},
                       {"attached", o.attached}});
  }
  json frame = {{"type", "state"},
                {"t", s.t},
                {"phase", to_string(s.phase)},
                {"q", vec_json(s.q)},
                {"ee_pose", pose_json(s.ee)},
                {"wrist", vec_json(s.wrist)},
                {"tactile", {{"D", vec_json(s.deformation.vec())}, {"f", vec_json(s.force)}, {"slip", s.slip}}},
                {"detections", detections},
                {"objects", objects},
                {"gripper", {s.jaw_left, s.jaw_right}}};
  if (sim_->aborted()) frame["aborted"] = sim_->diagnostic();
  return frame;
}

}  // namespace isot
