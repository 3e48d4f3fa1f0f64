#include "isot/fsm.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "isot/errors.hpp"

namespace isot {

const char* to_string(Phase p) {
  switch (p) {
    case Phase::kHoming: return "Homing";
    case Phase::kPreGrasp: return "PreGrasp";
    case Phase::kGrasp: return "Grasp";
    case Phase::kManipulate: return "Manipulate";
    case Phase::kRelease: return "Release";
  }
  return "?";
}

Phase phase_from_string(const std::string& s) {
  for (Phase p : {Phase::kHoming, Phase::kPreGrasp, Phase::kGrasp, Phase::kManipulate, Phase::kRelease}) {
    if (s == to_string(p)) return p;
  }
  throw InvalidInput("unknown phase '" + s + "'");
}

bool is_allowed_transition(Phase from, Phase to) {
  using P = Phase;
  switch (from) {
    case P::kHoming: return to == P::kPreGrasp;
    case P::kPreGrasp: return to == P::kHoming || to == P::kGrasp;
    case P::kGrasp: return to == P::kPreGrasp || to == P::kManipulate;
    case P::kManipulate: return to == P::kGrasp || to == P::kRelease;
    case P::kRelease: return to == P::kHoming;
  }
  return false;
}

namespace {

double scaled_height(double z, double k, HeightMode mode) {
  return mode == HeightMode::kAbsolute ? k * std::abs(z) : z + k * std::abs(z);
}

}  // namespace

Pose pregrasp_setpoint(const Vec3& wrist, HeightMode mode) {
  if (!wrist.allFinite()) throw InvalidInput("wrist position is not finite");
  if (!(wrist[2] > 0.0)) throw InvalidInput("wrist is at or below the workspace floor");
  Pose p;
  p.position = Vec3(wrist[0], wrist[1], scaled_height(wrist[2], 4.0, mode));
  p.orientation = tool_down_orientation();
  return p;
}

Pose lift_setpoint(const Vec3& wrist, const Pose& grasp, HeightMode mode) {
  Pose p = grasp;
  p.position[2] = scaled_height(wrist[2], 2.0, mode);
  return p;
}

bool detect_open_palm(const std::vector<bool>& frames, int debounce) {
  OpenPalmDebouncer d(debounce);
  bool out = false;
  for (bool f : frames) out = d.update(f);
  return out;
}

FsmContext initial_context(const Pose& robot_home, const FsmConfig& config, double t0) {
  FsmContext c;
  c.phase = Phase::kHoming;
  c.phase_entry = t0;
  c.home = robot_home;
  c.stack.arm = StackConfig::Arm::kCartesian;
  c.stack.setpoint = robot_home;
  c.palm = OpenPalmDebouncer(config.open_palm_frames);
  c.grip_target = config.grip_target;
  return c;
}

bool posture_active(const FsmContext& ctx, const ArmTrack& arm, const FsmConfig& config) {
  if (!ctx.leader_home || arm.lost) return false;
  const Vec3& w = arm.wrist;
  return (w - *ctx.leader_home).norm() > config.posture_displacement && w[2] >= config.posture_min_height &&
         w.norm() <= config.posture_max_reach && ctx.wrist_speed <= config.posture_max_speed;
}

bool leader_at_home(const FsmContext& ctx, const ArmTrack& arm, const FsmConfig& config) {
  return ctx.leader_home && !arm.lost && (arm.wrist - *ctx.leader_home).norm() <= config.home_tolerance;
}

FsmStep step(const FsmContext& ctx, const Observation& obs, const FsmConfig& config) {
  FsmStep out{ctx, {}, {}};
  FsmContext& c = out.ctx;
  const double t = obs.t;

  if (obs.tracking_frame && obs.arm.fresh && !obs.arm.lost) {
    if (c.last_wrist && t > *c.last_wrist_time) c.wrist_speed = (obs.arm.wrist - *c.last_wrist).norm() / (t - *c.last_wrist_time);
    c.last_wrist = obs.arm.wrist;
    c.last_wrist_time = t;
    if (!c.leader_home) c.leader_home = obs.arm.wrist;
  }
  const bool tracking_ok = c.last_wrist && !obs.arm.lost && obs.arm.staleness <= config.staleness_horizon;
  bool palm_edge = false;
  if (obs.tracking_frame) {
    const bool was = c.palm_active;
    c.palm_active = c.palm.update(obs.open_palm_flag && obs.arm.fresh);
    palm_edge = c.palm_active && !was;
  }
  if (obs.settled) {
    if (!c.settled_since) c.settled_since = t;
  } else {
    c.settled_since.reset();
  }
  const bool tactile_fresh = obs.tactile_time && t - *obs.tactile_time <= config.staleness_horizon;

  auto enter = [&](Phase to, const std::string& trigger) {
    TransitionRecord rec;
    rec.t = t;
    rec.from = c.phase;
    rec.to = to;
    rec.trigger = trigger;
    switch (to) {
      case Phase::kHoming:
        c.stack = {StackConfig::Arm::kCartesian, false, c.home, 0.0};
        c.armed = false;
        break;
      case Phase::kPreGrasp:
        c.wrist = *c.last_wrist;
        c.target.reset();
        c.grip_target = config.grip_target;
        c.stack = {StackConfig::Arm::kCartesian, false, pregrasp_setpoint(c.wrist, config.height_mode), 0.0};
        break;
      case Phase::kGrasp:
        if (c.phase == Phase::kManipulate) {
          // recovery: squeeze harder where the object is held now
          c.grip_target *= config.regrip_factor;
        } else {
          c.grasp_pose.position = c.target->base_pose.position;
          c.grasp_pose.orientation = tool_down_orientation();
          c.stack.setpoint = c.grasp_pose;
        }
        c.stack.arm = StackConfig::Arm::kKinetoStatic;
        c.stack.gripper_force = true;
        c.stack.grip_target = c.grip_target;
        break;
      case Phase::kManipulate:
        c.stack = {StackConfig::Arm::kCartesian, true, lift_setpoint(c.wrist, c.grasp_pose, config.height_mode),
                   c.grip_target};
        break;
      case Phase::kRelease:
        c.stack.arm = StackConfig::Arm::kCartesian;
        c.stack.gripper_force = false;
        c.stack.grip_target = 0.0;
        break;
    }
    rec.wrist_z = c.wrist[2];
    rec.setpoint_z = c.stack.setpoint.position[2];
    c.phase = to;
    c.phase_entry = t;
    c.settled_since.reset();
    c.palm.reset();
    c.palm_active = false;
    out.transitions.push_back(rec);
  };
  auto ignore = [&](const std::string& event) {
    out.ignored.push_back(event + " ignored in " + to_string(c.phase));
  };

  switch (c.phase) {
    case Phase::kHoming: {
      const bool active = tracking_ok && posture_active(c, obs.arm, config);
      if (tracking_ok && !active && obs.tracking_frame) c.armed = true;
      if (c.armed && active) {
        enter(Phase::kPreGrasp, "posture");
      } else if (palm_edge) {
        ignore("open_palm");
      }
      break;
    }
    case Phase::kPreGrasp: {
      const bool fresh = obs.detection_time && t - *obs.detection_time <= config.staleness_horizon &&
                         !obs.detections.empty();
      if (obs.settled && fresh) {
        // candidate nearest to the wrist's vertical axis
        const ObjectDetection* best = nullptr;
        double best_d = 0.0;
        for (const auto& d : obs.detections) {
          const double dist = (d.base_pose.position.head<2>() - c.wrist.head<2>()).norm();
          if (!best || dist < best_d) {
            best = &d;
            best_d = dist;
          }
        }
        c.target = *best;
        enter(Phase::kGrasp, "detection");
      } else if (c.settled_since && t - *c.settled_since >= config.withdraw_timeout) {
        enter(Phase::kHoming, "withdraw");
      } else if (palm_edge) {
        ignore("open_palm");
      }
      break;
    }
    case Phase::kGrasp:
      if (tactile_fresh && obs.contact_force >= config.contact_force_threshold && obs.slip == SlipState::kStable) {
        enter(Phase::kManipulate, "grasp_stable");
      } else if (t - c.phase_entry >= config.grasp_timeout) {
        enter(Phase::kPreGrasp, "grasp_timeout");
      } else if (palm_edge) {
        ignore("open_palm");
      }
      break;
    case Phase::kManipulate:
      if (tactile_fresh && obs.slip == SlipState::kSlip) {
        enter(Phase::kGrasp, "slip");
      } else if (tactile_fresh && obs.contact_force < config.contact_force_threshold) {
        enter(Phase::kGrasp, "contact_lost");
      } else if (tracking_ok && c.palm_active) {
        enter(Phase::kRelease, "open_palm");
      }
      break;
    case Phase::kRelease:
      if (tracking_ok && obs.gripper_open && leader_at_home(c, obs.arm, config)) {
        enter(Phase::kHoming, "leader_home");
      }
      break;
  }
  return out;
}

// --- transition log -----------------------------------------------------------------

namespace {

std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

}  // namespace

std::string transitions_to_csv(const std::vector<TransitionRecord>& records) {
  std::string s = "t,from,to,trigger,wrist_z,setpoint_z\n";
  for (const auto& r : records) {
    s += num(r.t) + "," + to_string(r.from) + "," + to_string(r.to) + "," + r.trigger + "," + num(r.wrist_z) + "," +
         num(r.setpoint_z) + "\n";
  }
  return s;
}

std::vector<TransitionRecord> transitions_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 1;
  if (!std::getline(in, line) || line != "t,from,to,trigger,wrist_z,setpoint_z") {
    throw SchemaError("line 1", "unexpected transition log header");
  }
  std::vector<TransitionRecord> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 6) throw SchemaError("line " + std::to_string(lineno), "expected 6 columns");
    try {
      TransitionRecord r;
      r.t = std::stod(f[0]);
      r.from = phase_from_string(f[1]);
      r.to = phase_from_string(f[2]);
      r.trigger = f[3];
      r.wrist_z = std::stod(f[4]);
      r.setpoint_z = std::stod(f[5]);
      out.push_back(r);
    } catch (const std::exception& e) {
      throw SchemaError("line " + std::to_string(lineno), e.what());
    }
  }
  return out;
}

std::string validate_phase_path(const std::vector<TransitionRecord>& records) {
  Phase at = Phase::kHoming;
  double last_t = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const std::string where = "transition " + std::to_string(i) + ": ";
    if (r.from != at) return where + "starts in " + to_string(r.from) + " but the machine is in " + to_string(at);
    if (!is_allowed_transition(r.from, r.to)) {
      return where + to_string(r.from) + " -> " + to_string(r.to) + " is not an edge";
    }
    if (r.t < last_t) return where + "timestamp goes backwards";
    last_t = r.t;
    at = r.to;
  }
  if (at != Phase::kHoming) return std::string("run ends in ") + to_string(at);
  return {};
}

}  // namespace isot
