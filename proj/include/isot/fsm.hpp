#pragma once

#include <optional>
#include <string>
#include <vector>

#include "isot/kinematics.hpp"
#include "isot/perception.hpp"
#include "isot/tactile.hpp"

namespace isot {

enum class Phase { kHoming, kPreGrasp, kGrasp, kManipulate, kRelease };

const char* to_string(Phase p);
Phase phase_from_string(const std::string& s);

/// True for the edges of the switching graph.
bool is_allowed_transition(Phase from, Phase to);

enum class HeightMode {
  kAbsolute,  // z = k * |Z_w|
  kOffset,    // z = Z_w + k * |Z_w|
};

/// (X_w, Y_w, 4|Z_w|), tool down. Throws InvalidInput when Z_w <= 0.
Pose pregrasp_setpoint(const Vec3& wrist, HeightMode mode = HeightMode::kAbsolute);
/// (grasp x, grasp y, 2|Z_w|) with the grasp orientation.
Pose lift_setpoint(const Vec3& wrist, const Pose& grasp, HeightMode mode = HeightMode::kAbsolute);

/// Open-palm flag debounced over consecutive tracking frames.
class OpenPalmDebouncer {
 public:
  explicit OpenPalmDebouncer(int frames = 2) : frames_(frames) {}
  bool update(bool flag) {
    count_ = flag ? count_ + 1 : 0;
    return count_ >= frames_;
  }
  void reset() { count_ = 0; }

 private:
  int frames_;
  int count_ = 0;
};

/// Debounced verdict after feeding a sequence of per-frame flags.
bool detect_open_palm(const std::vector<bool>& frames, int debounce = 2);

struct FsmConfig {
  double withdraw_timeout = 2.0;   // s settled at the hover pose without a detection
  double grasp_timeout = 3.0;      // s in Grasp without a stable contact
  double staleness_horizon = 0.6;  // s
  double contact_force_threshold = 2.0;  // N
  double grip_target = 5.0;        // N
  double regrip_factor = 1.5;      // grip target multiplier after a slip
  HeightMode height_mode = HeightMode::kAbsolute;
  // leader posture
  double posture_displacement = 0.15;  // m from the leader home wrist
  double posture_min_height = 0.02;    // m
  double posture_max_reach = 0.85;     // m
  double posture_max_speed = 0.05;     // m/s between tracking frames
  double home_tolerance = 0.08;        // m
  int open_palm_frames = 2;
};

/// What the stacks should be doing. The arm tracks `setpoint` either with a
/// Cartesian primary task or, while grasping, a kineto-static approach; the
/// gripper runs the force task towards `grip_target` or opens.
struct StackConfig {
  enum class Arm { kCartesian, kKinetoStatic };
  Arm arm = Arm::kCartesian;
  bool gripper_force = false;
  Pose setpoint;
  double grip_target = 0.0;

  /// "force" when the force task is primary, "cartesian" otherwise.
  std::string primary_label() const { return gripper_force ? "force" : "cartesian"; }
};

/// Per-tick inputs, all on the simulation clock.
struct Observation {
  double t = 0.0;
  bool tracking_frame = false;  // a new tracking frame arrived at t
  ArmTrack arm;                 // latest filtered active arm
  bool open_palm_flag = false;  // raw gesture flag of that frame
  std::vector<ObjectDetection> detections;
  std::optional<double> detection_time;  // stamp of `detections`
  bool settled = false;                  // end effector at rest on its setpoint
  double contact_force = 0.0;            // N
  std::optional<SlipState> slip;         // verdict while in contact
  std::optional<double> tactile_time;
  bool gripper_open = true;
};

struct TransitionRecord {
  double t = 0.0;
  Phase from = Phase::kHoming;
  Phase to = Phase::kHoming;
  std::string trigger;
  double wrist_z = 0.0;
  double setpoint_z = 0.0;
};

struct FsmContext {
  Phase phase = Phase::kHoming;
  double phase_entry = 0.0;
  Pose home;                    // robot home pose
  std::optional<Vec3> leader_home;
  Vec3 wrist = Vec3::Zero();    // P_w captured on PreGrasp entry
  std::optional<ObjectDetection> target;
  Pose grasp_pose;
  StackConfig stack;
  double grip_target = 0.0;
  bool armed = false;           // posture seen inactive since entering Homing
  std::optional<double> settled_since;
  std::optional<Vec3> last_wrist;
  std::optional<double> last_wrist_time;
  double wrist_speed = 0.0;
  OpenPalmDebouncer palm{2};
  bool palm_active = false;
};

FsmContext initial_context(const Pose& robot_home, const FsmConfig& config, double t0 = 0.0);

struct FsmStep {
  FsmContext ctx;
  std::vector<TransitionRecord> transitions;
  std::vector<std::string> ignored;  // events with no edge in the current phase
};

FsmStep step(const FsmContext& ctx, const Observation& obs, const FsmConfig& config);

/// Leader posture predicates evaluated on a context after `step`.
bool posture_active(const FsmContext& ctx, const ArmTrack& arm, const FsmConfig& config);
bool leader_at_home(const FsmContext& ctx, const ArmTrack& arm, const FsmConfig& config);

// ---------------------------------------------------------------------------
// Transition log (CSV: t,from,to,trigger,wrist_z,setpoint_z)

std::string transitions_to_csv(const std::vector<TransitionRecord>& records);
std::vector<TransitionRecord> transitions_from_csv(const std::string& text);

/// Empty when the sequence is a path of the switching graph that starts and
/// ends in Homing, otherwise a description of the first violation.
std::string validate_phase_path(const std::vector<TransitionRecord>& records);

}  // namespace isot
