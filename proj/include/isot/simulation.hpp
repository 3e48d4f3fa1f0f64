#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "isot/metrics.hpp"
#include "isot/scenario.hpp"

namespace isot {

/// Deterministic 64-bit mix of a seed and stream identifiers.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

/// Trains the deformation-to-force network from the scenario's synthetic
/// calibration set.
ForceMapper train_scenario_mapper(const Scenario& scenario, TrainingReport* report = nullptr);

/// Sensor frames of the two jaws in the tool frame. Sensor z is the inward
/// jaw normal; the jaws close along tool y.
Mat3 jaw_sensor_rotation(SensorId sensor);

struct ObjectState {
  ObjectSpec spec;
  bool attached = false;
  bool lifted = false;
  Vec3 offset = Vec3::Zero();  // object centre minus end effector while attached
  double attach_z = 0.0;
};

/// Snapshot of the simulated world after a tick.
struct SimState {
  double t = 0.0;
  Phase phase = Phase::kHoming;
  VecX q;
  Pose ee;
  Vec3 wrist = Vec3::Zero();
  Vec3 force = Vec3::Zero();  // base frame, left jaw
  DeformationVector deformation;
  bool slip = false;
  double jaw_left = 0.0;
  double jaw_right = 0.0;
  std::vector<ObjectDetection> detections;
  std::vector<ObjectState> objects;
};

/// One trial. Batch runs follow the scenario's leader script; interactive
/// sessions overwrite the script through set_leader.
class Simulation {
 public:
  Simulation(const Scenario& scenario, const ForceMapper& mapper, std::uint64_t seed, int trial, bool record = true);

  void tick();
  /// Batch end condition: back in Homing and at rest after the script, the
  /// time limit, or an aborted trial.
  bool finished() const;

  double time() const;
  Phase phase() const { return ctx_.phase; }
  bool aborted() const { return aborted_; }
  const std::string& diagnostic() const { return diagnostic_; }
  SimState state() const;
  const FsmContext& context() const { return ctx_; }

  // interactive inputs
  void set_leader(const Vec3& wrist, bool open_palm, bool visible = true);
  std::optional<Vec3> leader_home() const { return ctx_.leader_home; }
  void place_object(const ObjectSpec& object);

  const TrialLog& log() const { return log_; }
  TrialLog take_log() { return std::move(log_); }

  int control_ticks() const { return static_cast<int>(tick_); }
  int tracking_frames() const { return tracking_frames_; }
  int detection_frames() const { return detection_frames_; }

 private:
  struct Contact {
    double penetration_mm = 0.0;
    Eigen::Vector2d shear_left = Eigen::Vector2d::Zero();
    Eigen::Vector2d shear_right = Eigen::Vector2d::Zero();
    int object = -1;
  };
  Contact contact(const Pose& ee) const;
  void abort(const std::string& why, std::vector<std::string>& events);

  const Scenario& sc_;
  ForceMapper mapper_;
  std::uint64_t seed_;
  int trial_;
  bool record_;

  LeaderScript script_;
  ArmFilter filter_;
  ArmTrack track_;
  double track_time_ = 0.0;
  FsmContext ctx_;
  VecX q_;
  Vec3 ee_prev_ = Vec3::Zero();
  double jaw_left_ = 0.0;
  double jaw_right_ = 0.0;
  std::vector<ObjectState> objects_;
  std::vector<ObjectDetection> detections_;
  std::optional<double> detection_time_;
  std::vector<bool> fault_done_;
  std::int64_t tick_ = 0;
  int tracking_frames_ = 0;
  int detection_frames_ = 0;
  bool settled_ = false;
  bool aborted_ = false;
  std::string diagnostic_;

  // evidence edges for the event column
  bool ev_posture_ = false;
  bool ev_stable_ = false;
  bool ev_slip_ = false;
  bool ev_contact_ = false;
  bool ev_home_ = false;
  bool ev_palm_ = false;
  OpenPalmDebouncer palm_evidence_;

  SimState last_;
  TrialLog log_;
};

struct TrialResult {
  TrialLog log;
  bool completed = false;  // returned to Homing without abort or time-out
  std::string diagnostic;
  int control_ticks = 0;
  int tracking_frames = 0;
  int detection_frames = 0;
};

struct SimulationRun {
  std::uint64_t seed = 0;
  TrainingReport training;
  std::vector<TrialResult> trials;
  double wall_seconds = 0.0;
};

TrialResult run_trial(const Scenario& scenario, const ForceMapper& mapper, std::uint64_t seed, int trial);
SimulationRun run_simulation(const Scenario& scenario, std::uint64_t seed, int trials);

/// Per-trial CSVs plus header.json; returns the written file names.
std::vector<std::string> write_run(const SimulationRun& run, const Scenario& scenario, const std::string& dir);

/// Log validator: phase path, stack ordering, setpoint heights, bounds and
/// timestamps. Returns the problems found (empty when valid).
std::vector<std::string> validate_trial(const TrialLog& log, const Scenario& scenario);

/// Phase sequence visited by a trial, starting with Homing.
std::vector<Phase> phase_path(const TrialLog& log);

MetricsReport run_report(const SimulationRun& run, const Scenario& scenario);

}  // namespace isot
