#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "isot/fsm.hpp"
#include "isot/kinematics.hpp"
#include "isot/perception.hpp"
#include "isot/tactile.hpp"
#include "isot/task_stack.hpp"

namespace isot {

struct Rates {
  int control = 1000;  // Hz
  int tracking = 5;
  int detection = 25;
};

struct WorkspaceBox {
  Vec3 min = Vec3(-0.3, -0.7, -0.05);
  Vec3 max = Vec3(1.0, 0.9, 1.0);
  double diagonal() const { return (max - min).norm(); }
  bool contains(const Vec3& p, double margin = 0.0) const;
};

/// Two parallel jaws closing along the tool y axis.
struct GripperConfig {
  double aperture = 0.06;            // m, fully open gap
  double contact_stiffness = 1.0;    // N/mm per jaw
  double pad_noise_mm = 0.002;
  double arrive_tolerance = 0.003;   // m, arm error below which the jaws may close
  double capture_radius = 0.02;      // m, horizontal offset at which an object sits between the jaws
};

struct ControllerConfig {
  double error_clamp = 0.1;          // m, largest position error fed to the Cartesian task
  double settle_position = 0.002;    // m
  double settle_speed = 0.005;       // m/s
};

struct TactileConfig {
  CalibrationModel calibration;
  std::uint64_t calibration_seed = 11;
  int train_samples = 100;
  int test_samples = 20;
  TrainingOptions training;
};

struct ObjectSpec {
  SceneObject object;
  double mass = 0.2;  // kg
};

struct Variation {
  double object_xy = 0.01;   // m, uniform half-width per trial
  double object_yaw = 0.1;   // rad
};

/// Scripted disturbance: the held mass changes `after` seconds into `phase`.
struct FaultSpec {
  std::string type = "load";
  Phase phase = Phase::kManipulate;
  double after = 1.0;
  double mass = 0.5;
};

struct Scenario {
  std::string name;
  std::string task;
  std::string source_dir;  // directory the relative references resolve against
  std::string chain_ref;
  std::string solver_ref;
  KinematicChain chain = default_chain();
  SolverConfig solver;
  int trials = 5;
  std::uint64_t seed = 1;
  double time_limit = 40.0;  // s per trial
  Rates rates;
  WorkspaceBox workspace;
  FsmConfig fsm;
  FrictionParams friction;
  GripperConfig gripper;
  ControllerConfig controller;
  TrackingCamera tracking_camera;
  Vec3 tracking_eye = Vec3(0.35, -0.75, 0.75);
  Vec3 tracking_target = Vec3(0.6, 0.45, 0.05);
  Vec3 hand_camera_offset = Vec3::Zero();  // camera origin in the tool frame
  DetectionParams detection;
  CloudParams cloud;
  TactileConfig tactile;
  LeaderScript leader;
  int filter_window = 5;
  std::vector<ObjectSpec> objects;
  Variation variation;
  std::vector<FaultSpec> faults;
  std::vector<Phase> expected_path;  // empty: any valid path

  double dt() const { return 1.0 / rates.control; }
  Mat4 hand_camera() const;
};

/// Parses and validates a scenario.v1 document. Relative chain and solver
/// references resolve against `base_dir`.
Scenario scenario_from_json_text(const std::string& text, const std::string& base_dir);
Scenario load_scenario(const std::string& path);
/// Full document with every default filled in.
std::string scenario_to_json_text(const Scenario& scenario);

}  // namespace isot
