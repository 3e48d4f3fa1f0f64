#include <doctest.h>

#include "isot/fsm.hpp"

using namespace isot;

namespace {

struct Driver {
  FsmConfig cfg;
  FsmContext ctx;
  std::vector<TransitionRecord> log;
  std::vector<std::string> ignored;
  double t = 0.0;

  Driver() { ctx = initial_context(Pose{}, cfg); }

  Observation obs(const Vec3& wrist) const {
    Observation o;
    o.t = t;
    o.tracking_frame = true;
    o.arm.wrist = wrist;
    o.arm.fresh = true;
    return o;
  }
  void run(Observation o) {
    o.t = t;
    auto s = step(ctx, o, cfg);
    ctx = s.ctx;
    log.insert(log.end(), s.transitions.begin(), s.transitions.end());
    ignored.insert(ignored.end(), s.ignored.begin(), s.ignored.end());
    t += 0.2;
  }
};

const Vec3 kHome(0.55, 0.4, 0.1);
const Vec3 kPoint(0.45, 0.0, 0.06);

ObjectDetection detection_at(const Vec3& p) {
  ObjectDetection d;
  d.base_pose.position = p;
  d.point_count = 50;
  return d;
}

}  // namespace

TEST_CASE("setpoints") {
  const Pose pre = pregrasp_setpoint({0.4, 0.0, 0.2});
  CHECK(pre.position[2] == doctest::Approx(0.8));
  CHECK(pre.position[0] == 0.4);
  CHECK(pre.position[1] == 0.0);
  CHECK(pregrasp_setpoint({0.4, 0.1, 0.4}).position[2] == 2.0 * pre.position[2]);
  CHECK_THROWS_AS(pregrasp_setpoint({0.4, 0.0, -0.01}), InvalidInput);
  CHECK_THROWS_AS(pregrasp_setpoint({0.4, 0.0, 0.0}), InvalidInput);
  Pose grasp;
  grasp.position = Vec3(0.41, -0.02, 0.01);
  const Pose lift = lift_setpoint({0.4, 0.0, 0.2}, grasp);
  CHECK(lift.position[2] == doctest::Approx(0.4));
  CHECK(lift.position.head<2>() == grasp.position.head<2>());
  CHECK(lift.position[2] < pre.position[2]);
  CHECK(pregrasp_setpoint({0.4, 0.0, 0.05}, HeightMode::kOffset).position[2] == doctest::Approx(0.25));
}

TEST_CASE("open palm debounce") {
  CHECK_FALSE(detect_open_palm({false, true, false, false}));
  CHECK(detect_open_palm({false, true, true}));
  CHECK_FALSE(detect_open_palm({true, false, true}));
  CHECK_FALSE(detect_open_palm(std::vector<bool>(50, false)));
}

TEST_CASE("transition graph") {
  CHECK(is_allowed_transition(Phase::kHoming, Phase::kPreGrasp));
  CHECK_FALSE(is_allowed_transition(Phase::kHoming, Phase::kGrasp));
  CHECK(is_allowed_transition(Phase::kManipulate, Phase::kGrasp));
  CHECK_FALSE(is_allowed_transition(Phase::kRelease, Phase::kManipulate));
  std::vector<TransitionRecord> path{{0, Phase::kHoming, Phase::kPreGrasp, "posture", 0, 0},
                                     {1, Phase::kPreGrasp, Phase::kHoming, "withdraw", 0, 0}};
  CHECK(validate_phase_path(path).empty());
  path.pop_back();
  CHECK_FALSE(validate_phase_path(path).empty());
  path.push_back({2, Phase::kPreGrasp, Phase::kRelease, "x", 0, 0});
  CHECK_FALSE(validate_phase_path(path).empty());
  const auto back = transitions_from_csv(transitions_to_csv(path));
  REQUIRE(back.size() == 2);
  CHECK(back[1].to == Phase::kRelease);
  CHECK_THROWS_AS(transitions_from_csv("bad\n"), SchemaError);
}

TEST_CASE("nominal cycle") {
  Driver d;
  for (int i = 0; i < 3; ++i) d.run(d.obs(kHome));
  CHECK(d.ctx.phase == Phase::kHoming);
  CHECK(d.ctx.armed);
  // reaching out: posture only counts once the wrist is still
  d.run(d.obs(0.5 * (kHome + kPoint)));
  d.run(d.obs(kPoint));
  CHECK(d.ctx.phase == Phase::kHoming);
  d.run(d.obs(kPoint));
  REQUIRE(d.ctx.phase == Phase::kPreGrasp);
  CHECK(d.log.back().setpoint_z == 4.0 * kPoint[2]);
  CHECK(d.ctx.stack.primary_label() == "cartesian");

  // detection only accepted once settled at the hover pose
  Observation o = d.obs(kPoint);
  o.detections = {detection_at({0.46, 0.01, 0.015})};
  o.detection_time = d.t;
  d.run(o);
  CHECK(d.ctx.phase == Phase::kPreGrasp);
  o.settled = true;
  d.run(o);
  REQUIRE(d.ctx.phase == Phase::kGrasp);
  CHECK(d.ctx.stack.setpoint.position == Vec3(0.46, 0.01, 0.015));
  CHECK(d.ctx.stack.primary_label() == "force");

  Observation g = d.obs(kPoint);
  g.tactile_time = d.t;
  g.contact_force = 1.0;
  g.slip = SlipState::kStable;
  d.run(g);
  CHECK(d.ctx.phase == Phase::kGrasp);
  g.contact_force = 5.0;
  d.run(g);
  REQUIRE(d.ctx.phase == Phase::kManipulate);
  CHECK(d.log.back().setpoint_z == 2.0 * kPoint[2]);
  CHECK(d.ctx.stack.setpoint.position.head<2>() == Vec3(0.46, 0.01, 0.015).head<2>());

  Observation m = g;
  m.tactile_time = d.t;
  m.open_palm_flag = true;
  d.run(m);
  CHECK(d.ctx.phase == Phase::kManipulate);
  m.tactile_time = d.t;
  d.run(m);
  REQUIRE(d.ctx.phase == Phase::kRelease);
  CHECK(d.ctx.stack.primary_label() == "cartesian");

  Observation r = d.obs(kPoint);
  d.run(r);
  CHECK(d.ctx.phase == Phase::kRelease);
  d.run(d.obs(kHome));
  REQUIRE(d.ctx.phase == Phase::kHoming);
  CHECK(validate_phase_path(d.log).empty());
  CHECK(d.log.size() == 5);
}

TEST_CASE("withdraw without a candidate object") {
  Driver d;
  d.run(d.obs(kHome));
  d.run(d.obs(kPoint));
  d.run(d.obs(kPoint));
  REQUIRE(d.ctx.phase == Phase::kPreGrasp);
  Observation o = d.obs(kPoint);
  o.settled = true;
  o.detection_time = d.t;  // processed, nothing found
  for (int i = 0; i < 10; ++i) d.run(o);
  CHECK(d.ctx.phase == Phase::kPreGrasp);
  d.run(o);
  REQUIRE(d.ctx.phase == Phase::kHoming);
  CHECK(d.log.back().trigger == "withdraw");
  // the leader is still reaching out: no re-trigger until the posture drops
  for (int i = 0; i < 5; ++i) d.run(d.obs(kPoint));
  CHECK(d.ctx.phase == Phase::kHoming);
}

TEST_CASE("stale detections do not fire") {
  Driver d;
  d.run(d.obs(kHome));
  d.run(d.obs(kPoint));
  d.run(d.obs(kPoint));
  REQUIRE(d.ctx.phase == Phase::kPreGrasp);
  Observation o = d.obs(kPoint);
  o.settled = true;
  o.detections = {detection_at(kPoint)};
  o.detection_time = d.t - 0.7;
  d.run(o);
  CHECK(d.ctx.phase == Phase::kPreGrasp);
}

TEST_CASE("slip recovery and grasp timeout") {
  Driver d;
  d.run(d.obs(kHome));
  d.run(d.obs(kPoint));
  d.run(d.obs(kPoint));
  Observation o = d.obs(kPoint);
  o.settled = true;
  o.detections = {detection_at({0.9, 0.0, 0.0}), detection_at({0.45, 0.01, 0.01})};
  o.detection_time = d.t;
  d.run(o);
  REQUIRE(d.ctx.phase == Phase::kGrasp);
  CHECK(d.ctx.target->base_pose.position[0] == 0.45);

  Observation g = d.obs(kPoint);
  g.contact_force = 5.0;
  g.slip = SlipState::kStable;
  g.tactile_time = d.t;
  d.run(g);
  REQUIRE(d.ctx.phase == Phase::kManipulate);
  g.slip = SlipState::kSlip;
  g.tactile_time = d.t;
  d.run(g);
  REQUIRE(d.ctx.phase == Phase::kGrasp);
  CHECK(d.log.back().trigger == "slip");
  CHECK(d.ctx.stack.grip_target == doctest::Approx(7.5));
  g.slip = SlipState::kStable;
  g.tactile_time = d.t;
  d.run(g);
  CHECK(d.ctx.phase == Phase::kManipulate);

  Driver f;
  f.run(f.obs(kHome));
  f.run(f.obs(kPoint));
  f.run(f.obs(kPoint));
  Observation p = f.obs(kPoint);
  p.settled = true;
  p.detections = {detection_at(kPoint)};
  p.detection_time = f.t;
  f.run(p);
  REQUIRE(f.ctx.phase == Phase::kGrasp);
  for (int i = 0; i < 16; ++i) f.run(f.obs(kPoint));
  CHECK(f.ctx.phase == Phase::kPreGrasp);
  CHECK(f.log.back().trigger == "grasp_timeout");
}

TEST_CASE("undefined events are ignored") {
  Driver d;
  Observation o = d.obs(kHome);
  o.open_palm_flag = true;
  d.run(o);
  o.t = d.t;
  d.run(o);
  CHECK(d.ctx.phase == Phase::kHoming);
  CHECK(d.ignored.size() == 1);
}
