#include "isot/simulation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "isot/errors.hpp"

namespace isot {

namespace fs = std::filesystem;

namespace {

constexpr double kGravity = 9.81;
constexpr double kLiftMargin = 0.002;  // m above the attach height that counts as lifted
constexpr double kJawOpen = 1e-5;      // m

enum Stream : std::uint64_t { kTracking = 1, kCloud, kRansac, kPad, kVariation };

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = splitmix(seed);
  h = splitmix(h ^ a);
  h = splitmix(h ^ b);
  return splitmix(h ^ c);
}

ForceMapper train_scenario_mapper(const Scenario& s, TrainingReport* report) {
  const auto& t = s.tactile;
  const auto all = synth_calibration(t.calibration, t.train_samples + t.test_samples, t.calibration_seed);
  const std::vector<CalibrationSample> train(all.begin(), all.begin() + t.train_samples);
  const std::vector<CalibrationSample> test(all.begin() + t.train_samples, all.end());
  return train_force_mapper(train, test, t.training, report);
}

Mat3 jaw_sensor_rotation(SensorId sensor) {
  Mat3 R;
  if (sensor == SensorId::kLeftJaw) {
    // left jaw sits on +y and pushes towards -y
    R.col(0) = Vec3::UnitX();
    R.col(1) = Vec3::UnitZ();
    R.col(2) = -Vec3::UnitY();
  } else {
    R.col(0) = Vec3::UnitX();
    R.col(1) = -Vec3::UnitZ();
    R.col(2) = Vec3::UnitY();
  }
  return R;
}

// --- simulation ----------------------------------------------------------------------

Simulation::Simulation(const Scenario& scenario, const ForceMapper& mapper, std::uint64_t seed, int trial, bool record)
    : sc_(scenario),
      mapper_(mapper),
      seed_(seed),
      trial_(trial),
      record_(record),
      script_(scenario.leader),
      filter_(scenario.leader.side, scenario.filter_window, scenario.fsm.staleness_horizon),
      palm_evidence_(scenario.fsm.open_palm_frames) {
  q_ = sc_.chain.home();
  const Pose home = forward_kinematics(sc_.chain, q_);
  ctx_ = initial_context(home, sc_.fsm, 0.0);
  ee_prev_ = home.position;
  fault_done_.assign(sc_.faults.size(), false);

  // objects placed in slightly different poses per trial
  std::mt19937_64 rng(derive_seed(seed_, kVariation, static_cast<std::uint64_t>(trial_)));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (const auto& spec : sc_.objects) {
    ObjectState o;
    o.spec = spec;
    o.spec.object.position[0] += sc_.variation.object_xy * u(rng);
    o.spec.object.position[1] += sc_.variation.object_xy * u(rng);
    o.spec.object.yaw += sc_.variation.object_yaw * u(rng);
    objects_.push_back(o);
  }
  log_.trial = trial_;
  log_.task = sc_.task;
  last_.q = q_;
  last_.ee = home;
  last_.objects = objects_;
}

double Simulation::time() const { return static_cast<double>(tick_) / sc_.rates.control; }

void Simulation::set_leader(const Vec3& wrist, bool open_palm, bool visible) {
  LeaderKeyframe k;
  k.t = 0.0;
  k.wrist = wrist;
  k.open_palm = open_palm;
  k.visible = visible;
  script_.keyframes = {k};
}

void Simulation::place_object(const ObjectSpec& object) {
  ObjectState o;
  o.spec = object;
  objects_.push_back(o);
}

SimState Simulation::state() const { return last_; }

Simulation::Contact Simulation::contact(const Pose& ee) const {
  Contact c;
  const double gap = sc_.gripper.aperture - jaw_left_ - jaw_right_;
  for (std::size_t i = 0; i < objects_.size(); ++i) {
    const auto& o = objects_[i];
    const Vec3& d = o.spec.object.dims;
    if (!o.attached) {
      const Vec3 rel = o.spec.object.position - ee.position;
      if (rel.head<2>().norm() > sc_.gripper.capture_radius || std::abs(rel[2]) > 0.5 * d[2] + 0.01) continue;
    }
    // the jaws centre the object and squeeze its narrow side symmetrically
    const double width = std::min(d[0], d[1]);
    const double pen = std::max(0.0, 0.5 * (width - gap));
    if (pen <= 0.0) continue;
    c.penetration_mm = 1000.0 * pen;
    c.object = static_cast<int>(i);
    if (o.lifted) {
      const double load = 0.5 * o.spec.mass * kGravity;
      const Mat3 R = ee.orientation.toRotationMatrix();
      const Vec3 down(0.0, 0.0, -1.0);
      const Vec3 down_left = (R * jaw_sensor_rotation(SensorId::kLeftJaw)).transpose() * down;
      const Vec3 down_right = (R * jaw_sensor_rotation(SensorId::kRightJaw)).transpose() * down;
      c.shear_left = load * down_left.head<2>();
      c.shear_right = load * down_right.head<2>();
    }
    break;
  }
  return c;
}

void Simulation::abort(const std::string& why, std::vector<std::string>& events) {
  aborted_ = true;
  diagnostic_ = why;
  events.push_back("abort");
}

bool Simulation::finished() const {
  if (aborted_) return true;
  const double t = time();
  if (t >= sc_.time_limit) return true;
  return t >= script_.duration() && ctx_.phase == Phase::kHoming && settled_ && !log_.transitions.empty();
}

void Simulation::tick() {
  const double dt = sc_.dt();
  const double t = time();
  std::vector<std::string> events;
  const Pose pose = forward_kinematics(sc_.chain, q_);
  const double speed = tick_ == 0 ? 0.0 : (pose.position - ee_prev_).norm() / dt;
  const double err = (pose.position - ctx_.stack.setpoint.position).norm();
  settled_ = err <= sc_.controller.settle_position && speed <= sc_.controller.settle_speed;

  // scripted load change
  for (std::size_t i = 0; i < sc_.faults.size(); ++i) {
    const auto& f = sc_.faults[i];
    if (fault_done_[i] || ctx_.phase != f.phase || t - ctx_.phase_entry < f.after) continue;
    fault_done_[i] = true;
    for (auto& o : objects_) {
      if (o.attached) o.spec.mass = f.mass;
    }
    events.push_back("fault:" + f.type);
  }

  Observation obs;
  obs.t = t;

  // tracking camera
  if (tick_ % (sc_.rates.control / sc_.rates.tracking) == 0) {
    const SkeletonFrame frame = synth_skeleton(script_, sc_.tracking_camera, t,
                                               derive_seed(seed_, kTracking, static_cast<std::uint64_t>(trial_),
                                                           static_cast<std::uint64_t>(tracking_frames_)));
    track_ = filter_.update(frame);
    track_time_ = t;
    obs.tracking_frame = true;
    obs.open_palm_flag = frame.open_palm;
    ++tracking_frames_;
  }
  obs.arm = track_;
  obs.arm.staleness = track_.staleness + (t - track_time_);
  obs.arm.lost = track_.lost || obs.arm.staleness > sc_.fsm.staleness_horizon;
  obs.settled = settled_;

  // eye-in-hand detection, only while hovering in PreGrasp
  if (ctx_.phase == Phase::kPreGrasp && settled_ && tick_ % (sc_.rates.control / sc_.rates.detection) == 0) {
    std::vector<SceneObject> visible;
    for (const auto& o : objects_) {
      if (!o.attached) visible.push_back(o.spec.object);
    }
    const Mat4 ee_to_base = pose.matrix();
    const Mat4 cam = sc_.hand_camera();
    const auto n = static_cast<std::uint64_t>(detection_frames_);
    const auto tr = static_cast<std::uint64_t>(trial_);
    try {
      const PointCloud cloud = synth_cloud(visible, ee_to_base * cam, sc_.cloud, derive_seed(seed_, kCloud, tr, n), t);
      detections_ = detect_objects(cloud, sc_.detection, cam, ee_to_base, derive_seed(seed_, kRansac, tr, n));
    } catch (const EmptyCloud&) {
      detections_.clear();
    }
    detection_time_ = t;
    ++detection_frames_;
    if (!detections_.empty()) events.push_back("detection");
  }
  obs.detections = detections_;
  obs.detection_time = detection_time_;

  // tactile pads, one decimated frame per control tick
  const Contact c = contact(pose);
  DeformationVector D;
  Vec3 f_left = Vec3::Zero();
  Vec3 f_right = Vec3::Zero();
  std::optional<SlipState> slip;
  const Mat3 R_ee = pose.orientation.toRotationMatrix();
  const Mat3 R_left = R_ee * jaw_sensor_rotation(SensorId::kLeftJaw);
  if (c.object >= 0) {
    PadModel pad;
    pad.k_normal = sc_.gripper.contact_stiffness;
    pad.k_tangential = sc_.tactile.calibration.k_tangential;
    pad.noise_mm = sc_.gripper.pad_noise_mm;
    const auto tk = static_cast<std::uint64_t>(tick_);
    const auto tr = static_cast<std::uint64_t>(trial_);
    const DeformationVector dl = interpolate_taxels(
        pad.frame(t, SensorId::kLeftJaw, c.penetration_mm, c.shear_left, derive_seed(seed_, kPad, tr, 2 * tk)));
    const DeformationVector dr = interpolate_taxels(
        pad.frame(t, SensorId::kRightJaw, c.penetration_mm, c.shear_right, derive_seed(seed_, kPad, tr, 2 * tk + 1)));
    f_left = mapper_(dl);
    f_right = mapper_(dr);
    D = dl;
    const bool slipping = check_friction_cone(dl, sc_.friction) == SlipState::kSlip ||
                          check_friction_cone(dr, sc_.friction) == SlipState::kSlip;
    slip = slipping ? SlipState::kSlip : SlipState::kStable;
    obs.contact_force = 0.5 * (f_left[2] + f_right[2]);
  }
  obs.slip = slip;
  obs.tactile_time = t;
  obs.gripper_open = jaw_left_ <= kJawOpen && jaw_right_ <= kJawOpen;

  // evidence tokens: the instant each trigger condition becomes observable
  const double thr = sc_.fsm.contact_force_threshold;
  const bool stable = c.object >= 0 && obs.contact_force >= thr && slip == SlipState::kStable;
  if (stable && !ev_stable_) events.push_back("grasp_stable");
  ev_stable_ = stable;
  const bool slipping = slip == SlipState::kSlip;
  if (slipping && !ev_slip_) events.push_back("slip");
  ev_slip_ = slipping;
  const bool in_contact = obs.contact_force >= thr;
  if (!in_contact && ev_contact_) events.push_back("contact_lost");
  ev_contact_ = in_contact;

  const FsmStep res = step(ctx_, obs, sc_.fsm);
  if (obs.tracking_frame) {
    const bool active = !obs.arm.lost && posture_active(res.ctx, obs.arm, sc_.fsm);
    if (active && !ev_posture_) events.push_back("posture");
    ev_posture_ = active;
    const bool palm = palm_evidence_.update(obs.open_palm_flag && obs.arm.fresh);
    if (palm && !ev_palm_) events.push_back("open_palm");
    ev_palm_ = palm;
    const bool home = leader_at_home(res.ctx, obs.arm, sc_.fsm);
    if (home && !ev_home_) events.push_back("leader_home");
    ev_home_ = home;
  }
  ctx_ = res.ctx;
  for (const auto& tr : res.transitions) {
    // timer triggers have no earlier evidence
    if (tr.trigger == "withdraw" || tr.trigger == "grasp_timeout") events.push_back(tr.trigger);
    events.push_back("stack:" + ctx_.stack.primary_label());
    if (tr.to == Phase::kPreGrasp) {
      detections_.clear();
      detection_time_.reset();
    }
    log_.transitions.push_back(tr);
  }
  for (const auto& ig : res.ignored) events.push_back("ignored:" + ig.substr(0, ig.find(' ')));

  // arm stack: Cartesian primary, manipulability and joint-limit secondaries
  const auto& cfg = sc_.solver;
  VecX qdot = VecX::Zero(sc_.chain.dof());
  if (!aborted_) {
    try {
      const double gain =
          ctx_.stack.arm == StackConfig::Arm::kKinetoStatic ? cfg.gain_hold : cfg.gain_cartesian;
      const Solution sol =
          solve_arm_step(sc_.chain, cfg, q_, ctx_.stack.setpoint, gain, sc_.controller.error_clamp, dt);
      if (!sol.converged || !sol.qdot.allFinite()) throw std::runtime_error("arm QP did not converge");
      qdot = sol.qdot;
    } catch (const std::exception& ex) {
      abort(std::string("arm solver: ") + ex.what(), events);
    }
  }

  // gripper stack: force task on the two jaws, or open
  double jl_rate = 0.0, jr_rate = 0.0;
  const double jaw_max = 0.5 * sc_.gripper.aperture;
  if (!aborted_) {
    if (ctx_.stack.gripper_force) {
      const bool arrived = (pose.position - ctx_.stack.setpoint.position).norm() <= sc_.gripper.arrive_tolerance;
      if (arrived || c.object >= 0) {
        try {
          const double k_contact = 1000.0 * sc_.gripper.contact_stiffness;  // N/m per jaw
          const Vec3 target = ctx_.stack.grip_target * R_left.col(2);
          TaskTerm force{"force", 0.5 * k_contact * gripper_jacobian(R_left), force_task_error(f_left, target, R_left),
                         VecX::Constant(3, cfg.gain_force), cfg.alpha_primary, Priority::Hard(0)};
          VelocityBounds b;
          b.lower = Eigen::Vector2d((-jaw_left_) / dt, (-jaw_right_) / dt).cwiseMax(-cfg.jaw_rate_max);
          b.upper = Eigen::Vector2d((jaw_max - jaw_left_) / dt, (jaw_max - jaw_right_) / dt).cwiseMin(cfg.jaw_rate_max);
          b.lower = b.lower.cwiseMin(b.upper);
          const std::vector<TaskTerm> terms{force};
          const Solution sol = solve_cascaded_qp(terms, b, cfg.cascade());
          jl_rate = sol.qdot[0];
          jr_rate = sol.qdot[1];
        } catch (const std::exception& ex) {
          abort(std::string("gripper solver: ") + ex.what(), events);
        }
      }
    } else {
      jl_rate = -cfg.jaw_rate_max;
      jr_rate = -cfg.jaw_rate_max;
    }
  }

  // log the state at t, then integrate to t + dt
  Vec3 force_base = Vec3::Zero();
  if (c.object >= 0) force_base = R_left * f_left;
  if (record_) {
    TickRecord rec;
    rec.t = t;
    rec.phase = ctx_.phase;
    rec.q = q_;
    rec.ee = pose.position;
    rec.orientation = pose.orientation;
    rec.wrist = track_.wrist;
    rec.force = force_base;
    rec.deformation = D.vec();
    rec.slip = slip == SlipState::kSlip;
    rec.events = events;
    log_.ticks.push_back(std::move(rec));
    if (c.object >= 0) log_.contacts.push_back({t, 1000.0 * jaw_left_, 1000.0 * jaw_right_});
  }

  last_.t = t;
  last_.phase = ctx_.phase;
  last_.q = q_;
  last_.ee = pose;
  last_.wrist = track_.wrist;
  last_.force = force_base;
  last_.deformation = D;
  last_.slip = slip == SlipState::kSlip;
  last_.jaw_left = jaw_left_;
  last_.jaw_right = jaw_right_;
  last_.detections = detections_;

  ee_prev_ = pose.position;
  if (!aborted_) {
    q_ = integrate_step(q_, qdot, dt, sc_.chain).q;
    jaw_left_ = std::clamp(jaw_left_ + jl_rate * dt, 0.0, jaw_max);
    jaw_right_ = std::clamp(jaw_right_ + jr_rate * dt, 0.0, jaw_max);
  }
  const Pose next = forward_kinematics(sc_.chain, q_);

  // objects follow the jaws while squeezed and drop when released
  for (std::size_t i = 0; i < objects_.size(); ++i) {
    auto& o = objects_[i];
    const bool squeezed = c.object == static_cast<int>(i);
    if (squeezed && !o.attached) {
      o.attached = true;
      o.offset = o.spec.object.position - pose.position;
      o.attach_z = pose.position[2];
    }
    if (o.attached && !squeezed) {
      o.attached = false;
      o.lifted = false;
      o.spec.object.position[2] = 0.5 * o.spec.object.dims[2];
      continue;
    }
    if (o.attached) {
      o.spec.object.position = next.position + o.offset;
      o.lifted = o.lifted || next.position[2] > o.attach_z + kLiftMargin;
    }
  }
  last_.objects = objects_;
  ++tick_;
}

// --- batch runs ----------------------------------------------------------------------

TrialResult run_trial(const Scenario& scenario, const ForceMapper& mapper, std::uint64_t seed, int trial) {
  Simulation sim(scenario, mapper, seed, trial);
  while (!sim.finished()) sim.tick();
  TrialResult r;
  r.control_ticks = sim.control_ticks();
  r.tracking_frames = sim.tracking_frames();
  r.detection_frames = sim.detection_frames();
  r.completed = !sim.aborted() && sim.phase() == Phase::kHoming && sim.time() < scenario.time_limit;
  r.diagnostic = sim.aborted() ? sim.diagnostic() : (r.completed ? "" : "time limit reached in " +
                                                                              std::string(to_string(sim.phase())));
  r.log = sim.take_log();
  return r;
}

SimulationRun run_simulation(const Scenario& scenario, std::uint64_t seed, int trials) {
  if (trials < 1) throw InvalidInput("at least one trial is required");
  const auto start = std::chrono::steady_clock::now();
  SimulationRun run;
  run.seed = seed;
  const ForceMapper mapper = train_scenario_mapper(scenario, &run.training);
  for (int k = 1; k <= trials; ++k) run.trials.push_back(run_trial(scenario, mapper, seed, k));
  run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

namespace {

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + p.string());
  out << text;
}

}  // namespace

std::vector<std::string> write_run(const SimulationRun& run, const Scenario& scenario, const std::string& dir) {
  using nlohmann::json;
  fs::create_directories(dir);
  std::vector<std::string> files;
  json status = json::array();
  for (const auto& tr : run.trials) {
    const std::string stem = trial_stem(tr.log.trial);
    std::string csv = tick_csv_header(scenario.chain.dof()) + "\n";
    for (const auto& r : tr.log.ticks) {
      csv += tick_csv_row(r);
      csv += '\n';
    }
    write_text(fs::path(dir) / (stem + ".csv"), csv);
    write_text(fs::path(dir) / (stem + "_transitions.csv"), transitions_to_csv(tr.log.transitions));
    write_text(fs::path(dir) / (stem + "_contacts.csv"), contacts_to_csv(tr.log.contacts));
    for (const char* suffix : {".csv", "_transitions.csv", "_contacts.csv"}) files.push_back(stem + suffix);
    status.push_back({{"trial", tr.log.trial},
                      {"completed", tr.completed},
                      {"diagnostic", tr.diagnostic},
                      {"control_ticks", tr.control_ticks},
                      {"tracking_frames", tr.tracking_frames},
                      {"detection_frames", tr.detection_frames}});
  }
  json header;
  header["schema"] = "header.v1";
  header["task"] = scenario.task;
  header["seed"] = run.seed;
  header["trials"] = run.trials.size();
  header["dof"] = scenario.chain.dof();
  header["scenario"] = json::parse(scenario_to_json_text(scenario));
  header["chain"] = json::parse(chain_to_json_text(scenario.chain));
  header["solver"] = json::parse(solver_config_to_json_text(scenario.solver));
  header["tactile_training"] = {{"train_rmse", run.training.train_rmse},
                                {"test_rmse", run.training.test_rmse},
                                {"force_range", run.training.force_range},
                                {"epochs", run.training.epochs}};
  header["trial_status"] = status;
  write_text(fs::path(dir) / "header.json", header.dump(2) + "\n");
  files.push_back("header.json");
  return files;
}

std::vector<Phase> phase_path(const TrialLog& log) {
  std::vector<Phase> path{Phase::kHoming};
  for (const auto& t : log.transitions) path.push_back(t.to);
  return path;
}

std::vector<std::string> validate_trial(const TrialLog& log, const Scenario& s) {
  std::vector<std::string> problems;
  auto fail = [&](const std::string& m) { problems.push_back(trial_stem(log.trial) + ": " + m); };
  if (const std::string p = validate_phase_path(log.transitions); !p.empty()) fail(p);
  if (!s.expected_path.empty() && phase_path(log) != s.expected_path) {
    std::string got;
    for (Phase p : phase_path(log)) got += std::string(got.empty() ? "" : " ") + to_string(p);
    fail("phase path " + got + " differs from the expected one");
  }
  if (log.ticks.empty()) {
    fail("no ticks");
    return problems;
  }

  const double dt = s.dt();
  std::size_t next_tr = 0;
  Phase phase = Phase::kHoming;
  std::string stack = "cartesian";
  for (std::size_t i = 0; i < log.ticks.size(); ++i) {
    const auto& r = log.ticks[i];
    const std::string at = "t=" + format_double(r.t) + ": ";
    if (std::abs(r.t - static_cast<double>(i) * dt) > 1e-9) {
      fail(at + "tick time is off the control grid");
      break;
    }
    while (next_tr < log.transitions.size() && log.transitions[next_tr].t <= r.t + 1e-12) {
      phase = log.transitions[next_tr].to;
      ++next_tr;
    }
    if (r.phase != phase) {
      fail(at + "tick phase " + to_string(r.phase) + " disagrees with the transition log");
      break;
    }
    for (const auto& e : r.events) {
      if (e.rfind("stack:", 0) == 0) stack = e.substr(6);
    }
    const bool force_phase = phase == Phase::kGrasp || phase == Phase::kManipulate;
    if ((stack == "force") != force_phase) {
      fail(at + "stack '" + stack + "' active in " + to_string(phase));
      break;
    }
    if (r.q.size() != s.chain.dof() || (r.q.array() < s.chain.lower().array() - 1e-12).any() ||
        (r.q.array() > s.chain.upper().array() + 1e-12).any()) {
      fail(at + "joint outside its limits");
      break;
    }
    if (!s.workspace.contains(r.ee)) {
      fail(at + "end effector outside the workspace box");
      break;
    }
  }
  if (next_tr != log.transitions.size()) fail("transitions after the last tick");

  const double k_pre = 4.0, k_lift = 2.0;
  for (const auto& tr : log.transitions) {
    const double z = std::abs(tr.wrist_z);
    const double base = s.fsm.height_mode == HeightMode::kAbsolute ? 0.0 : tr.wrist_z;
    if (tr.to == Phase::kPreGrasp && tr.from == Phase::kHoming && std::abs(tr.setpoint_z - (base + k_pre * z)) > 1e-6) {
      fail("pre-grasp setpoint z " + format_double(tr.setpoint_z) + " is not 4|Z_w|");
    }
    if (tr.to == Phase::kManipulate && std::abs(tr.setpoint_z - (base + k_lift * z)) > 1e-6) {
      fail("lift setpoint z " + format_double(tr.setpoint_z) + " is not 2|Z_w|");
    }
  }
  return problems;
}

MetricsReport run_report(const SimulationRun& run, const Scenario& scenario) {
  std::vector<TrialLog> logs;
  for (const auto& t : run.trials) logs.push_back(t.log);
  if (logs.empty()) throw InvalidInput("no completed trials to report");
  MetricsReport r = compute_report(logs, scenario.workspace.diagonal());
  r.scenario = scenario.name;
  r.task = scenario.task;
  r.seed = run.seed;
  for (const auto& t : run.trials) {
    if (!t.completed) r.warnings.push_back(trial_stem(t.log.trial) + " incomplete: " + t.diagnostic);
  }
  return r;
}

}  // namespace isot
