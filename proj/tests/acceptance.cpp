// Acceptance run: one [PASS]/[FAIL] line per primary criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "isot/simulation.hpp"
#include "oracles.hpp"

using namespace isot;
namespace fs = std::filesystem;

namespace {

const std::string kRoot = ISOT_SOURCE_DIR;

struct Outcome {
  bool ok = true;
  std::string detail;
};

// Keeps the worst value seen against a threshold.
struct Worst {
  double value = 0.0;
  void add(double v) { value = std::max(value, std::isnan(v) ? INFINITY : v); }
  bool below(double limit) const { return value < limit; }
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2e", v);
  return buf;
}

VecX random_q(const KinematicChain& chain, std::mt19937_64& rng, double margin = 0.0) {
  VecX q(chain.dof());
  for (int i = 0; i < chain.dof(); ++i) {
    std::uniform_real_distribution<double> d(chain.lower()[i] + margin, chain.upper()[i] - margin);
    q[i] = d(rng);
  }
  return q;
}

TaskStack stack_for(const KinematicChain& chain, const Pose& target, bool secondaries) {
  std::vector<TaskSpec> tasks{make_cartesian_task(chain, target, 2.0, 1.0)};
  if (secondaries) {
    tasks.push_back(make_manipulability_task(kManipulabilityTarget, 1.0, 0.5));
    tasks.push_back(make_joint_limit_task(chain, 1.0, 0.5));
  }
  return TaskStack(tasks, {VecX::Constant(chain.dof(), -1e3), VecX::Constant(chain.dof(), 1e3)});
}

double level_kkt(const Solution& sol) {
  double worst = 0.0;
  for (const auto& l : sol.levels) {
    worst = std::max(worst, oracle::kkt_residual(l.problem.H, l.problem.g, l.problem.E, l.problem.b, l.problem.lower,
                                                 l.problem.upper, l.result.x));
  }
  return worst;
}

// --- criteria ------------------------------------------------------------------------

Outcome null_space() {
  const auto chain = default_chain();
  std::mt19937_64 rng(101);
  Worst jn, idem;
  for (int k = 0; k < 1000; ++k) {
    const MatX J = analytic_cartesian_jacobian(chain, random_q(chain, rng));
    const MatX N = null_space_projector(J);
    jn.add((J * N).norm());
    idem.add((N * N - N).norm());
  }
  return {jn.below(1e-9) && idem.below(1e-9),
          "1000 configurations, max |J0 N0|_F " + sci(jn.value) + ", max |N0^2 - N0|_F " + sci(idem.value)};
}

Outcome priority_preservation() {
  const auto chain = default_chain();
  const SolverConfig cfg;
  std::mt19937_64 rng(102);
  Worst closed, qp;
  for (int k = 0; k < 200; ++k) {
    const VecX q = random_q(chain, rng);
    const Pose target = forward_kinematics(chain, random_q(chain, rng, 0.3));
    const auto solo = stack_for(chain, target, false);
    const auto full = stack_for(chain, target, true);
    const MatX J0 = analytic_cartesian_jacobian(chain, q);
    for (auto form : {ProjectionForm::kAsWritten, ProjectionForm::kRecursive}) {
      closed.add((J0 * (solve_prioritized(solo, q, cfg.damping, form).qdot -
                        solve_prioritized(full, q, cfg.damping, form).qdot))
                     .norm());
    }
    qp.add((J0 * (solve_cascaded_qp(solo, q, solo.bounds(), cfg.cascade()).qdot -
                  solve_cascaded_qp(full, q, full.bounds(), cfg.cascade()).qdot))
               .norm());
  }
  return {closed.below(1e-9) && qp.below(1e-6),
          "200 states, closed form " + sci(closed.value) + ", QP " + sci(qp.value)};
}

Outcome qp_correctness() {
  const auto chain = default_chain();
  const SolverConfig cfg;
  std::mt19937_64 rng(103);
  Worst agree, kkt, grid;
  bool converged = true;
  int compared = 0;
  for (int k = 0; k < 200; ++k) {
    const VecX q = random_q(chain, rng);
    const auto full = stack_for(chain, forward_kinematics(chain, random_q(chain, rng, 0.3)), true);
    const Solution sol = solve_cascaded_qp(full, q, full.bounds(), cfg.cascade());
    converged = converged && sol.converged;
    // the closed form knows no bounds, so it is compared only where none is active
    if (sol.qdot.cwiseAbs().maxCoeff() < 1e3 - 1e-9) {
      agree.add((sol.qdot - solve_prioritized(full, q, cfg.damping, ProjectionForm::kRecursive).qdot).norm());
      ++compared;
    }
    kkt.add(level_kkt(sol));
    // the same state under tight joint-rate bounds, where bounds are active
    const auto tight = velocity_bounds(chain, q, VecX::Constant(chain.dof(), 0.2), 1e-3);
    const Solution bounded = solve_cascaded_qp(full, q, tight, cfg.cascade());
    converged = converged && bounded.converged;
    kkt.add(level_kkt(bounded));
  }
  std::normal_distribution<double> nd;
  for (int k = 0; k < 100; ++k) {
    Eigen::Matrix<double, 4, 2> A;
    for (int i = 0; i < A.size(); ++i) A.data()[i] = nd(rng);
    BoxQp p;
    p.H = A.transpose() * A + 1e-3 * MatX::Identity(2, 2);
    p.g = VecX::NullaryExpr(2, [&] { return 3.0 * nd(rng); });
    p.lower = VecX::Constant(2, -1.0);
    p.upper = VecX::Constant(2, 1.0);
    p.E = MatX(0, 2);
    p.b = VecX(0);
    const QpResult r = solve_box_qp(p, VecX::Zero(2));
    converged = converged && r.converged;
    kkt.add(oracle::kkt_residual(p.H, p.g, p.E, p.b, p.lower, p.upper, r.x));
    grid.add((r.x - oracle::grid_search_2d(p.H, p.g, p.lower, p.upper, 1e-3)).cwiseAbs().maxCoeff());
  }
  return {converged && agree.below(1e-6) && kkt.below(1e-8) && grid.value <= 1e-3,
          "QP vs closed form " + sci(agree.value) + " (" + std::to_string(compared) + " bound-free states)" + ", max KKT residual " + sci(kkt.value) + ", 2-joint grid " +
              sci(grid.value)};
}

Outcome gradients() {
  const auto chain = default_chain();
  std::mt19937_64 rng(104);
  Worst manip, limit, geo;
  for (int k = 0; k < 100; ++k) {
    const VecX q = random_q(chain, rng);
    manip.add((manipulability_jacobian(q) -
               oracle::central_difference([](const VecX& x) { return VecX::Constant(1, manipulability_value(x)); },
                                          q, 1e-5))
                  .cwiseAbs()
                  .maxCoeff());
    limit.add((joint_limit_jacobian(q, chain) -
               oracle::central_difference(
                   [&](const VecX& x) { return VecX::Constant(1, joint_limit_value(x, chain)); }, q, 1e-5))
                  .cwiseAbs()
                  .maxCoeff());
    geo.add((geometric_jacobian(chain, q).topRows<3>() -
             oracle::central_difference(
                 [&](const VecX& x) -> VecX { return forward_kinematics(chain, x).position; }, q, 1e-6))
                .cwiseAbs()
                .maxCoeff());
  }
  return {manip.below(1e-8) && limit.below(1e-8) && geo.below(1e-6),
          "100 configurations, manipulability " + sci(manip.value) + ", joint limit " + sci(limit.value) +
              ", position Jacobian " + sci(geo.value)};
}

Outcome convergence() {
  const auto chain = load_chain(kRoot + "/config/chain_default.json");
  const SolverConfig cfg = load_solver_config(kRoot + "/config/solver_default.json");
  const ControllerConfig ctl;
  const WorkspaceBox box;
  const double dt = 1e-3;
  std::mt19937_64 rng(105);
  Worst final_error;
  double slowest = 0.0;
  bool in_limits = true;
  int done = 0;
  while (done < 20) {
    // reachable by construction: forward kinematics of a random configuration,
    // kept when it lies in the task workspace with the tool roughly downwards
    const Pose target = forward_kinematics(chain, random_q(chain, rng, 0.3));
    const double tilt = std::acos(std::clamp(-(target.orientation * Vec3::UnitZ())[2], -1.0, 1.0));
    if (!box.contains(target.position) || tilt > 0.5) continue;
    ++done;
    VecX q = chain.home();
    double e = 0.0, reached = -1.0;
    for (int i = 1; i <= 5000; ++i) {
      const Solution sol = solve_arm_step(chain, cfg, q, target, cfg.gain_cartesian, ctl.error_clamp, dt);
      q = integrate_step(q, sol.qdot, dt, chain).q;
      in_limits = in_limits && (q.array() >= chain.lower().array()).all() && (q.array() <= chain.upper().array()).all();
      e = (forward_kinematics(chain, q).position - target.position).norm();
      if (e < 1e-3 && reached < 0.0) reached = i * dt;
    }
    final_error.add(e);
    slowest = std::max(slowest, reached < 0.0 ? INFINITY : reached);
  }
  return {final_error.below(1e-3) && in_limits,
          "20 targets, worst error at 5 s " + sci(final_error.value) + " m, slowest arrival " + sci(slowest) +
              " s, joints " + (in_limits ? "inside" : "outside") + " limits"};
}

Outcome clustering() {
  std::mt19937_64 rng(106);
  int mismatches = 0;
  for (int k = 0; k < 100; ++k) {
    const int n = 1 + static_cast<int>(rng() % 500);
    std::uniform_real_distribution<double> u(0.0, 0.05 + 0.002 * (k % 50));
    PointCloud c;
    for (int i = 0; i < n; ++i) c.points.push_back(Vec3(u(rng), u(rng), u(rng)));
    const int min_pts = 1 + static_cast<int>(rng() % 5);
    const auto got = euclidean_cluster(c, 0.01, min_pts);
    if (std::set<std::vector<int>>(got.begin(), got.end()) != oracle::union_find_clusters(c.points, 0.01, min_pts)) {
      ++mismatches;
    }
  }
  return {mismatches == 0, "100 clouds up to 500 points, " + std::to_string(mismatches) + " mismatches"};
}

Outcome projection() {
  std::mt19937_64 rng(107);
  std::normal_distribution<double> nd;
  const CameraIntrinsics intr;
  std::uniform_real_distribution<double> ux(0.0, 2.0 * intr.cx), uy(0.0, 2.0 * intr.cy), ud(0.2, 4.0);
  Worst err;
  for (int k = 0; k < 10000; ++k) {
    CameraExtrinsics e;
    e.R = Quat(nd(rng), nd(rng), nd(rng), nd(rng)).normalized().toRotationMatrix();
    e.l = Vec3(nd(rng), nd(rng), nd(rng));
    const Pixel px{ux(rng), uy(rng), ud(rng)};
    const Vec3 cam = depth_to_camera(px, intr);
    const Vec3 base = camera_to_base(cam, e);
    const Vec3 cam_back = base_to_camera(base, e);
    const Pixel px_back = camera_to_pixel(cam_back, intr);
    err.add((cam_back - cam).cwiseAbs().maxCoeff());
    err.add(std::abs(px_back.ix - px.ix));
    err.add(std::abs(px_back.iy - px.iy));
    err.add(std::abs(px_back.depth - px.depth));
    // and the other way round, from the base frame
    const Vec3 base_back = camera_to_base(depth_to_camera(camera_to_pixel(base_to_camera(base, e), intr), intr), e);
    err.add((base_back - base).cwiseAbs().maxCoeff());
  }
  return {err.below(1e-9), "10^4 points, max round-trip error " + sci(err.value)};
}

Outcome tactile() {
  const CalibrationModel model;
  const auto train = synth_calibration(model, 100, 1);
  const auto test = synth_calibration(model, 20, 2);
  TrainingReport report;
  const ForceMapper m = train_force_mapper(train, test, {}, &report);
  const double ratio = report.test_rmse / report.force_range;

  FrictionParams p;  // default convention, mu = 0.75
  FrictionParams standard = p;
  standard.convention = FrictionConvention::kStandard;
  struct Case {
    DeformationVector d;
    const FrictionParams* params;
    SlipState expected;
  };
  const std::vector<Case> cases{
      // default: ratio D_z / |D_xy| against mu, strictly greater means slip
      {{4.0, 0.0, 3.0}, &p, SlipState::kStable},
      {{0.0, 0.0, 1.0}, &p, SlipState::kSlip},
      {{3.0, 4.0, 0.0}, &p, SlipState::kStable},
      {{4.0, 0.0, 3.01}, &p, SlipState::kSlip},
      // standard: shear |D_xy| against mu D_z
      {{3.0, 4.0, 0.0}, &standard, SlipState::kSlip},
      {{3.0, 0.0, 4.0}, &standard, SlipState::kStable},
      {{3.0, 0.0, 3.9}, &standard, SlipState::kSlip},
      {{0.0, 0.0, 1.0}, &standard, SlipState::kStable}};
  int wrong = 0;
  for (const auto& c : cases) {
    for (double scale : {1.0, 1e-3, 1e3}) {
      const DeformationVector d{scale * c.d.dx, scale * c.d.dy, scale * c.d.dz};
      wrong += check_friction_cone(d, *c.params) != c.expected;
    }
  }
  return {p.mu == 0.75 && ForceMapper::kHidden == 5 && ratio < 0.05 && wrong == 0,
          "5 hidden units, held-out RMSE " + sci(report.test_rmse) + " N = " + sci(100.0 * ratio) +
              "% of range, friction cases wrong: " + std::to_string(wrong)};
}

std::string join_path(const std::vector<Phase>& path) {
  std::string s;
  for (Phase p : path) s += std::string(s.empty() ? "" : ">") + to_string(p);
  return s;
}

Outcome end_to_end() {
  const fs::path dir = fs::temp_directory_path() / "isot_acceptance_e2e";
  std::string detail;
  bool ok = true;
  for (const char* name : {"assembly_task1", "disassembly_task2", "withdraw_no_object", "slip_recovery"}) {
    const Scenario sc = load_scenario(kRoot + "/scenarios/" + name + ".json");
    const SimulationRun run = run_simulation(sc, sc.seed, sc.trials);
    fs::remove_all(dir);
    write_run(run, sc, dir.string());
    const auto logs = load_trials(dir.string());
    int good = 0;
    Worst height;
    for (const auto& log : logs) {
      bool trial_ok = phase_path(log) == sc.expected_path && validate_trial(log, sc).empty();
      int pre = 0, lift = 0;
      for (const auto& tr : log.transitions) {
        if (tr.from == Phase::kHoming && tr.to == Phase::kPreGrasp) {
          height.add(std::abs(tr.setpoint_z - 4.0 * std::abs(tr.wrist_z)));
          ++pre;
        }
        if (tr.to == Phase::kManipulate) {
          height.add(std::abs(tr.setpoint_z - 2.0 * std::abs(tr.wrist_z)));
          ++lift;
        }
      }
      const bool grasps = std::find(sc.expected_path.begin(), sc.expected_path.end(), Phase::kManipulate) !=
                          sc.expected_path.end();
      trial_ok = trial_ok && pre >= 1 && (!grasps || lift >= 1);
      good += trial_ok;
    }
    const bool scenario_ok = good == sc.trials && static_cast<int>(logs.size()) == sc.trials && height.below(1e-6);
    ok = ok && scenario_ok;
    detail += std::string(detail.empty() ? "" : "; ") + name + " " + std::to_string(good) + "/" +
              std::to_string(sc.trials) + " " + join_path(sc.expected_path) + " (height err " + sci(height.value) +
              ")";
  }
  fs::remove_all(dir);
  return {ok, detail};
}

// --- metrics toy logs ----------------------------------------------------------------

TickRecord tick(double t, Phase phase, const Vec3& ee, std::vector<std::string> events = {}) {
  TickRecord r;
  r.t = t;
  r.phase = phase;
  r.q = VecX::Zero(7);
  r.ee = ee;
  r.events = std::move(events);
  return r;
}

TransitionRecord transition(double t, Phase from, Phase to, const std::string& trigger) {
  TransitionRecord tr;
  tr.t = t;
  tr.from = from;
  tr.to = to;
  tr.trigger = trigger;
  return tr;
}

// Straight line from a to b sampled every dt over [0, T].
TrialLog line_trial(const Vec3& a, const Vec3& b, double T = 1.0, double dt = 0.01) {
  TrialLog log;
  const int n = static_cast<int>(std::lround(T / dt));
  for (int i = 0; i <= n; ++i) {
    const double s = static_cast<double>(i) / n;
    log.ticks.push_back(tick(i * dt, Phase::kHoming, a + s * (b - a)));
  }
  return log;
}

// Homing at p0 until t = 1, PreGrasp moving to p1 until t = 2, then Grasp.
TrialLog approach_trial(const Vec3& p0, const Vec3& p1) {
  TrialLog log;
  for (int i = 0; i <= 30; ++i) {
    const double t = 0.1 * i;
    const double s = std::clamp(t - 1.0, 0.0, 1.0);
    const Phase ph = t < 1.0 ? Phase::kHoming : (t < 2.0 ? Phase::kPreGrasp : Phase::kGrasp);
    log.ticks.push_back(tick(t, ph, p0 + s * (p1 - p0)));
  }
  log.transitions = {transition(1.0, Phase::kHoming, Phase::kPreGrasp, "posture"),
                     transition(2.0, Phase::kPreGrasp, Phase::kGrasp, "detection")};
  return log;
}

// Five transitions, each with its token on the transition tick and motion
// starting 0.5 s later; Release is not counted, so the sum is 4 x 0.51 s.
TrialLog latency_trial() {
  TrialLog log;
  const std::vector<std::pair<Phase, std::string>> path{{Phase::kPreGrasp, "posture"},
                                                         {Phase::kGrasp, "detection"},
                                                         {Phase::kManipulate, "grasp_stable"},
                                                         {Phase::kRelease, "open_palm"},
                                                         {Phase::kHoming, "leader_home"}};
  Vec3 p = Vec3::Zero();
  Phase phase = Phase::kHoming;
  for (int i = 0; i <= 600; ++i) {
    const double t = 0.01 * i;
    const int stage = i / 100;
    const int within = i % 100;
    std::vector<std::string> events;
    if (within == 0 && stage >= 1 && stage <= 5) {
      const auto& [to, trig] = path[stage - 1];
      log.transitions.push_back(transition(t, phase, to, trig));
      phase = to;
      events.push_back(trig);
    }
    if (stage >= 1 && within > 50) p += Vec3(0.001, 0, 0);
    log.ticks.push_back(tick(t, phase, p, events));
  }
  return log;
}

Outcome metrics() {
  Worst err;
  const auto same = approach_trial(Vec3(0.3, 0, 0.2), Vec3(0.3, 0, 0.8));
  const bool identical = task_repeatability({same, same, same, same, same}, 1.7) == 1.0 &&
                         cumulative_posture_deviation({same, same, same, same, same}) == 0.0;

  // approach: polar radius and azimuth change over PreGrasp
  const auto a = approach_trial(Vec3(0.3, 0, 0.2), Vec3(0.3, 0, 0.8));
  const auto b = approach_trial(Vec3(0.32, 0, 0.2), Vec3(0.32, 0.1, 0.8));
  const double ra = std::sqrt(0.3 * 0.3 + 0.8 * 0.8) - std::sqrt(0.3 * 0.3 + 0.2 * 0.2);
  const double rb = std::sqrt(0.32 * 0.32 + 0.1 * 0.1 + 0.8 * 0.8) - std::sqrt(0.32 * 0.32 + 0.2 * 0.2);
  const auto ap = approach_adaptation({a, b});
  err.add(std::abs(ap.dr.mean - 0.5 * (ra + rb)));
  err.add(std::abs(ap.dr.std - std::abs(ra - rb) / std::sqrt(2.0)));
  err.add(std::abs(ap.dtheta.mean - 0.5 * std::atan2(0.1, 0.32)));

  // latency: first tick past the motion threshold is 0.51 s after each token
  err.add(std::abs(coordination_latency(latency_trial()) - 4 * 0.51));

  // grasp correction: two symmetric 0.5 mm regrips inside the Manipulate window
  TrialLog g = line_trial(Vec3::Zero(), Vec3::UnitX(), 5.0);
  g.transitions = {transition(1.0, Phase::kGrasp, Phase::kManipulate, "grasp_stable"),
                   transition(4.0, Phase::kManipulate, Phase::kRelease, "open_palm")};
  g.contacts = {{0.5, 0.0, 0.0}, {0.9, 3.0, 3.0}, {1.0, 3.0, 3.0}, {2.0, 3.5, 3.5},
                {3.0, 4.0, 4.0}, {3.9, 4.0, 4.0}, {4.5, 9.0, 9.0}};
  const auto gc = grasp_correction(g);
  err.add(gc ? std::abs(*gc - 1.0) : INFINITY);

  // a 1 cm parallel offset on a 1 m path: 1% deviation, C = 1 - 0.01 / diag
  const auto l1 = line_trial(Vec3(0, 0, 0), Vec3(1, 0, 0));
  const auto l2 = line_trial(Vec3(0, 0.01, 0), Vec3(1, 0.01, 0));
  err.add(std::abs(cumulative_posture_deviation({l1, l2}) - 1.0));
  err.add(std::abs(task_repeatability({l1, l2}, 2.0) - (1.0 - 0.005)));

  const std::string table = report_table(compute_report({a, b}, 1.7));
  int rows = 0;
  for (const char* row : {"Approach adaptation", "Coordination latency", "Grasp correction",
                          "Cumulative posture deviation", "Task repeatability"}) {
    rows += table.find(row) != std::string::npos;
  }
  return {identical && err.below(1e-9) && rows == 5,
          std::string("identical trials C = 1 and 0%: ") + (identical ? "yes" : "no") + ", toy logs max error " +
              sci(err.value) + ", report rows " + std::to_string(rows) + "/5"};
}

std::string dir_bytes(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    all += f.filename().string() + "\n" + ss.str();
  }
  return all;
}

Outcome determinism() {
  const fs::path a = fs::temp_directory_path() / "isot_acceptance_det_a";
  const fs::path b = fs::temp_directory_path() / "isot_acceptance_det_b";
  int identical = 0, total = 0;
  std::size_t bytes = 0;
  for (const char* name : {"assembly_task1", "disassembly_task2", "withdraw_no_object", "slip_recovery"}) {
    const Scenario sc = load_scenario(kRoot + "/scenarios/" + name + ".json");
    fs::remove_all(a);
    fs::remove_all(b);
    write_run(run_simulation(sc, sc.seed, 2), sc, a.string());
    write_run(run_simulation(sc, sc.seed, 2), sc, b.string());
    const std::string da = dir_bytes(a), db = dir_bytes(b);
    bytes += da.size();
    identical += da == db;
    ++total;
  }
  fs::remove_all(a);
  fs::remove_all(b);
  return {identical == total, std::to_string(identical) + "/" + std::to_string(total) +
                                  " scenarios byte-identical over two trials (" + std::to_string(bytes / 1024) +
                                  " KiB each run)"};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double limit_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"Null-space suite", 5, null_space},
      {"Priority preservation", 10, priority_preservation},
      {"QP correctness", 30, qp_correctness},
      {"Gradient suite", 10, gradients},
      {"Convergence", 60, convergence},
      {"Clustering oracle", 30, clustering},
      {"Projection round-trip", 5, projection},
      {"Tactile mapping", 60, tactile},
      {"End-to-end FSM", 300, end_to_end},
      {"Metrics", 10, metrics},
      {"Determinism", 120, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool pass = o.ok && secs < c.limit_s;
    failed += !pass;
    std::printf("[%s] %s (%.2f s, limit %.0f s): %s\n", pass ? "PASS" : "FAIL", c.name, secs, c.limit_s,
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
