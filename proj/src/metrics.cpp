#include "isot/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "isot/errors.hpp"

namespace isot {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

// --- CSV --------------------------------------------------------------------------

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(s);
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw SchemaError(where, "bad number '" + s + "'");
  return v;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw InvalidInput("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

constexpr int kFixedColumns = 1 + 1 + 3 + 4 + 3 + 3 + 3 + 1 + 1;  // all but q

}  // namespace

std::string tick_csv_header(int dof) {
  std::string h = "t,phase";
  for (int i = 1; i <= dof; ++i) h += ",q" + std::to_string(i);
  h += ",ee_x,ee_y,ee_z,ee_qw,ee_qx,ee_qy,ee_qz,wrist_x,wrist_y,wrist_z,fx,fy,fz,Dx,Dy,Dz,slip,event";
  return h;
}

std::string tick_csv_row(const TickRecord& r) {
  std::string s;
  s.reserve(320);
  auto add = [&](double v) {
    s += ',';
    s += format_double(v);
  };
  s += format_double(r.t);
  s += ',';
  s += to_string(r.phase);
  for (Eigen::Index i = 0; i < r.q.size(); ++i) add(r.q[i]);
  for (int i = 0; i < 3; ++i) add(r.ee[i]);
  add(r.orientation.w());
  add(r.orientation.x());
  add(r.orientation.y());
  add(r.orientation.z());
  for (int i = 0; i < 3; ++i) add(r.wrist[i]);
  for (int i = 0; i < 3; ++i) add(r.force[i]);
  for (int i = 0; i < 3; ++i) add(r.deformation[i]);
  s += r.slip ? ",1," : ",0,";
  for (std::size_t i = 0; i < r.events.size(); ++i) {
    if (i) s += ';';
    s += r.events[i];
  }
  return s;
}

std::vector<TickRecord> ticks_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("line 1", "missing header");
  const auto header = split(line, ',');
  const int dof = static_cast<int>(header.size()) - kFixedColumns;
  if (dof < 1 || line != tick_csv_header(dof)) throw SchemaError("line 1", "unexpected trial log header");
  std::vector<TickRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno);
    const auto f = split(line, ',');
    if (static_cast<int>(f.size()) != kFixedColumns + dof) throw SchemaError(where, "wrong column count");
    TickRecord r;
    std::size_t k = 0;
    auto next = [&]() { return parse_double(f[k++], where); };
    r.t = next();
    try {
      r.phase = phase_from_string(f[k++]);
    } catch (const InvalidInput& e) {
      throw SchemaError(where, e.what());
    }
    r.q.resize(dof);
    for (int i = 0; i < dof; ++i) r.q[i] = next();
    for (int i = 0; i < 3; ++i) r.ee[i] = next();
    const double w = next(), x = next(), y = next(), z = next();
    r.orientation = Quat(w, x, y, z);
    for (int i = 0; i < 3; ++i) r.wrist[i] = next();
    for (int i = 0; i < 3; ++i) r.force[i] = next();
    for (int i = 0; i < 3; ++i) r.deformation[i] = next();
    r.slip = f[k++] == "1";
    if (!f[k].empty()) r.events = split(f[k], ';');
    if (!out.empty() && r.t <= out.back().t) throw SchemaError(where, "time is not increasing");
    out.push_back(std::move(r));
  }
  return out;
}

std::string contacts_to_csv(const std::vector<ContactSample>& samples) {
  std::string s = "t,contact_left_mm,contact_right_mm\n";
  for (const auto& c : samples) {
    s += format_double(c.t) + "," + format_double(c.left_mm) + "," + format_double(c.right_mm) + "\n";
  }
  return s;
}

std::vector<ContactSample> contacts_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "t,contact_left_mm,contact_right_mm") {
    throw SchemaError("line 1", "unexpected contacts header");
  }
  std::vector<ContactSample> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno);
    const auto f = split(line, ',');
    if (f.size() != 3) throw SchemaError(where, "expected 3 columns");
    out.push_back({parse_double(f[0], where), parse_double(f[1], where), parse_double(f[2], where)});
  }
  return out;
}

std::string trial_stem(int trial) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "trial_%02d", trial);
  return buf;
}

TrialLog load_trial(const std::string& dir, int trial) {
  TrialLog log;
  log.trial = trial;
  const fs::path base(dir);
  const std::string stem = trial_stem(trial);
  log.ticks = ticks_from_csv(read_file(base / (stem + ".csv")));
  const fs::path tr = base / (stem + "_transitions.csv");
  if (fs::exists(tr)) log.transitions = transitions_from_csv(read_file(tr));
  const fs::path ct = base / (stem + "_contacts.csv");
  if (fs::exists(ct)) log.contacts = contacts_from_csv(read_file(ct));
  const fs::path header = base / "header.json";
  if (fs::exists(header)) {
    const auto doc = nlohmann::json::parse(read_file(header), nullptr, false);
    if (doc.is_object() && doc.contains("task") && doc["task"].is_string()) log.task = doc["task"].get<std::string>();
  }
  return log;
}

std::vector<TrialLog> load_trials(const std::string& dir) {
  if (!fs::is_directory(dir)) throw InvalidInput("not a directory: " + dir);
  std::vector<int> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    int id = 0;
    char tail[8] = {};
    if (std::sscanf(name.c_str(), "trial_%d.cs%1s", &id, tail) == 2 && name == trial_stem(id) + ".csv") {
      ids.push_back(id);
    }
  }
  std::sort(ids.begin(), ids.end());
  std::vector<TrialLog> out;
  for (int id : ids) out.push_back(load_trial(dir, id));
  return out;
}

// --- metrics -----------------------------------------------------------------------

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  m.count = static_cast<int>(v.size());
  if (v.empty()) return m;
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double s = 0.0;
    for (double x : v) s += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(s / static_cast<double>(v.size() - 1));
  }
  return m;
}

namespace {

const TickRecord* tick_at(const TrialLog& trial, double t) {
  const auto it = std::lower_bound(trial.ticks.begin(), trial.ticks.end(), t,
                                   [](const TickRecord& r, double v) { return r.t < v; });
  if (it == trial.ticks.end()) return trial.ticks.empty() ? nullptr : &trial.ticks.back();
  return &*it;
}

std::pair<double, double> polar(const Vec3& p) { return {p.norm(), std::atan2(p[1], p[0])}; }

}  // namespace

std::optional<PolarDelta> approach_delta(const TrialLog& trial) {
  std::optional<double> t_home, t_pre;
  for (const auto& tr : trial.transitions) {
    if (!t_home && tr.from == Phase::kHoming && tr.to == Phase::kPreGrasp) {
      t_home = tr.t;
    } else if (t_home && !t_pre && tr.from == Phase::kPreGrasp) {
      t_pre = tr.t;
    }
  }
  if (!t_home || !t_pre) return std::nullopt;
  const TickRecord* a = tick_at(trial, *t_home);
  const TickRecord* b = tick_at(trial, *t_pre);
  if (!a || !b) return std::nullopt;
  const auto [r0, th0] = polar(a->ee);
  const auto [r1, th1] = polar(b->ee);
  return PolarDelta{r1 - r0, th1 - th0};
}

ApproachStats approach_adaptation(const std::vector<TrialLog>& trials) {
  ApproachStats s;
  std::vector<double> dr, dth;
  for (const auto& t : trials) {
    const auto d = approach_delta(t);
    if (!d) {
      ++s.excluded;
      continue;
    }
    dr.push_back(d->dr);
    dth.push_back(d->dtheta);
  }
  if (dr.size() < 2) throw InvalidInput("approach adaptation needs at least two trials with Homing and PreGrasp");
  s.dr = mean_std(dr);
  s.dtheta = mean_std(dth);
  return s;
}

double coordination_latency(const TrialLog& trial) {
  double total = 0.0;
  const auto& ticks = trial.ticks;
  for (const auto& tr : trial.transitions) {
    if (tr.to == Phase::kRelease) continue;
    // latest availability of the triggering event
    double t_event = tr.t;
    auto it = std::upper_bound(ticks.begin(), ticks.end(), tr.t, [](double v, const TickRecord& r) { return v < r.t; });
    while (it != ticks.begin()) {
      --it;
      if (std::find(it->events.begin(), it->events.end(), tr.trigger) != it->events.end()) {
        t_event = it->t;
        break;
      }
    }
    // first motion at or after the transition
    auto j = std::lower_bound(ticks.begin(), ticks.end(), tr.t, [](const TickRecord& r, double v) { return r.t < v; });
    for (; j != ticks.end(); ++j) {
      if (j == ticks.begin()) continue;
      const auto& prev = *(j - 1);
      const double speed = (j->ee - prev.ee).norm() / (j->t - prev.t);
      if (speed > kOnsetSpeed) {
        total += j->t - t_event;
        break;
      }
    }
  }
  return total;
}

std::optional<double> grasp_correction(const TrialLog& trial) {
  std::optional<double> start, end;
  for (const auto& tr : trial.transitions) {
    if (!start && tr.to == Phase::kManipulate) {
      start = tr.t;
    } else if (start && !end && tr.from == Phase::kManipulate && tr.to == Phase::kRelease) {
      end = tr.t;
    }
  }
  if (!start) return std::nullopt;
  const double stop = end ? *end : (trial.ticks.empty() ? *start : trial.ticks.back().t);
  double total = 0.0;
  const ContactSample* prev = nullptr;
  for (const auto& c : trial.contacts) {
    if (c.t < *start || c.t > stop) continue;
    if (prev) total += 0.5 * (std::abs(c.left_mm - prev->left_mm) + std::abs(c.right_mm - prev->right_mm));
    prev = &c;
  }
  return total;
}

std::vector<Vec3> resample_path(const TrialLog& trial, int n) {
  if (trial.ticks.empty()) throw InvalidInput("trial has no ticks");
  if (n < 2) throw InvalidInput("resample count must be at least 2");
  const auto& ticks = trial.ticks;
  const double t0 = ticks.front().t, t1 = ticks.back().t;
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(n));
  std::size_t j = 0;
  for (int k = 0; k < n; ++k) {
    const double t = t0 + (t1 - t0) * static_cast<double>(k) / static_cast<double>(n - 1);
    while (j + 1 < ticks.size() && ticks[j + 1].t < t) ++j;
    if (j + 1 >= ticks.size() || t <= ticks[j].t) {
      out.push_back(j + 1 >= ticks.size() ? ticks.back().ee : ticks[j].ee);
      continue;
    }
    const double s = (t - ticks[j].t) / (ticks[j + 1].t - ticks[j].t);
    out.push_back(ticks[j].ee + s * (ticks[j + 1].ee - ticks[j].ee));
  }
  return out;
}

double path_length(const std::vector<Vec3>& path) {
  double l = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) l += (path[i] - path[i - 1]).norm();
  return l;
}

double cumulative_posture_deviation(const std::vector<TrialLog>& trials) {
  if (trials.size() < 2) throw InvalidInput("posture deviation needs at least two trials");
  std::vector<std::vector<Vec3>> paths;
  for (const auto& t : trials) paths.push_back(resample_path(t));
  std::vector<double> ratios;
  for (std::size_t i = 0; i + 1 < paths.size(); ++i) {
    const auto& a = paths[i];
    const auto& b = paths[i + 1];
    const double len = 0.5 * (path_length(a) + path_length(b));
    if (!(len > 1e-12)) continue;
    double ss = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) ss += (a[k] - b[k]).squaredNorm();
    ratios.push_back(std::sqrt(ss / static_cast<double>(a.size())) / len);
  }
  if (ratios.empty()) return 0.0;
  return 100.0 * std::accumulate(ratios.begin(), ratios.end(), 0.0) / static_cast<double>(ratios.size());
}

double task_repeatability(const std::vector<TrialLog>& trials, double workspace_diagonal) {
  if (trials.size() < 2) throw InvalidInput("task repeatability needs at least two trials");
  if (!(workspace_diagonal > 0.0)) throw InvalidInput("workspace diagonal must be positive");
  std::vector<std::vector<Vec3>> paths;
  for (const auto& t : trials) paths.push_back(resample_path(t));
  double sum = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    for (std::size_t j = i + 1; j < paths.size(); ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < paths[i].size(); ++k) d += (paths[i][k] - paths[j][k]).norm();
      sum += d / static_cast<double>(paths[i].size());
      ++pairs;
    }
  }
  return std::clamp(1.0 - (sum / pairs) / workspace_diagonal, 0.0, 1.0);
}

// --- report ------------------------------------------------------------------------

MetricsReport compute_report(const std::vector<TrialLog>& trials, double workspace_diagonal) {
  MetricsReport r;
  r.trials = static_cast<int>(trials.size());
  r.workspace_diagonal = workspace_diagonal;
  if (!trials.empty()) r.task = trials.front().task;
  r.approach = approach_adaptation(trials);
  if (r.approach.excluded > 0) {
    r.warnings.push_back(std::to_string(r.approach.excluded) + " trial(s) without Homing/PreGrasp excluded");
  }
  std::vector<double> lat, corr;
  for (const auto& t : trials) {
    lat.push_back(coordination_latency(t));
    if (const auto c = grasp_correction(t)) corr.push_back(*c);
  }
  r.latency = mean_std(lat);
  if (!corr.empty()) r.grasp_correction = mean_std(corr);
  r.deviation_pct = cumulative_posture_deviation(trials);
  r.repeatability = task_repeatability(trials, workspace_diagonal);
  return r;
}

namespace {

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }

}  // namespace

std::string report_table(const MetricsReport& r) {
  std::ostringstream out;
  const std::size_t w = 40;
  out << "scenario: " << r.scenario << "  task: " << r.task << "  trials: " << r.trials << "  seed: " << r.seed << "\n";
  out << pad("Metric", w) << "mu          sigma\n";
  out << std::string(w + 24, '-') << "\n";
  out << pad("Approach adaptation  dr (m)", w) << pad(fixed(r.approach.dr.mean, 4), 12) << fixed(r.approach.dr.std, 4)
      << "\n";
  out << pad("Approach adaptation  dtheta (rad)", w) << pad(fixed(r.approach.dtheta.mean, 4), 12)
      << fixed(r.approach.dtheta.std, 4) << "\n";
  out << pad("Coordination latency (s)", w) << pad(fixed(r.latency.mean, 4), 12) << fixed(r.latency.std, 4) << "\n";
  out << pad("Grasp correction (mm)", w);
  if (r.grasp_correction) {
    out << pad(fixed(r.grasp_correction->mean, 4), 12) << fixed(r.grasp_correction->std, 4) << "\n";
  } else {
    out << "absent\n";
  }
  out << pad("Cumulative posture deviation (%)", w) << fixed(r.deviation_pct, 4) << "\n";
  out << pad("Task repeatability C", w) << fixed(r.repeatability, 4) << "\n";
  out << "\n"
      << "dr, dtheta: polar change of the end effector about the base, homing to pre-grasp.\n"
      << "latency: trigger event to first end-effector speed above 1e-3 m/s, summed per trial.\n"
      << "grasp correction: jaw contact travel from grasp establishment to release.\n"
      << "deviation: RMS gap of consecutive trials over mean path length (200 samples).\n"
      << "C: 1 - mean pairwise path distance / workspace diagonal ("
      << fixed(r.workspace_diagonal, 4) << " m).\n";
  for (const auto& wmsg : r.warnings) out << "warning: " << wmsg << "\n";
  return out.str();
}

std::string report_json(const MetricsReport& r) {
  using nlohmann::json;
  auto ms = [](const MeanStd& m) { return json{{"mean", m.mean}, {"std", m.std}, {"count", m.count}}; };
  json doc;
  doc["schema"] = "report.v1";
  doc["scenario"] = r.scenario;
  doc["task"] = r.task;
  doc["seed"] = r.seed;
  doc["trials"] = r.trials;
  doc["workspace_diagonal_m"] = r.workspace_diagonal;
  doc["metrics"]["approach_adaptation"] = {{"dr_m", ms(r.approach.dr)}, {"dtheta_rad", ms(r.approach.dtheta)},
                                           {"excluded", r.approach.excluded}};
  doc["metrics"]["coordination_latency_s"] = ms(r.latency);
  doc["metrics"]["grasp_correction_mm"] = r.grasp_correction ? ms(*r.grasp_correction) : json(nullptr);
  doc["metrics"]["cumulative_posture_deviation_pct"] = r.deviation_pct;
  doc["metrics"]["task_repeatability_C"] = r.repeatability;
  doc["definitions"] = {
      {"approach_adaptation", "polar change (r = |p|, theta = atan2(y, x)) of the end effector, pre-grasp minus homing"},
      {"coordination_latency", "sum over transitions of trigger event to end-effector speed > 1e-3 m/s"},
      {"grasp_correction", "sum of 1/2 (|d left| + |d right|) jaw contact travel, grasp to release, mm"},
      {"cumulative_posture_deviation", "mean over consecutive pairs of RMS gap / mean path length x 100, N = 200"},
      {"task_repeatability", "1 - mean pairwise mean distance / workspace diagonal, clamped to [0, 1]"}};
  doc["warnings"] = r.warnings;
  return doc.dump(2) + "\n";
}

}  // namespace isot
