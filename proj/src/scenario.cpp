#include "isot/scenario.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "isot/errors.hpp"

namespace isot {

using nlohmann::json;
namespace fs = std::filesystem;

bool WorkspaceBox::contains(const Vec3& p, double margin) const {
  return (p.array() >= min.array() - margin).all() && (p.array() <= max.array() + margin).all();
}

Mat4 Scenario::hand_camera() const {
  Mat4 T = Mat4::Identity();
  T.block<3, 1>(0, 3) = hand_camera_offset;
  return T;
}

namespace {

enum class Bound { kAny, kPositive, kNonNegative };

// Strict object reader: every key must be consumed, errors carry JSON pointers.
class Obj {
 public:
  Obj(const json& j, std::string ptr) : j_(j), ptr_(std::move(ptr)) {
    if (!j_.is_object()) throw SchemaError(where(), "must be an object");
  }

  std::string at(const std::string& key) const { return ptr_ + "/" + key; }
  std::string where() const { return ptr_.empty() ? "/" : ptr_; }
  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  double num(const std::string& key, double def, Bound b = Bound::kAny) {
    if (!has(key)) return def;
    const json& v = raw(key);
    if (!v.is_number()) throw SchemaError(at(key), "not a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw SchemaError(at(key), "not finite");
    if (b == Bound::kPositive && !(x > 0.0)) throw SchemaError(at(key), "must be positive");
    if (b == Bound::kNonNegative && !(x >= 0.0)) throw SchemaError(at(key), "must be non-negative");
    return x;
  }

  int integer(const std::string& key, int def, int min_value) {
    if (!has(key)) return def;
    const json& v = raw(key);
    if (!v.is_number_integer() || v.get<long long>() < min_value) {
      throw SchemaError(at(key), "must be an integer >= " + std::to_string(min_value));
    }
    return v.get<int>();
  }

  std::uint64_t u64(const std::string& key, std::uint64_t def) {
    if (!has(key)) return def;
    const json& v = raw(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      throw SchemaError(at(key), "must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  std::string str(const std::string& key, const std::string& def) {
    if (!has(key)) return def;
    const json& v = raw(key);
    if (!v.is_string()) throw SchemaError(at(key), "not a string");
    return v.get<std::string>();
  }

  std::string required_str(const std::string& key) {
    if (!has(key)) throw SchemaError(at(key), "missing required field");
    const std::string s = str(key, "");
    if (s.empty()) throw SchemaError(at(key), "must not be empty");
    return s;
  }

  bool boolean(const std::string& key, bool def) {
    if (!has(key)) return def;
    const json& v = raw(key);
    if (!v.is_boolean()) throw SchemaError(at(key), "not a boolean");
    return v.get<bool>();
  }

  Vec3 vec3(const std::string& key, const Vec3& def) {
    if (!has(key)) return def;
    const json& v = raw(key);
    if (!v.is_array() || v.size() != 3) throw SchemaError(at(key), "must be an array of 3 numbers");
    Vec3 out;
    for (int i = 0; i < 3; ++i) {
      if (!v[static_cast<std::size_t>(i)].is_number()) throw SchemaError(at(key) + "/" + std::to_string(i), "not a number");
      out[i] = v[static_cast<std::size_t>(i)].get<double>();
    }
    if (!out.allFinite()) throw SchemaError(at(key), "not finite");
    return out;
  }

  std::optional<Obj> child(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return Obj(raw(key), at(key));
  }

  const json& array(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_array()) throw SchemaError(at(key), "must be an array");
    return v;
  }

  void done() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw SchemaError(at(key), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string ptr_;
  std::set<std::string> seen_;
};

json vec_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

std::string resolve(const std::string& base_dir, const std::string& ref) {
  const fs::path p(ref);
  return p.is_absolute() ? p.string() : (fs::path(base_dir) / p).lexically_normal().string();
}

HeightMode height_mode_from_string(const std::string& s, const std::string& where) {
  if (s == "absolute") return HeightMode::kAbsolute;
  if (s == "offset") return HeightMode::kOffset;
  throw SchemaError(where, "expected 'absolute' or 'offset'");
}

}  // namespace

Scenario scenario_from_json_text(const std::string& text, const std::string& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("byte " + std::to_string(e.byte), e.what());
  }
  Obj root(doc, "");
  Scenario s;
  s.source_dir = base_dir;
  if (root.str("schema", "scenario.v1") != "scenario.v1") throw SchemaError("/schema", "expected scenario.v1");
  s.name = root.required_str("name");
  s.task = root.str("task", s.name);

  s.chain_ref = root.required_str("chain");
  {
    const std::string path = resolve(base_dir, s.chain_ref);
    if (!fs::exists(path)) throw SchemaError("/chain", "referenced file does not exist: " + path);
    s.chain = load_chain(path);
  }
  s.solver_ref = root.required_str("solver");
  {
    const std::string path = resolve(base_dir, s.solver_ref);
    if (!fs::exists(path)) throw SchemaError("/solver", "referenced file does not exist: " + path);
    s.solver = load_solver_config(path);
    if (s.solver.qdot_max.size() != s.chain.dof()) {
      throw SchemaError("/solver", "joint rate bounds do not match the chain");
    }
  }

  s.trials = root.integer("trials", s.trials, 1);
  s.seed = root.u64("seed", s.seed);
  s.time_limit = root.num("time_limit", s.time_limit, Bound::kPositive);

  if (auto r = root.child("rates")) {
    s.rates.control = r->integer("control", s.rates.control, 1);
    s.rates.tracking = r->integer("tracking", s.rates.tracking, 1);
    s.rates.detection = r->integer("detection", s.rates.detection, 1);
    if (s.rates.control % s.rates.tracking != 0 || s.rates.control % s.rates.detection != 0) {
      throw SchemaError("/rates", "perception rates must divide the control rate");
    }
    r->done();
  }
  if (auto w = root.child("workspace")) {
    s.workspace.min = w->vec3("min", s.workspace.min);
    s.workspace.max = w->vec3("max", s.workspace.max);
    if ((s.workspace.min.array() >= s.workspace.max.array()).any()) throw SchemaError("/workspace", "min must be below max");
    w->done();
  }
  if (auto f = root.child("fsm")) {
    auto& c = s.fsm;
    c.withdraw_timeout = f->num("withdraw_timeout", c.withdraw_timeout, Bound::kPositive);
    c.grasp_timeout = f->num("grasp_timeout", c.grasp_timeout, Bound::kPositive);
    c.staleness_horizon = f->num("staleness_horizon", c.staleness_horizon, Bound::kPositive);
    c.contact_force_threshold = f->num("contact_force_threshold", c.contact_force_threshold, Bound::kPositive);
    c.grip_target = f->num("grip_target", c.grip_target, Bound::kPositive);
    c.regrip_factor = f->num("regrip_factor", c.regrip_factor, Bound::kPositive);
    c.height_mode = height_mode_from_string(f->str("height_mode", "absolute"), f->at("height_mode"));
    c.posture_displacement = f->num("posture_displacement", c.posture_displacement, Bound::kPositive);
    c.posture_min_height = f->num("posture_min_height", c.posture_min_height, Bound::kNonNegative);
    c.posture_max_reach = f->num("posture_max_reach", c.posture_max_reach, Bound::kPositive);
    c.posture_max_speed = f->num("posture_max_speed", c.posture_max_speed, Bound::kPositive);
    c.home_tolerance = f->num("home_tolerance", c.home_tolerance, Bound::kPositive);
    c.open_palm_frames = f->integer("open_palm_frames", c.open_palm_frames, 1);
    f->done();
  }
  if (s.fsm.grip_target < s.fsm.contact_force_threshold) {
    throw SchemaError("/fsm/grip_target", "must not be below the contact force threshold");
  }
  if (auto f = root.child("friction")) {
    s.friction.mu = f->num("mu", s.friction.mu, Bound::kPositive);
    try {
      s.friction.convention = friction_convention_from_string(f->str("convention", to_string(s.friction.convention)));
    } catch (const InvalidInput& e) {
      throw SchemaError(f->at("convention"), e.what());
    }
    f->done();
  }
  s.friction.contact_force_threshold = s.fsm.contact_force_threshold;
  if (auto g = root.child("gripper")) {
    s.gripper.aperture = g->num("aperture", s.gripper.aperture, Bound::kPositive);
    s.gripper.contact_stiffness = g->num("contact_stiffness", s.gripper.contact_stiffness, Bound::kPositive);
    s.gripper.pad_noise_mm = g->num("pad_noise_mm", s.gripper.pad_noise_mm, Bound::kNonNegative);
    s.gripper.arrive_tolerance = g->num("arrive_tolerance", s.gripper.arrive_tolerance, Bound::kPositive);
    s.gripper.capture_radius = g->num("capture_radius", s.gripper.capture_radius, Bound::kPositive);
    g->done();
  }
  if (auto c = root.child("controller")) {
    s.controller.error_clamp = c->num("error_clamp", s.controller.error_clamp, Bound::kPositive);
    s.controller.settle_position = c->num("settle_position", s.controller.settle_position, Bound::kPositive);
    s.controller.settle_speed = c->num("settle_speed", s.controller.settle_speed, Bound::kPositive);
    c->done();
  }
  if (auto c = root.child("tracking_camera")) {
    s.tracking_eye = c->vec3("eye", s.tracking_eye);
    s.tracking_target = c->vec3("target", s.tracking_target);
    auto& in = s.tracking_camera.intrinsics;
    in.f = c->num("f", in.f, Bound::kPositive);
    in.cx = c->num("cx", in.cx);
    in.cy = c->num("cy", in.cy);
    in.sx = c->num("sx", in.sx, Bound::kPositive);
    in.sy = c->num("sy", in.sy, Bound::kPositive);
    c->done();
  }
  if ((s.tracking_eye - s.tracking_target).norm() < 1e-9) throw SchemaError("/tracking_camera", "eye equals target");
  s.tracking_camera.extrinsics = CameraExtrinsics::look_at(s.tracking_eye, s.tracking_target);
  if (auto c = root.child("hand_camera")) {
    s.hand_camera_offset = c->vec3("offset", s.hand_camera_offset);
    c->done();
  }
  if (auto p = root.child("perception")) {
    auto& d = s.detection;
    d.leaf = p->num("leaf", d.leaf, Bound::kPositive);
    d.outlier_k = p->integer("outlier_k", d.outlier_k, 1);
    d.outlier_sigma = p->num("outlier_sigma", d.outlier_sigma, Bound::kPositive);
    d.plane_thresh = p->num("plane_thresh", d.plane_thresh, Bound::kPositive);
    d.ransac_iterations = p->integer("ransac_iterations", d.ransac_iterations, 1);
    d.cluster_xi = p->num("cluster_xi", d.cluster_xi, Bound::kPositive);
    d.cluster_min_points = p->integer("cluster_min_points", d.cluster_min_points, 1);
    auto& c = s.cloud;
    c.fov = p->num("fov", c.fov, Bound::kPositive);
    c.table_spacing = p->num("table_spacing", c.table_spacing, Bound::kPositive);
    c.object_spacing = p->num("object_spacing", c.object_spacing, Bound::kPositive);
    c.noise = p->num("noise", c.noise, Bound::kNonNegative);
    c.max_range = p->num("max_range", c.max_range, Bound::kPositive);
    p->done();
  }
  if (auto t = root.child("tactile")) {
    auto& c = s.tactile;
    c.calibration.k_tangential = t->num("k_tangential", c.calibration.k_tangential, Bound::kPositive);
    c.calibration.k_normal = t->num("k_normal", c.calibration.k_normal, Bound::kPositive);
    c.calibration.noise_fraction = t->num("noise_fraction", c.calibration.noise_fraction, Bound::kNonNegative);
    c.calibration.shear_max = t->num("shear_max", c.calibration.shear_max, Bound::kPositive);
    c.calibration.normal_max = t->num("normal_max", c.calibration.normal_max, Bound::kPositive);
    c.calibration_seed = t->u64("calibration_seed", c.calibration_seed);
    c.train_samples = t->integer("train_samples", c.train_samples, 2);
    c.test_samples = t->integer("test_samples", c.test_samples, 1);
    c.training.seed = t->u64("training_seed", c.training.seed);
    c.training.max_epochs = t->integer("epochs", c.training.max_epochs, 1);
    c.training.learning_rate = t->num("learning_rate", c.training.learning_rate, Bound::kPositive);
    t->done();
  }
  {
    if (!root.has("leader")) throw SchemaError("/leader", "missing required field");
    Obj l(root.raw("leader"), "/leader");
    try {
      s.leader.side = side_from_string(l.str("side", "right"));
    } catch (const InvalidInput& e) {
      throw SchemaError("/leader/side", e.what());
    }
    s.leader.body_radius = l.num("body_radius", s.leader.body_radius, Bound::kPositive);
    s.leader.body_angle = l.num("body_angle", s.leader.body_angle);
    s.leader.wrist_noise = l.num("wrist_noise", s.leader.wrist_noise, Bound::kNonNegative);
    s.filter_window = l.integer("filter_window", s.filter_window, 1);
    if (!l.has("keyframes")) throw SchemaError("/leader/keyframes", "missing required field");
    const json& kfs = l.array("keyframes");
    if (kfs.empty()) throw SchemaError("/leader/keyframes", "needs at least one keyframe");
    for (std::size_t i = 0; i < kfs.size(); ++i) {
      Obj k(kfs[i], "/leader/keyframes/" + std::to_string(i));
      LeaderKeyframe kf;
      if (!k.has("t")) throw SchemaError(k.at("t"), "missing required field");
      kf.t = k.num("t", 0.0, Bound::kNonNegative);
      if (!k.has("wrist")) throw SchemaError(k.at("wrist"), "missing required field");
      kf.wrist = k.vec3("wrist", Vec3::Zero());
      kf.open_palm = k.boolean("open_palm", false);
      kf.visible = k.boolean("visible", true);
      k.done();
      if (!s.leader.keyframes.empty() && !(kf.t > s.leader.keyframes.back().t)) {
        throw SchemaError(k.at("t"), "keyframe times must be strictly increasing");
      }
      s.leader.keyframes.push_back(kf);
    }
    l.done();
  }
  if (root.has("objects")) {
    const json& objs = root.array("objects");
    for (std::size_t i = 0; i < objs.size(); ++i) {
      Obj o(objs[i], "/objects/" + std::to_string(i));
      ObjectSpec spec;
      spec.object.shape = o.str("shape", spec.object.shape);
      spec.object.dims = o.vec3("dims", spec.object.dims);
      if ((spec.object.dims.array() <= 0.0).any()) throw SchemaError(o.at("dims"), "must be positive");
      if (!o.has("position")) throw SchemaError(o.at("position"), "missing required field");
      spec.object.position = o.vec3("position", Vec3::Zero());
      spec.object.yaw = o.num("yaw", 0.0);
      spec.mass = o.num("mass", spec.mass, Bound::kPositive);
      o.done();
      s.objects.push_back(spec);
    }
  }
  if (auto v = root.child("variation")) {
    s.variation.object_xy = v->num("object_xy", s.variation.object_xy, Bound::kNonNegative);
    s.variation.object_yaw = v->num("object_yaw", s.variation.object_yaw, Bound::kNonNegative);
    v->done();
  }
  if (root.has("faults")) {
    const json& fs_ = root.array("faults");
    for (std::size_t i = 0; i < fs_.size(); ++i) {
      Obj f(fs_[i], "/faults/" + std::to_string(i));
      FaultSpec spec;
      spec.type = f.str("type", spec.type);
      if (spec.type != "load") throw SchemaError(f.at("type"), "only 'load' faults are supported");
      try {
        spec.phase = phase_from_string(f.str("phase", to_string(spec.phase)));
      } catch (const InvalidInput& e) {
        throw SchemaError(f.at("phase"), e.what());
      }
      spec.after = f.num("after", spec.after, Bound::kNonNegative);
      spec.mass = f.num("mass", spec.mass, Bound::kPositive);
      f.done();
      s.faults.push_back(spec);
    }
  }
  if (auto e = root.child("expect")) {
    if (e->has("phase_path")) {
      const json& path = e->array("phase_path");
      for (std::size_t i = 0; i < path.size(); ++i) {
        const std::string where = "/expect/phase_path/" + std::to_string(i);
        if (!path[i].is_string()) throw SchemaError(where, "not a string");
        try {
          s.expected_path.push_back(phase_from_string(path[i].get<std::string>()));
        } catch (const InvalidInput& ex) {
          throw SchemaError(where, ex.what());
        }
      }
    }
    e->done();
  }
  root.done();
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError(path, "cannot open scenario file");
  std::stringstream ss;
  ss << in.rdbuf();
  return scenario_from_json_text(ss.str(), fs::path(path).parent_path().string());
}

std::string scenario_to_json_text(const Scenario& s) {
  json doc;
  doc["schema"] = "scenario.v1";
  doc["name"] = s.name;
  doc["task"] = s.task;
  doc["chain"] = s.chain_ref;
  doc["solver"] = s.solver_ref;
  doc["trials"] = s.trials;
  doc["seed"] = s.seed;
  doc["time_limit"] = s.time_limit;
  doc["rates"] = {{"control", s.rates.control}, {"tracking", s.rates.tracking}, {"detection", s.rates.detection}};
  doc["workspace"] = {{"min", vec_json(s.workspace.min)}, {"max", vec_json(s.workspace.max)}};
  const auto& f = s.fsm;
  doc["fsm"] = {{"withdraw_timeout", f.withdraw_timeout},
                {"grasp_timeout", f.grasp_timeout},
                {"staleness_horizon", f.staleness_horizon},
                {"contact_force_threshold", f.contact_force_threshold},
                {"grip_target", f.grip_target},
                {"regrip_factor", f.regrip_factor},
                {"height_mode", f.height_mode == HeightMode::kAbsolute ? "absolute" : "offset"},
                {"posture_displacement", f.posture_displacement},
                {"posture_min_height", f.posture_min_height},
                {"posture_max_reach", f.posture_max_reach},
                {"posture_max_speed", f.posture_max_speed},
                {"home_tolerance", f.home_tolerance},
                {"open_palm_frames", f.open_palm_frames}};
  doc["friction"] = {{"mu", s.friction.mu}, {"convention", to_string(s.friction.convention)}};
  doc["gripper"] = {{"aperture", s.gripper.aperture},
                    {"contact_stiffness", s.gripper.contact_stiffness},
                    {"pad_noise_mm", s.gripper.pad_noise_mm},
                    {"arrive_tolerance", s.gripper.arrive_tolerance},
                    {"capture_radius", s.gripper.capture_radius}};
  doc["controller"] = {{"error_clamp", s.controller.error_clamp},
                       {"settle_position", s.controller.settle_position},
                       {"settle_speed", s.controller.settle_speed}};
  const auto& in = s.tracking_camera.intrinsics;
  doc["tracking_camera"] = {{"eye", vec_json(s.tracking_eye)}, {"target", vec_json(s.tracking_target)},
                            {"f", in.f}, {"cx", in.cx}, {"cy", in.cy}, {"sx", in.sx}, {"sy", in.sy}};
  doc["hand_camera"] = {{"offset", vec_json(s.hand_camera_offset)}};
  const auto& d = s.detection;
  const auto& c = s.cloud;
  doc["perception"] = {{"leaf", d.leaf},
                       {"outlier_k", d.outlier_k},
                       {"outlier_sigma", d.outlier_sigma},
                       {"plane_thresh", d.plane_thresh},
                       {"ransac_iterations", d.ransac_iterations},
                       {"cluster_xi", d.cluster_xi},
                       {"cluster_min_points", d.cluster_min_points},
                       {"fov", c.fov},
                       {"table_spacing", c.table_spacing},
                       {"object_spacing", c.object_spacing},
                       {"noise", c.noise},
                       {"max_range", c.max_range}};
  const auto& t = s.tactile;
  doc["tactile"] = {{"k_tangential", t.calibration.k_tangential},
                    {"k_normal", t.calibration.k_normal},
                    {"noise_fraction", t.calibration.noise_fraction},
                    {"shear_max", t.calibration.shear_max},
                    {"normal_max", t.calibration.normal_max},
                    {"calibration_seed", t.calibration_seed},
                    {"train_samples", t.train_samples},
                    {"test_samples", t.test_samples},
                    {"training_seed", t.training.seed},
                    {"epochs", t.training.max_epochs},
                    {"learning_rate", t.training.learning_rate}};
  json kfs = json::array();
  for (const auto& k : s.leader.keyframes) {
    kfs.push_back({{"t", k.t}, {"wrist", vec_json(k.wrist)}, {"open_palm", k.open_palm}, {"visible", k.visible}});
  }
  doc["leader"] = {{"side", s.leader.side == Side::kRight ? "right" : "left"},
                   {"body_radius", s.leader.body_radius},
                   {"body_angle", s.leader.body_angle},
                   {"wrist_noise", s.leader.wrist_noise},
                   {"filter_window", s.filter_window},
                   {"keyframes", kfs}};
  json objs = json::array();
  for (const auto& o : s.objects) {
    objs.push_back({{"shape", o.object.shape},
                    {"dims", vec_json(o.object.dims)},
                    {"position", vec_json(o.object.position)},
                    {"yaw", o.object.yaw},
                    {"mass", o.mass}});
  }
  doc["objects"] = objs;
  doc["variation"] = {{"object_xy", s.variation.object_xy}, {"object_yaw", s.variation.object_yaw}};
  json faults = json::array();
  for (const auto& fl : s.faults) {
    faults.push_back({{"type", fl.type}, {"phase", to_string(fl.phase)}, {"after", fl.after}, {"mass", fl.mass}});
  }
  doc["faults"] = faults;
  json path = json::array();
  for (Phase p : s.expected_path) path.push_back(to_string(p));
  doc["expect"] = {{"phase_path", path}};
  return doc.dump(2) + "\n";
}

}  // namespace isot
