#include "isot/perception.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "isot/errors.hpp"

namespace isot {

// --- camera model ---------------------------------------------------------------

void CameraIntrinsics::validate() const {
  if (!(f > 0.0) || !(sx > 0.0) || !(sy > 0.0)) throw InvalidInput("camera f, s_x, s_y must be positive");
}

void CameraExtrinsics::validate() const {
  if ((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9 || std::abs(R.determinant() - 1.0) > 1e-9) {
    throw InvalidInput("camera rotation is not in SO(3)");
  }
  if (!l.allFinite()) throw InvalidInput("camera translation is not finite");
}

Mat4 CameraExtrinsics::matrix() const {
  Mat4 T = Mat4::Identity();
  T.topLeftCorner<3, 3>() = R;
  T.topRightCorner<3, 1>() = l;
  return T;
}

CameraExtrinsics CameraExtrinsics::look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 z = (target - eye).normalized();
  Vec3 down = -Vec3::UnitZ();
  Vec3 x = down.cross(z);
  if (x.norm() < 1e-9) x = Vec3::UnitX().cross(z);
  x.normalize();
  const Vec3 y = z.cross(x);
  CameraExtrinsics e;
  e.R.col(0) = x;
  e.R.col(1) = y;
  e.R.col(2) = z;
  e.l = eye;
  return e;
}

Vec3 depth_to_camera(const Pixel& px, const CameraIntrinsics& intr) {
  intr.validate();
  if (!(px.depth > 0.0)) throw OccludedPoint("pixel depth must be positive");
  return {(px.ix - intr.cx) * px.depth / (intr.f * intr.sx), (px.iy - intr.cy) * px.depth / (intr.f * intr.sy),
          px.depth};
}

Pixel camera_to_pixel(const Vec3& p, const CameraIntrinsics& intr) {
  intr.validate();
  if (!(p[2] > 0.0)) throw OccludedPoint("point is behind the camera");
  return {intr.cx + p[0] * intr.f * intr.sx / p[2], intr.cy + p[1] * intr.f * intr.sy / p[2], p[2]};
}

Vec3 camera_to_base(const Vec3& p_cam, const CameraExtrinsics& extr) { return extr.R * p_cam + extr.l; }

Vec3 base_to_camera(const Vec3& p_base, const CameraExtrinsics& extr) {
  return extr.R.transpose() * (p_base - extr.l);
}

// --- skeleton ---------------------------------------------------------------------

const char* joint_name(Joint j) {
  static constexpr std::array<const char*, kSkeletonJoints> names{
      "nose", "neck", "r_shoulder", "r_elbow", "r_wrist", "l_shoulder", "l_elbow", "l_wrist", "r_hip",
      "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle", "r_eye", "l_eye", "r_ear", "l_ear"};
  return names[static_cast<std::size_t>(j)];
}

Side side_from_string(const std::string& s) {
  if (s == "left") return Side::kLeft;
  if (s == "right") return Side::kRight;
  throw InvalidInput("side must be left or right, got '" + s + "'");
}

LeaderKeyframe LeaderScript::sample(double t) const {
  if (keyframes.empty()) throw InvalidInput("leader script has no keyframes");
  if (t <= keyframes.front().t) return keyframes.front();
  for (std::size_t i = 0; i + 1 < keyframes.size(); ++i) {
    const auto& a = keyframes[i];
    const auto& b = keyframes[i + 1];
    if (t < b.t) {
      LeaderKeyframe out = a;
      out.t = t;
      if (t == a.t) return a;
      const double s = (t - a.t) / (b.t - a.t);
      out.wrist = a.wrist + s * (b.wrist - a.wrist);
      return out;
    }
  }
  LeaderKeyframe out = keyframes.back();
  out.t = std::max(t, out.t);
  return out;
}

double LeaderScript::duration() const { return keyframes.empty() ? 0.0 : keyframes.back().t; }

SkeletonFrame synth_skeleton(const LeaderScript& script, const TrackingCamera& camera, double t,
                             std::uint64_t noise_seed) {
  const LeaderKeyframe key = script.sample(t);
  const Vec3 anchor(script.body_radius * std::cos(script.body_angle), script.body_radius * std::sin(script.body_angle),
                    0.0);
  const Vec3 forward = -Vec3(anchor[0], anchor[1], 0.0).normalized();
  const Vec3 up = Vec3::UnitZ();
  const Vec3 right = forward.cross(up);
  const double sign = script.side == Side::kRight ? 1.0 : -1.0;

  Vec3 wrist = key.wrist;
  if (script.wrist_noise > 0.0) {
    std::mt19937_64 rng(noise_seed);
    std::uniform_real_distribution<double> u(-script.wrist_noise, script.wrist_noise);
    wrist += Vec3(u(rng), u(rng), u(rng));
  }

  std::array<Vec3, kSkeletonJoints> p;
  auto at = [&](Joint j) -> Vec3& { return p[static_cast<std::size_t>(j)]; };
  at(Joint::kNeck) = anchor + 0.35 * up;
  at(Joint::kNose) = at(Joint::kNeck) + 0.2 * up + 0.06 * forward;
  at(Joint::kREye) = at(Joint::kNose) + 0.04 * up + 0.03 * right - 0.02 * forward;
  at(Joint::kLEye) = at(Joint::kNose) + 0.04 * up - 0.03 * right - 0.02 * forward;
  at(Joint::kREar) = at(Joint::kNose) + 0.02 * up + 0.07 * right - 0.08 * forward;
  at(Joint::kLEar) = at(Joint::kNose) + 0.02 * up - 0.07 * right - 0.08 * forward;
  at(Joint::kRShoulder) = at(Joint::kNeck) + 0.18 * right;
  at(Joint::kLShoulder) = at(Joint::kNeck) - 0.18 * right;
  at(Joint::kRHip) = anchor - 0.15 * up + 0.1 * right;
  at(Joint::kLHip) = anchor - 0.15 * up - 0.1 * right;
  at(Joint::kRKnee) = at(Joint::kRHip) - 0.42 * up;
  at(Joint::kLKnee) = at(Joint::kLHip) - 0.42 * up;
  at(Joint::kRAnkle) = at(Joint::kRKnee) - 0.4 * up;
  at(Joint::kLAnkle) = at(Joint::kLKnee) - 0.4 * up;

  const Joint active_shoulder = sign > 0 ? Joint::kRShoulder : Joint::kLShoulder;
  const Joint active_elbow = sign > 0 ? Joint::kRElbow : Joint::kLElbow;
  const Joint active_wrist = sign > 0 ? Joint::kRWrist : Joint::kLWrist;
  const Joint idle_shoulder = sign > 0 ? Joint::kLShoulder : Joint::kRShoulder;
  const Joint idle_elbow = sign > 0 ? Joint::kLElbow : Joint::kRElbow;
  const Joint idle_wrist = sign > 0 ? Joint::kLWrist : Joint::kRWrist;
  at(active_wrist) = wrist;
  at(active_elbow) = 0.5 * (at(active_shoulder) + wrist) - 0.08 * up;
  at(idle_elbow) = at(idle_shoulder) - 0.28 * up;
  at(idle_wrist) = at(idle_elbow) - 0.25 * up + 0.05 * forward;

  SkeletonFrame frame;
  frame.timestamp = t;
  frame.open_palm = key.open_palm;
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& j = frame.joints[i];
    const Vec3 pc = base_to_camera(p[i], camera.extrinsics);
    if (!(pc[2] > 0.0)) {
      j.occluded = true;
      continue;
    }
    j.pixel = camera_to_pixel(pc, camera.intrinsics);
    j.base = camera_to_base(depth_to_camera(j.pixel, camera.intrinsics), camera.extrinsics);
  }
  if (!key.visible) {
    for (Joint j : {active_elbow, active_wrist}) {
      frame[j].occluded = true;
      frame[j].base = Vec3::Zero();
    }
  }
  return frame;
}

ArmFilter::ArmFilter(Side side, int window, double horizon)
    : side_(side), window_(static_cast<std::size_t>(window)), horizon_(horizon) {
  if (window < 1) throw InvalidInput("filter window must be at least 1");
  if (!(horizon >= 0.0)) throw InvalidInput("staleness horizon must be non-negative");
  last_.lost = true;
}

ArmTrack ArmFilter::update(const SkeletonFrame& frame) {
  const bool right = side_ == Side::kRight;
  const auto& wrist = frame[right ? Joint::kRWrist : Joint::kLWrist];
  const auto& elbow = frame[right ? Joint::kRElbow : Joint::kLElbow];
  const auto& shoulder = frame[right ? Joint::kRShoulder : Joint::kLShoulder];

  ArmTrack out = last_;
  out.fresh = !wrist.occluded;
  if (!wrist.occluded) {
    history_.push_back(wrist.base);
    while (history_.size() > window_) history_.pop_front();
    // mean as offset from the oldest sample, so a constant input is reproduced exactly
    const Vec3 ref = history_.front();
    Vec3 acc = Vec3::Zero();
    for (const auto& h : history_) acc += h - ref;
    out.wrist = ref + acc / static_cast<double>(history_.size());
    last_seen_ = frame.timestamp;
    out.staleness = 0.0;
    out.lost = false;
  } else {
    out.staleness = last_seen_ ? frame.timestamp - *last_seen_ : std::numeric_limits<double>::infinity();
    out.lost = out.staleness > horizon_;
    if (out.lost) history_.clear();
  }
  if (!elbow.occluded) out.elbow = elbow.base;
  if (!shoulder.occluded) out.shoulder = shoulder.base;
  last_ = out;
  return out;
}

// --- point clouds -------------------------------------------------------------------

namespace {

using Key = std::tuple<long long, long long, long long>;

Key voxel_key(const Vec3& p, double leaf) {
  return {static_cast<long long>(std::floor(p[0] / leaf)), static_cast<long long>(std::floor(p[1] / leaf)),
          static_cast<long long>(std::floor(p[2] / leaf))};
}

struct KeyHash {
  std::size_t operator()(const Key& k) const {
    const auto [a, b, c] = k;
    std::size_t h = static_cast<std::size_t>(a) * 73856093u;
    h ^= static_cast<std::size_t>(b) * 19349663u;
    h ^= static_cast<std::size_t>(c) * 83492791u;
    return h;
  }
};

void check_finite(const PointCloud& cloud) {
  for (const auto& p : cloud.points) {
    if (!p.allFinite()) throw InvalidInput("point cloud has a non-finite coordinate");
  }
}

}  // namespace

PointCloud downsample_and_filter(const PointCloud& cloud, double leaf, int outlier_k, double outlier_sigma) {
  if (!(leaf > 0.0)) throw InvalidInput("voxel leaf must be positive");
  if (outlier_k < 1) throw InvalidInput("outlier k must be at least 1");
  check_finite(cloud);
  std::map<Key, std::pair<Vec3, int>> voxels;
  for (const auto& p : cloud.points) {
    auto& v = voxels[voxel_key(p, leaf)];
    if (v.second == 0) v.first = Vec3::Zero();
    v.first += p;
    v.second += 1;
  }
  std::vector<Vec3> pts;
  pts.reserve(voxels.size());
  for (const auto& [_, v] : voxels) pts.push_back(v.first / v.second);

  PointCloud out;
  out.timestamp = cloud.timestamp;
  if (pts.size() <= 1) {
    out.points = pts;
  } else {
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(outlier_k), pts.size() - 1);
    // Exact kNN on a uniform grid: rings of cells are added until the k-th
    // candidate distance is within the ring radius, so farther cells cannot
    // contribute a closer point.
    const double cell = 2.0 * leaf;
    std::unordered_map<Key, std::vector<int>, KeyHash> grid;
    Key lo{std::numeric_limits<long long>::max(), std::numeric_limits<long long>::max(),
           std::numeric_limits<long long>::max()};
    Key hi{std::numeric_limits<long long>::min(), std::numeric_limits<long long>::min(),
           std::numeric_limits<long long>::min()};
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Key key = voxel_key(pts[i], cell);
      grid[key].push_back(static_cast<int>(i));
      lo = {std::min(std::get<0>(lo), std::get<0>(key)), std::min(std::get<1>(lo), std::get<1>(key)),
            std::min(std::get<2>(lo), std::get<2>(key))};
      hi = {std::max(std::get<0>(hi), std::get<0>(key)), std::max(std::get<1>(hi), std::get<1>(key)),
            std::max(std::get<2>(hi), std::get<2>(key))};
    }
    const long long span = std::max({std::get<0>(hi) - std::get<0>(lo), std::get<1>(hi) - std::get<1>(lo),
                                     std::get<2>(hi) - std::get<2>(lo)});
    std::vector<double> mean_d(pts.size());
    std::vector<double> d;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto [cx, cy, cz] = voxel_key(pts[i], cell);
      d.clear();
      for (long long r = 0;; ++r) {
        const long long side = 2 * r + 1;
        if (r > span || side * side * side > static_cast<long long>(grid.size()) * 8) {
          // the cube outgrew the occupied cells: scan everything
          d.clear();
          for (std::size_t j = 0; j < pts.size(); ++j) {
            if (j != i) d.push_back((pts[i] - pts[j]).norm());
          }
          std::nth_element(d.begin(), d.begin() + static_cast<long>(k - 1), d.end());
          break;
        }
        for (long long x = cx - r; x <= cx + r; ++x) {
          for (long long y = cy - r; y <= cy + r; ++y) {
            for (long long z = cz - r; z <= cz + r; ++z) {
              if (std::max({std::abs(x - cx), std::abs(y - cy), std::abs(z - cz)}) != r) continue;
              const auto it = grid.find({x, y, z});
              if (it == grid.end()) continue;
              for (int j : it->second) {
                if (static_cast<std::size_t>(j) != i) d.push_back((pts[i] - pts[static_cast<std::size_t>(j)]).norm());
              }
            }
          }
        }
        if (d.size() >= k) {
          std::nth_element(d.begin(), d.begin() + static_cast<long>(k - 1), d.end());
          if (d[k - 1] <= static_cast<double>(r) * cell) break;
        }
      }
      std::sort(d.begin(), d.begin() + static_cast<long>(k));
      mean_d[i] = std::accumulate(d.begin(), d.begin() + static_cast<long>(k), 0.0) / static_cast<double>(k);
    }
    const double mu = std::accumulate(mean_d.begin(), mean_d.end(), 0.0) / static_cast<double>(mean_d.size());
    double var = 0.0;
    for (double v : mean_d) var += (v - mu) * (v - mu);
    const double sigma = std::sqrt(var / static_cast<double>(mean_d.size() - 1));
    const double cut = mu + outlier_sigma * sigma;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (mean_d[i] <= cut) out.points.push_back(pts[i]);
    }
  }
  if (out.points.empty()) throw EmptyCloud("downsampled cloud is empty");
  return out;
}

PlaneFit ransac_plane_removal(const PointCloud& cloud, double dist_thresh, int iterations, std::uint64_t seed,
                              double min_support) {
  const auto& pts = cloud.points;
  if (pts.size() < 3) throw InvalidInput("plane fit needs at least 3 points");
  if (!(dist_thresh > 0.0) || iterations < 1) throw InvalidInput("invalid RANSAC parameters");
  check_finite(cloud);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
  auto count_inliers = [&](const Vec3& n, double d) {
    std::size_t c = 0;
    for (const auto& p : pts) c += std::abs(n.dot(p) + d) <= dist_thresh;
    return c;
  };
  std::size_t best = 0;
  Vec3 best_n = Vec3::UnitZ();
  double best_d = 0.0;
  for (int it = 0; it < iterations; ++it) {
    const std::size_t a = pick(rng), b = pick(rng), c = pick(rng);
    if (a == b || b == c || a == c) continue;
    Vec3 n = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
    if (n.norm() < 1e-12) continue;
    n.normalize();
    const double d = -n.dot(pts[a]);
    const std::size_t count = count_inliers(n, d);
    if (count > best) {
      best = count;
      best_n = n;
      best_d = d;
    }
  }

  PlaneFit fit;
  if (best < 3 || static_cast<double>(best) < min_support * static_cast<double>(pts.size())) {
    fit.remaining = cloud;
    return fit;
  }
  // least-squares refit on the consensus set
  Vec3 centroid = Vec3::Zero();
  std::vector<Vec3> inl;
  for (const auto& p : pts) {
    if (std::abs(best_n.dot(p) + best_d) <= dist_thresh) inl.push_back(p);
  }
  for (const auto& p : inl) centroid += p;
  centroid /= static_cast<double>(inl.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& p : inl) cov += (p - centroid) * (p - centroid).transpose();
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  Vec3 n = es.eigenvectors().col(0);
  if (n.dot(best_n) < 0.0) n = -n;
  const double d = -n.dot(centroid);

  fit.plane_found = true;
  fit.plane << n, d;
  fit.remaining.timestamp = cloud.timestamp;
  for (const auto& p : pts) {
    if (std::abs(n.dot(p) + d) <= dist_thresh) {
      ++fit.inliers;
    } else {
      fit.remaining.points.push_back(p);
    }
  }
  return fit;
}

std::vector<std::vector<int>> euclidean_cluster(const PointCloud& cloud, double xi, int min_points) {
  if (!(xi > 0.0)) throw InvalidInput("cluster tolerance must be positive");
  if (min_points < 1) throw InvalidInput("MinPts must be at least 1");
  check_finite(cloud);
  const auto& pts = cloud.points;
  std::unordered_map<Key, std::vector<int>, KeyHash> grid;
  for (std::size_t i = 0; i < pts.size(); ++i) grid[voxel_key(pts[i], xi)].push_back(static_cast<int>(i));

  std::vector<bool> seen(pts.size(), false);
  std::vector<std::vector<int>> clusters;
  for (std::size_t seed = 0; seed < pts.size(); ++seed) {
    if (seen[seed]) continue;
    std::vector<int> members{static_cast<int>(seed)};
    seen[seed] = true;
    for (std::size_t head = 0; head < members.size(); ++head) {
      const Vec3& p = pts[static_cast<std::size_t>(members[head])];
      const auto [kx, ky, kz] = voxel_key(p, xi);
      for (long long dx = -1; dx <= 1; ++dx) {
        for (long long dy = -1; dy <= 1; ++dy) {
          for (long long dz = -1; dz <= 1; ++dz) {
            const auto cell = grid.find({kx + dx, ky + dy, kz + dz});
            if (cell == grid.end()) continue;
            for (int j : cell->second) {
              const auto ju = static_cast<std::size_t>(j);
              if (!seen[ju] && (p - pts[ju]).norm() <= xi) {
                seen[ju] = true;
                members.push_back(j);
              }
            }
          }
        }
      }
    }
    if (static_cast<int>(members.size()) >= min_points) {
      std::sort(members.begin(), members.end());
      clusters.push_back(std::move(members));
    }
  }
  return clusters;
}

CentroidPose cluster_centroid_pose(const std::vector<Vec3>& cluster) {
  if (cluster.empty()) throw InvalidInput("empty cluster");
  CentroidPose out;
  Vec3 c = Vec3::Zero();
  for (const auto& p : cluster) c += p;
  c /= static_cast<double>(cluster.size());
  out.pose.position = c;
  Mat3 cov = Mat3::Zero();
  for (const auto& p : cluster) cov += (p - c) * (p - c).transpose();
  cov /= static_cast<double>(cluster.size());
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  const Vec3 ev = es.eigenvalues();  // ascending
  if (cluster.size() < 3 || !(ev[1] > 1e-12 * std::max(1e-12, ev[2]))) {
    out.degenerate = true;
    out.pose.orientation = Quat::Identity();
    return out;
  }
  auto orient = [](Vec3 v) {
    Eigen::Index i;
    v.cwiseAbs().maxCoeff(&i);
    return v[i] < 0.0 ? Vec3(-v) : v;
  };
  Mat3 R;
  R.col(0) = orient(es.eigenvectors().col(2));
  R.col(1) = orient(es.eigenvectors().col(1));
  R.col(2) = R.col(0).cross(R.col(1));
  out.pose.orientation = canonical(Quat(R));
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const auto& p : cluster) {
    const Vec3 local = R.transpose() * (p - c);
    lo = lo.cwiseMin(local);
    hi = hi.cwiseMax(local);
  }
  Vec3 dims = hi - lo;
  std::sort(dims.data(), dims.data() + 3, std::greater<>());
  out.dims = dims;
  return out;
}

Pose object_pose_to_base(const Pose& pose_cam, const Mat4& cam_to_ee, const Mat4& ee_to_base) {
  for (const Mat4* T : {&cam_to_ee, &ee_to_base}) {
    const Mat3 R = T->topLeftCorner<3, 3>();
    if ((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9 || std::abs(R.determinant() - 1.0) > 1e-9 ||
        T->row(3) != Eigen::RowVector4d(0, 0, 0, 1)) {
      throw InvalidInput("transform is not rigid");
    }
  }
  return Pose::from_matrix(ee_to_base * cam_to_ee * pose_cam.matrix());
}

std::string classify_shape(const Vec3& dims_in) {
  if ((dims_in.array() <= 0.0).any()) throw InvalidInput("shape dimensions must be positive");
  Vec3 d = dims_in;
  std::sort(d.data(), d.data() + 3, std::greater<>());
  if (d[0] / d[1] >= 3.0) return "rod";
  if (d[2] / d[0] <= 0.6) return "cap";
  return "block";
}

std::vector<ObjectDetection> detect_objects(const PointCloud& cloud, const DetectionParams& params,
                                            const Mat4& cam_to_ee, const Mat4& ee_to_base, std::uint64_t seed) {
  const PointCloud filtered = downsample_and_filter(cloud, params.leaf, params.outlier_k, params.outlier_sigma);
  if (filtered.points.size() < 3) return {};
  const PlaneFit fit = ransac_plane_removal(filtered, params.plane_thresh, params.ransac_iterations, seed);
  const auto clusters = euclidean_cluster(fit.remaining, params.cluster_xi, params.cluster_min_points);
  std::vector<ObjectDetection> out;
  for (std::size_t k = 0; k < clusters.size(); ++k) {
    std::vector<Vec3> pts;
    for (int i : clusters[k]) pts.push_back(fit.remaining.points[static_cast<std::size_t>(i)]);
    const CentroidPose cp = cluster_centroid_pose(pts);
    ObjectDetection det;
    det.cluster_id = static_cast<int>(k);
    det.point_count = pts.size();
    det.camera_pose = cp.pose;
    det.base_pose = object_pose_to_base(cp.pose, cam_to_ee, ee_to_base);
    det.dims = cp.dims;
    det.degenerate = cp.degenerate;
    det.label = cp.degenerate || (cp.dims.array() <= 0.0).any() ? "unknown" : classify_shape(cp.dims);
    out.push_back(det);
  }
  std::stable_sort(out.begin(), out.end(), [](const ObjectDetection& a, const ObjectDetection& b) {
    return a.camera_pose.position.head<2>().norm() < b.camera_pose.position.head<2>().norm();
  });
  return out;
}

// --- synthetic scenes ---------------------------------------------------------------

PointCloud synth_cloud(const std::vector<SceneObject>& objects, const Mat4& cam_to_base, const CloudParams& params,
                       std::uint64_t seed, double timestamp) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, params.noise);
  const Mat3 R = cam_to_base.topLeftCorner<3, 3>();
  const Vec3 eye = cam_to_base.topRightCorner<3, 1>();
  const double half = std::tan(0.5 * params.fov);

  PointCloud cloud;
  cloud.timestamp = timestamp;
  auto emit = [&](const Vec3& p_base) {
    Vec3 pc = R.transpose() * (p_base - eye);
    if (!(pc[2] > 0.0) || pc[2] > params.max_range) return;
    if (std::abs(pc[0]) > half * pc[2] || std::abs(pc[1]) > half * pc[2]) return;
    if (params.noise > 0.0) pc += Vec3(noise(rng), noise(rng), noise(rng));
    cloud.points.push_back(pc);
  };
  auto inside_footprint = [&](const Vec3& p) {
    for (const auto& o : objects) {
      const Eigen::Rotation2Dd rot(-o.yaw);
      const Eigen::Vector2d local = rot * (p.head<2>() - o.position.head<2>());
      if (std::abs(local[0]) <= 0.5 * o.dims[0] && std::abs(local[1]) <= 0.5 * o.dims[1]) return true;
    }
    return false;
  };

  // table: grid over the ground footprint of the view frustum
  if (eye[2] > 0.0) {
    const double reach = eye[2] * half * 1.5 + 0.05;
    const int n = static_cast<int>(std::ceil(reach / params.table_spacing));
    for (int i = -n; i <= n; ++i) {
      for (int j = -n; j <= n; ++j) {
        const Vec3 p(eye[0] + i * params.table_spacing, eye[1] + j * params.table_spacing, 0.0);
        if (!inside_footprint(p)) emit(p);
      }
    }
  }
  // objects: top and four side faces
  for (const auto& o : objects) {
    const Mat3 Ro = Eigen::AngleAxisd(o.yaw, Vec3::UnitZ()).toRotationMatrix();
    const Vec3 h = 0.5 * o.dims;
    auto face = [&](int axis, double sign) {
      const int u = (axis + 1) % 3, v = (axis + 2) % 3;
      const int nu = std::max(1, static_cast<int>(std::round(o.dims[u] / params.object_spacing)));
      const int nv = std::max(1, static_cast<int>(std::round(o.dims[v] / params.object_spacing)));
      for (int a = 0; a <= nu; ++a) {
        for (int b = 0; b <= nv; ++b) {
          Vec3 local;
          local[axis] = sign * h[axis];
          local[u] = -h[u] + a * o.dims[u] / nu;
          local[v] = -h[v] + b * o.dims[v] / nv;
          emit(o.position + Ro * local);
        }
      }
    };
    face(2, 1.0);
    face(0, 1.0);
    face(0, -1.0);
    face(1, 1.0);
    face(1, -1.0);
  }
  return cloud;
}

std::vector<Vec3> read_xyz(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open point file " + path);
  std::vector<Vec3> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    std::istringstream ss(line);
    Vec3 p;
    if (!(ss >> p[0] >> p[1] >> p[2])) throw SchemaError(path + ":" + std::to_string(lineno), "expected x y z");
    out.push_back(p);
  }
  return out;
}

void write_xyz(const std::string& path, const std::vector<Vec3>& points) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path);
  out << std::setprecision(17);
  for (const auto& p : points) out << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
}

}  // namespace isot
