#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "isot/kinematics.hpp"

namespace isot {

// ---------------------------------------------------------------------------
// Camera model

struct CameraIntrinsics {
  double f = 525.0;  // focal length
  double cx = 320.0;
  double cy = 240.0;
  double sx = 1.0;  // pixel dimensions
  double sy = 1.0;

  void validate() const;
};

/// Camera-to-base rigid transform: p_base = R p_cam + l.
struct CameraExtrinsics {
  Mat3 R = Mat3::Identity();
  Vec3 l = Vec3::Zero();

  void validate() const;
  Mat4 matrix() const;
  /// Camera at `eye` with its optical (z) axis towards `target`; image y
  /// points as close to base -z as possible.
  static CameraExtrinsics look_at(const Vec3& eye, const Vec3& target);
};

struct Pixel {
  double ix = 0.0;
  double iy = 0.0;
  double depth = 0.0;  // m along the optical axis
};

/// Thrown for points with non-positive depth.
class OccludedPoint : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

Vec3 depth_to_camera(const Pixel& px, const CameraIntrinsics& intr);
/// Inverse of depth_to_camera.
Pixel camera_to_pixel(const Vec3& p_cam, const CameraIntrinsics& intr);

Vec3 camera_to_base(const Vec3& p_cam, const CameraExtrinsics& extr);
Vec3 base_to_camera(const Vec3& p_base, const CameraExtrinsics& extr);

// ---------------------------------------------------------------------------
// Skeleton stream

inline constexpr int kSkeletonJoints = 18;

enum class Joint {
  kNose, kNeck, kRShoulder, kRElbow, kRWrist, kLShoulder, kLElbow, kLWrist, kRHip,
  kRKnee, kRAnkle, kLHip, kLKnee, kLAnkle, kREye, kLEye, kREar, kLEar,
};

const char* joint_name(Joint j);

struct SkeletonJoint {
  Pixel pixel;
  bool occluded = false;
  Vec3 base = Vec3::Zero();  // reconstructed base-frame position (undefined when occluded)
};

struct SkeletonFrame {
  double timestamp = 0.0;
  std::array<SkeletonJoint, kSkeletonJoints> joints{};
  bool open_palm = false;

  const SkeletonJoint& operator[](Joint j) const { return joints[static_cast<std::size_t>(j)]; }
  SkeletonJoint& operator[](Joint j) { return joints[static_cast<std::size_t>(j)]; }
};

enum class Side { kLeft, kRight };

Side side_from_string(const std::string& s);

/// Scripted leader motion: wrist position of the active arm (base frame, m).
struct LeaderKeyframe {
  double t = 0.0;
  Vec3 wrist = Vec3::Zero();
  bool open_palm = false;
  bool visible = true;
};

struct LeaderScript {
  Side side = Side::kRight;
  double body_radius = 0.88;   // m from the robot base
  double body_angle = 0.6457;  // rad
  double wrist_noise = 0.0;    // m, uniform half-width
  std::vector<LeaderKeyframe> keyframes;

  /// Linear interpolation of the wrist, held constant outside the script;
  /// flags come from the latest keyframe at or before t.
  LeaderKeyframe sample(double t) const;
  double duration() const;
};

struct TrackingCamera {
  CameraIntrinsics intrinsics;
  CameraExtrinsics extrinsics = CameraExtrinsics::look_at({0.35, -0.75, 0.75}, {0.6, 0.45, 0.05});
};

/// Builds an 18-joint body around the scripted wrist, projects it into the
/// tracking camera (pixels are not rounded) and reconstructs base positions
/// through depth_to_camera / camera_to_base. `noise_seed` drives the
/// optional wrist noise.
SkeletonFrame synth_skeleton(const LeaderScript& script, const TrackingCamera& camera, double t,
                             std::uint64_t noise_seed = 0);

struct ArmTrack {
  bool lost = false;
  bool fresh = false;  // wrist seen in this frame
  double staleness = 0.0;
  Vec3 wrist = Vec3::Zero();  // smoothed
  Vec3 elbow = Vec3::Zero();
  Vec3 shoulder = Vec3::Zero();
};

/// Active-arm selection with a moving average over the last `window` wrist
/// observations and hold-last-value up to `horizon` seconds of occlusion.
class ArmFilter {
 public:
  explicit ArmFilter(Side side, int window = 5, double horizon = 0.6);

  ArmTrack update(const SkeletonFrame& frame);

 private:
  Side side_;
  std::size_t window_;
  double horizon_;
  std::deque<Vec3> history_;
  std::optional<double> last_seen_;
  ArmTrack last_;
};

// ---------------------------------------------------------------------------
// Point clouds

struct PointCloud {
  std::vector<Vec3> points;
  double timestamp = 0.0;
};

class EmptyCloud : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Voxel-grid centroids (output ordered by voxel key) followed by statistical
/// outlier removal over the mean distance to the k nearest neighbours.
PointCloud downsample_and_filter(const PointCloud& cloud, double leaf, int outlier_k, double outlier_sigma);

struct PlaneFit {
  PointCloud remaining;
  bool plane_found = false;
  Eigen::Vector4d plane = Eigen::Vector4d::Zero();  // n, d with n'p + d = 0, |n| = 1
  std::size_t inliers = 0;
};

PlaneFit ransac_plane_removal(const PointCloud& cloud, double dist_thresh, int iterations, std::uint64_t seed,
                              double min_support = 0.1);

/// Connected components of the "distance <= xi" graph with at least
/// min_points members. Each cluster lists ascending point indices; clusters
/// are ordered by their first index.
std::vector<std::vector<int>> euclidean_cluster(const PointCloud& cloud, double xi, int min_points);

struct CentroidPose {
  Pose pose;
  bool degenerate = false;
  Vec3 dims = Vec3::Zero();  // extents along the principal axes, descending
};

CentroidPose cluster_centroid_pose(const std::vector<Vec3>& cluster);

Pose object_pose_to_base(const Pose& pose_cam, const Mat4& cam_to_ee, const Mat4& ee_to_base);

/// rod: longest/middle >= 3; cap: shortest/longest <= 0.6; block otherwise.
std::string classify_shape(const Vec3& dims);

struct ObjectDetection {
  int cluster_id = 0;
  std::size_t point_count = 0;
  Pose camera_pose;
  Pose base_pose;
  std::string label;
  Vec3 dims = Vec3::Zero();
  bool degenerate = false;
};

struct DetectionParams {
  double leaf = 0.005;
  int outlier_k = 8;
  double outlier_sigma = 3.0;
  double plane_thresh = 0.005;
  int ransac_iterations = 100;
  double cluster_xi = 0.02;
  int cluster_min_points = 10;
};

/// Full pipeline on a camera-frame cloud. Detections are sorted by distance
/// of their centroid from the optical axis.
std::vector<ObjectDetection> detect_objects(const PointCloud& cloud, const DetectionParams& params,
                                            const Mat4& cam_to_ee, const Mat4& ee_to_base, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic scenes

struct SceneObject {
  std::string shape = "block";
  Vec3 dims = Vec3(0.06, 0.03, 0.03);  // m, along the object x, y, z
  Vec3 position = Vec3::Zero();        // centre, base frame
  double yaw = 0.0;
};

struct CloudParams {
  double fov = 1.0;            // rad, full square field of view
  double table_spacing = 0.006;
  double object_spacing = 0.003;
  double noise = 0.001;        // m
  double max_range = 1.5;
};

/// Table plane z = 0 plus the non-bottom faces of every object, sampled on a
/// grid, jittered with Gaussian noise and expressed in the camera frame.
PointCloud synth_cloud(const std::vector<SceneObject>& objects, const Mat4& cam_to_base, const CloudParams& params,
                       std::uint64_t seed, double timestamp = 0.0);

std::vector<Vec3> read_xyz(const std::string& path);
void write_xyz(const std::string& path, const std::vector<Vec3>& points);

}  // namespace isot
