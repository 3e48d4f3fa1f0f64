#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "isot/kinematics.hpp"

namespace isot {

inline constexpr int kTaxelRows = 4;
inline constexpr int kTaxelCols = 4;
inline constexpr int kTaxelCount = kTaxelRows * kTaxelCols;

/// Nominal sample rate of the tactile sensor (Hz). Frames are produced at the
/// control rate; this is only used to stamp the raw sample counter.
inline constexpr double kTactileSampleRate = 115200.0;

enum class SensorId { kLeftJaw, kRightJaw };

/// Raw z-displacements (mm) of the 4 x 4 taxel grid, row-major with the row
/// index along the pad y axis and the column index along x.
struct TactileFrame {
  double timestamp = 0.0;
  std::array<double, kTaxelCount> taxels{};
  SensorId sensor = SensorId::kLeftJaw;

  double at(int row, int col) const { return taxels[static_cast<std::size_t>(row * kTaxelCols + col)]; }
};

struct DeformationVector {
  double dx = 0.0;  // mm per taxel pitch
  double dy = 0.0;  // mm per taxel pitch
  double dz = 0.0;  // mm

  Vec3 vec() const { return {dx, dy, dz}; }
};

/// Bicubic (natural cubic spline tensor product) surface over the grid.
/// Coordinates are in taxel pitches, x = column in [0, 3], y = row in [0, 3].
class TaxelField {
 public:
  explicit TaxelField(const TactileFrame& frame);

  double value(double x, double y) const;
  Eigen::Vector2d gradient(double x, double y) const;

  /// Mean value and mean gradient over the pad, integrated exactly.
  DeformationVector deformation() const;

 private:
  Eigen::Matrix4d grid_;  // grid_(row, col)
};

/// Checks the frame (all finite) and returns the field with its deformation.
DeformationVector interpolate_taxels(const TactileFrame& frame);

/// Sample counter of the sensor clock at simulation time t.
std::int64_t tactile_sample_index(double t);

// ---------------------------------------------------------------------------
// Deformation to force mapping

struct CalibrationSample {
  DeformationVector d;
  Vec3 f;  // N, sensor frame
};

/// Synthetic calibration generator: f = diag(k_t, k_t, k_n) D plus Gaussian
/// noise with standard deviation noise_fraction * (force range), per axis.
struct CalibrationModel {
  double k_tangential = 1.0;  // N per (mm / pitch)
  double k_normal = 1.0;      // N/mm
  double noise_fraction = 0.01;
  double shear_max = 2.0;   // D_x, D_y drawn from [-shear_max, shear_max]
  double normal_min = 0.0;  // D_z drawn from [normal_min, normal_max]
  double normal_max = 5.0;

  Vec3 force(const DeformationVector& d) const;
};

std::vector<CalibrationSample> synth_calibration(const CalibrationModel& model, int count, std::uint64_t seed);

/// Rows `Dx Dy Dz fx fy fz`, '#' comments allowed.
std::vector<CalibrationSample> read_calibration(const std::string& path);
void write_calibration(const std::string& path, const std::vector<CalibrationSample>& samples);

class TrainingFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 3-5-3 network: tanh hidden layer, linear output, min-max scaling of
/// inputs and outputs to [-1, 1].
class ForceMapper {
 public:
  static constexpr int kHidden = 5;

  ForceMapper();

  Vec3 operator()(const DeformationVector& d) const;
  /// d f / d (Dx, Dy, Dz).
  Mat3 jacobian(const DeformationVector& d) const;

  bool operator==(const ForceMapper& other) const = default;

  Eigen::Matrix<double, kHidden, 3> w1;
  Eigen::Matrix<double, kHidden, 1> b1;
  Eigen::Matrix<double, 3, kHidden> w2;
  Eigen::Matrix<double, 3, 1> b2;
  Vec3 in_min, in_max, out_min, out_max;
};

struct TrainingOptions {
  std::uint64_t seed = 1;
  int max_epochs = 20000;
  double learning_rate = 0.01;
  double target_rmse_fraction = 0.05;  // of the force range
};

struct TrainingReport {
  double train_rmse = 0.0;  // N
  double test_rmse = 0.0;   // N
  double force_range = 0.0; // N, largest per-axis span of the training targets
  int epochs = 0;
};

/// Full-batch Adam on mean squared error. Throws TrainingFailed when the test
/// RMSE is above target_rmse_fraction of the force range.
ForceMapper train_force_mapper(const std::vector<CalibrationSample>& train, const std::vector<CalibrationSample>& test,
                               const TrainingOptions& options, TrainingReport* report = nullptr);

Vec3 map_force(const ForceMapper& mapper, const DeformationVector& d);

double rmse(const ForceMapper& mapper, const std::vector<CalibrationSample>& samples);

/// Plain-text `mapper.v1` layout, see README.
std::string mapper_to_text(const ForceMapper& mapper);
ForceMapper mapper_from_text(const std::string& text);
void save_mapper(const std::string& path, const ForceMapper& mapper);
ForceMapper load_mapper(const std::string& path);

// ---------------------------------------------------------------------------
// Frames, friction, grip

/// Rotates a sensor-frame force into the base frame: R_eb * R_se * f.
/// Translations are ignored (forces are free vectors).
Vec3 force_to_base(const Vec3& f_sensor, const Mat4& sensor_to_ee, const Mat4& ee_to_base);

enum class FrictionConvention {
  /// normal / tangential > mu means slip
  kAsWritten,
  /// tangential / normal > mu means slip (Coulomb cone)
  kStandard,
};

struct FrictionParams {
  double mu = 0.75;
  double contact_force_threshold = 2.0;  // N
  FrictionConvention convention = FrictionConvention::kAsWritten;
};

enum class SlipState { kStable, kSlip };

/// Throws InvalidInput when D is all zero. A zero denominator gives +inf.
SlipState check_friction_cone(const DeformationVector& d, const FrictionParams& params);

/// jaw_rate = gain * (f_target - |f_measured|), clamped to +-rate_max.
/// Positive closes the jaws.
double modulate_grip(const Vec3& f_measured, double f_target, double gain, double rate_max);

FrictionConvention friction_convention_from_string(const std::string& s);
std::string to_string(FrictionConvention c);

// ---------------------------------------------------------------------------
// Pad contact model used by the simulator

/// Linear pad: normal penetration delta (mm) gives a uniform compression, a
/// tangential load (N) a shear gradient of load / k_tangential per pitch.
struct PadModel {
  double k_normal = 1.0;      // N/mm
  double k_tangential = 1.0;  // N per (mm / pitch)
  double noise_mm = 0.002;

  TactileFrame frame(double t, SensorId sensor, double penetration_mm, const Eigen::Vector2d& shear_n,
                     std::uint64_t noise_seed) const;
};

}  // namespace isot
