#include "isot/tactile.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include "isot/errors.hpp"

namespace isot {

namespace {

// Natural cubic spline through (0, y0) .. (3, y3): second derivatives at the
// two interior knots (the end ones are zero).
Eigen::Vector4d second_derivatives(const Eigen::Vector4d& y) {
  const double r1 = 6.0 * (y[2] - 2.0 * y[1] + y[0]);
  const double r2 = 6.0 * (y[3] - 2.0 * y[2] + y[1]);
  return {0.0, (4.0 * r1 - r2) / 15.0, (4.0 * r2 - r1) / 15.0, 0.0};
}

int segment(double x) { return std::clamp(static_cast<int>(std::floor(x)), 0, 2); }

double spline_value(const Eigen::Vector4d& y, double x) {
  const Eigen::Vector4d m = second_derivatives(y);
  const int i = segment(x);
  const double t = x - i, s = 1.0 - t;
  return s * y[i] + t * y[i + 1] + (s * s * s - s) * m[i] / 6.0 + (t * t * t - t) * m[i + 1] / 6.0;
}

double spline_slope(const Eigen::Vector4d& y, double x) {
  const Eigen::Vector4d m = second_derivatives(y);
  const int i = segment(x);
  const double t = x - i, s = 1.0 - t;
  return y[i + 1] - y[i] + (1.0 - 3.0 * s * s) * m[i] / 6.0 + (3.0 * t * t - 1.0) * m[i + 1] / 6.0;
}

// Two-point Gauss-Legendre nodes on each unit segment of [0, 3]; exact for
// the piecewise cubics integrated here.
std::array<double, 6> quadrature_nodes() {
  const double h = 0.5 / std::sqrt(3.0);
  return {0.5 - h, 0.5 + h, 1.5 - h, 1.5 + h, 2.5 - h, 2.5 + h};
}

}  // namespace

TaxelField::TaxelField(const TactileFrame& frame) {
  for (int r = 0; r < kTaxelRows; ++r) {
    for (int c = 0; c < kTaxelCols; ++c) grid_(r, c) = frame.at(r, c);
  }
}

double TaxelField::value(double x, double y) const {
  Eigen::Vector4d column;
  for (int r = 0; r < kTaxelRows; ++r) column[r] = spline_value(grid_.row(r).transpose(), x);
  return spline_value(column, y);
}

Eigen::Vector2d TaxelField::gradient(double x, double y) const {
  Eigen::Vector4d along_x, column;
  for (int r = 0; r < kTaxelRows; ++r) {
    along_x[r] = spline_slope(grid_.row(r).transpose(), x);
    column[r] = spline_value(grid_.row(r).transpose(), x);
  }
  return {spline_value(along_x, y), spline_slope(column, y)};
}

DeformationVector TaxelField::deformation() const {
  const auto nodes = quadrature_nodes();
  DeformationVector d;
  for (double y : nodes) {
    for (double x : nodes) {
      d.dz += value(x, y);
      const Eigen::Vector2d g = gradient(x, y);
      d.dx += g[0];
      d.dy += g[1];
    }
  }
  const double n = static_cast<double>(nodes.size() * nodes.size());
  d.dx /= n;
  d.dy /= n;
  d.dz /= n;
  return d;
}

DeformationVector interpolate_taxels(const TactileFrame& frame) {
  for (double v : frame.taxels) {
    if (!std::isfinite(v)) throw InvalidInput("tactile frame has a non-finite taxel");
  }
  return TaxelField(frame).deformation();
}

std::int64_t tactile_sample_index(double t) {
  return static_cast<std::int64_t>(std::floor(t * kTactileSampleRate + 1e-6));
}

// --- calibration -------------------------------------------------------------

Vec3 CalibrationModel::force(const DeformationVector& d) const {
  return {k_tangential * d.dx, k_tangential * d.dy, k_normal * d.dz};
}

std::vector<CalibrationSample> synth_calibration(const CalibrationModel& model, int count, std::uint64_t seed) {
  if (count < 0) throw InvalidInput("sample count must be non-negative");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> shear(-model.shear_max, model.shear_max);
  std::uniform_real_distribution<double> normal(model.normal_min, model.normal_max);
  std::normal_distribution<double> noise(0.0, 1.0);
  const Vec3 range(2.0 * model.shear_max * model.k_tangential, 2.0 * model.shear_max * model.k_tangential,
                   (model.normal_max - model.normal_min) * model.k_normal);
  std::vector<CalibrationSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    CalibrationSample s;
    s.d.dx = shear(rng);
    s.d.dy = shear(rng);
    s.d.dz = normal(rng);
    s.f = model.force(s.d);
    for (int k = 0; k < 3; ++k) s.f[k] += model.noise_fraction * range[k] * noise(rng);
    out.push_back(s);
  }
  return out;
}

std::vector<CalibrationSample> read_calibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open calibration file " + path);
  std::vector<CalibrationSample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    CalibrationSample s;
    if (!(ss >> s.d.dx >> s.d.dy >> s.d.dz >> s.f[0] >> s.f[1] >> s.f[2])) {
      throw SchemaError(path + ":" + std::to_string(lineno), "expected six numbers");
    }
    out.push_back(s);
  }
  return out;
}

void write_calibration(const std::string& path, const std::vector<CalibrationSample>& samples) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path);
  out << "# Dx Dy Dz fx fy fz\n" << std::setprecision(17);
  for (const auto& s : samples) {
    out << s.d.dx << ' ' << s.d.dy << ' ' << s.d.dz << ' ' << s.f[0] << ' ' << s.f[1] << ' ' << s.f[2] << '\n';
  }
}

// --- network -------------------------------------------------------------------

namespace {

Vec3 scale_in(const Vec3& v, const Vec3& lo, const Vec3& hi) {
  return (2.0 * (v - lo).array() / (hi - lo).array() - 1.0).matrix();
}

Vec3 unscale_out(const Vec3& v, const Vec3& lo, const Vec3& hi) {
  return (lo.array() + 0.5 * (v.array() + 1.0) * (hi - lo).array()).matrix();
}

Vec3 safe_span(const Vec3& lo, Vec3& hi) {
  for (int k = 0; k < 3; ++k) {
    if (!(hi[k] - lo[k] > 1e-12)) hi[k] = lo[k] + 1.0;
  }
  return hi - lo;
}

}  // namespace

ForceMapper::ForceMapper()
    : w1(decltype(w1)::Zero()),
      b1(decltype(b1)::Zero()),
      w2(decltype(w2)::Zero()),
      b2(decltype(b2)::Zero()),
      in_min(Vec3::Constant(-1.0)),
      in_max(Vec3::Constant(1.0)),
      out_min(Vec3::Constant(-1.0)),
      out_max(Vec3::Constant(1.0)) {}

Vec3 ForceMapper::operator()(const DeformationVector& d) const {
  const Vec3 x = scale_in(d.vec(), in_min, in_max);
  const Eigen::Matrix<double, kHidden, 1> h = (w1 * x + b1).array().tanh();
  return unscale_out(w2 * h + b2, out_min, out_max);
}

Mat3 ForceMapper::jacobian(const DeformationVector& d) const {
  const Vec3 x = scale_in(d.vec(), in_min, in_max);
  const Eigen::Matrix<double, kHidden, 1> h = (w1 * x + b1).array().tanh();
  const Eigen::Matrix<double, kHidden, 1> dh = 1.0 - h.array().square();
  const Mat3 core = w2 * dh.asDiagonal() * w1;
  const Vec3 out_scale = 0.5 * (out_max - out_min);
  const Vec3 in_scale = 2.0 * (in_max - in_min).cwiseInverse();
  return out_scale.asDiagonal() * core * in_scale.asDiagonal();
}

Vec3 map_force(const ForceMapper& mapper, const DeformationVector& d) { return mapper(d); }

double rmse(const ForceMapper& mapper, const std::vector<CalibrationSample>& samples) {
  if (samples.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : samples) sum += (mapper(s.d) - s.f).squaredNorm();
  return std::sqrt(sum / (3.0 * static_cast<double>(samples.size())));
}

ForceMapper train_force_mapper(const std::vector<CalibrationSample>& train, const std::vector<CalibrationSample>& test,
                               const TrainingOptions& options, TrainingReport* report) {
  if (train.empty()) throw InvalidInput("no training samples");
  constexpr int H = ForceMapper::kHidden;
  ForceMapper m;
  m.in_min = m.out_min = Vec3::Constant(std::numeric_limits<double>::infinity());
  m.in_max = m.out_max = Vec3::Constant(-std::numeric_limits<double>::infinity());
  for (const auto& s : train) {
    m.in_min = m.in_min.cwiseMin(s.d.vec());
    m.in_max = m.in_max.cwiseMax(s.d.vec());
    m.out_min = m.out_min.cwiseMin(s.f);
    m.out_max = m.out_max.cwiseMax(s.f);
  }
  const double force_range = (m.out_max - m.out_min).maxCoeff();
  safe_span(m.in_min, m.in_max);
  safe_span(m.out_min, m.out_max);

  const Eigen::Index n = static_cast<Eigen::Index>(train.size());
  MatX X(3, n), Y(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = train[static_cast<std::size_t>(i)];
    X.col(i) = scale_in(s.d.vec(), m.in_min, m.in_max);
    Y.col(i) = scale_in(s.f, m.out_min, m.out_max);
  }

  std::mt19937_64 rng(options.seed);
  const double a1 = std::sqrt(6.0 / (3 + H)), a2 = std::sqrt(6.0 / (H + 3));
  std::uniform_real_distribution<double> u1(-a1, a1), u2(-a2, a2);
  for (int i = 0; i < m.w1.size(); ++i) m.w1.data()[i] = u1(rng);
  for (int i = 0; i < m.w2.size(); ++i) m.w2.data()[i] = u2(rng);

  // parameters packed as [w1, b1, w2, b2]
  constexpr int P = H * 3 + H + 3 * H + 3;
  Eigen::Matrix<double, P, 1> mom = decltype(mom)::Zero(), vel = decltype(vel)::Zero();
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int epoch = 0;
  for (; epoch < options.max_epochs; ++epoch) {
    const MatX Z = (m.w1 * X).colwise() + m.b1;
    const MatX A = Z.array().tanh();
    const MatX out = (m.w2 * A).colwise() + m.b2;
    const MatX dOut = (out - Y) * (2.0 / static_cast<double>(3 * n));
    const MatX dA = m.w2.transpose() * dOut;
    const MatX dZ = dA.array() * (1.0 - A.array().square());
    Eigen::Matrix<double, P, 1> grad;
    Eigen::Map<Eigen::Matrix<double, H, 3>>(grad.data()) = dZ * X.transpose();
    Eigen::Map<Eigen::Matrix<double, H, 1>>(grad.data() + 3 * H) = dZ.rowwise().sum();
    Eigen::Map<Eigen::Matrix<double, 3, H>>(grad.data() + 4 * H) = dOut * A.transpose();
    Eigen::Map<Eigen::Matrix<double, 3, 1>>(grad.data() + 7 * H) = dOut.rowwise().sum();

    mom = beta1 * mom + (1.0 - beta1) * grad;
    vel = beta2 * vel + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1, epoch + 1), c2 = 1.0 - std::pow(beta2, epoch + 1);
    const Eigen::Matrix<double, P, 1> step =
        options.learning_rate * (mom / c1).cwiseQuotient(((vel / c2).cwiseSqrt().array() + eps).matrix());
    Eigen::Map<Eigen::Matrix<double, H, 3>>(m.w1.data()) -= Eigen::Map<const Eigen::Matrix<double, H, 3>>(step.data());
    m.b1 -= step.segment<H>(3 * H);
    Eigen::Map<Eigen::Matrix<double, 3, H>>(m.w2.data()) -= Eigen::Map<const Eigen::Matrix<double, 3, H>>(step.data() + 4 * H);
    m.b2 -= step.segment<3>(7 * H);
  }

  TrainingReport r;
  r.train_rmse = rmse(m, train);
  r.test_rmse = rmse(m, test);
  r.force_range = force_range;
  r.epochs = epoch;
  if (report) *report = r;
  if (!test.empty() && !(r.test_rmse <= options.target_rmse_fraction * force_range)) {
    std::ostringstream msg;
    msg << "force mapper training failed: test RMSE " << r.test_rmse << " N above "
        << options.target_rmse_fraction * force_range << " N (train RMSE " << r.train_rmse << " N, " << r.epochs
        << " epochs)";
    throw TrainingFailed(msg.str());
  }
  return m;
}

// --- mapper.v1 -----------------------------------------------------------------

namespace {

template <typename M>
void write_row(std::ostream& out, const char* key, const M& m) {
  out << key;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << ' ' << m(r, c);
  }
  out << '\n';
}

template <typename M>
void read_row(std::istream& in, const char* key, M& m, int& lineno) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("line " + std::to_string(lineno + 1), std::string("missing ") + key);
  ++lineno;
  std::istringstream ss(line);
  std::string k;
  ss >> k;
  if (k != key) throw SchemaError("line " + std::to_string(lineno), std::string("expected ") + key);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (!(ss >> m(r, c)) || !std::isfinite(m(r, c))) {
        throw SchemaError("line " + std::to_string(lineno), std::string("bad value in ") + key);
      }
    }
  }
  std::string extra;
  if (ss >> extra) throw SchemaError("line " + std::to_string(lineno), std::string("too many values in ") + key);
}

}  // namespace

std::string mapper_to_text(const ForceMapper& m) {
  std::ostringstream out;
  out << std::setprecision(17) << "mapper.v1\n";
  out << "hidden " << ForceMapper::kHidden << '\n';
  write_row(out, "in_min", m.in_min.transpose());
  write_row(out, "in_max", m.in_max.transpose());
  write_row(out, "out_min", m.out_min.transpose());
  write_row(out, "out_max", m.out_max.transpose());
  write_row(out, "w1", m.w1);
  write_row(out, "b1", m.b1.transpose());
  write_row(out, "w2", m.w2);
  write_row(out, "b2", m.b2.transpose());
  return out.str();
}

ForceMapper mapper_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 1;
  if (!std::getline(in, line) || line != "mapper.v1") throw SchemaError("line 1", "expected mapper.v1");
  Eigen::Matrix<double, 1, 1> hidden;
  read_row(in, "hidden", hidden, lineno);
  if (hidden(0, 0) != ForceMapper::kHidden) throw SchemaError("line 2", "hidden width must be 5");
  ForceMapper m;
  Eigen::Matrix<double, 1, 3> v;
  read_row(in, "in_min", v, lineno);
  m.in_min = v.transpose();
  read_row(in, "in_max", v, lineno);
  m.in_max = v.transpose();
  read_row(in, "out_min", v, lineno);
  m.out_min = v.transpose();
  read_row(in, "out_max", v, lineno);
  m.out_max = v.transpose();
  read_row(in, "w1", m.w1, lineno);
  Eigen::Matrix<double, 1, ForceMapper::kHidden> bh;
  read_row(in, "b1", bh, lineno);
  m.b1 = bh.transpose();
  read_row(in, "w2", m.w2, lineno);
  read_row(in, "b2", v, lineno);
  m.b2 = v.transpose();
  if (((m.in_max - m.in_min).array() <= 0.0).any() || ((m.out_max - m.out_min).array() <= 0.0).any()) {
    throw SchemaError("scaling", "min must be below max");
  }
  return m;
}

void save_mapper(const std::string& path, const ForceMapper& mapper) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path);
  out << mapper_to_text(mapper);
}

ForceMapper load_mapper(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open mapper file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return mapper_from_text(ss.str());
}

// --- frames, friction, grip ------------------------------------------------------

Vec3 force_to_base(const Vec3& f_sensor, const Mat4& sensor_to_ee, const Mat4& ee_to_base) {
  return ee_to_base.topLeftCorner<3, 3>() * (sensor_to_ee.topLeftCorner<3, 3>() * f_sensor);
}

SlipState check_friction_cone(const DeformationVector& d, const FrictionParams& params) {
  if (!(params.mu > 0.0)) throw InvalidInput("friction coefficient must be positive");
  if (d.dx == 0.0 && d.dy == 0.0 && d.dz == 0.0) throw InvalidInput("deformation vector is zero");
  const double tangential = std::hypot(d.dx, d.dy);
  const double normal = d.dz;
  auto ratio = [](double num, double den) {
    return den == 0.0 ? std::numeric_limits<double>::infinity() : num / den;
  };
  const double r = params.convention == FrictionConvention::kAsWritten ? ratio(normal, tangential)
                                                                        : ratio(tangential, normal);
  return r > params.mu ? SlipState::kSlip : SlipState::kStable;
}

double modulate_grip(const Vec3& f_measured, double f_target, double gain, double rate_max) {
  if (!(gain > 0.0)) throw InvalidInput("grip gain must be positive");
  return std::clamp(gain * (f_target - f_measured.norm()), -rate_max, rate_max);
}

FrictionConvention friction_convention_from_string(const std::string& s) {
  if (s == "as_written") return FrictionConvention::kAsWritten;
  if (s == "standard") return FrictionConvention::kStandard;
  throw InvalidInput("unknown friction convention '" + s + "'");
}

std::string to_string(FrictionConvention c) {
  return c == FrictionConvention::kAsWritten ? "as_written" : "standard";
}

TactileFrame PadModel::frame(double t, SensorId sensor, double penetration_mm, const Eigen::Vector2d& shear_n,
                             std::uint64_t noise_seed) const {
  TactileFrame f;
  f.timestamp = t;
  f.sensor = sensor;
  const Eigen::Vector2d slope = shear_n / k_tangential;
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> noise(0.0, noise_mm);
  for (int r = 0; r < kTaxelRows; ++r) {
    for (int c = 0; c < kTaxelCols; ++c) {
      double v = penetration_mm + slope[0] * (c - 1.5) + slope[1] * (r - 1.5);
      if (noise_mm > 0.0) v += noise(rng);
      f.taxels[static_cast<std::size_t>(r * kTaxelCols + c)] = v;
    }
  }
  return f;
}

}  // namespace isot
