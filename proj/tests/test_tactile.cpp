#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>

#include "isot/tactile.hpp"
#include "oracles.hpp"

using namespace isot;

namespace {

TactileFrame frame_from(const std::function<double(int, int)>& f) {
  TactileFrame frame;
  for (int r = 0; r < kTaxelRows; ++r) {
    for (int c = 0; c < kTaxelCols; ++c) frame.taxels[static_cast<std::size_t>(r * kTaxelCols + c)] = f(r, c);
  }
  return frame;
}

Mat4 random_transform(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Mat4 T = Mat4::Identity();
  T.topLeftCorner<3, 3>() = Quat(n(rng), n(rng), n(rng), n(rng)).normalized().toRotationMatrix();
  T.topRightCorner<3, 1>() = Vec3(n(rng), n(rng), n(rng));
  return T;
}

}  // namespace

TEST_CASE("flat and ramp fields") {
  const auto flat = interpolate_taxels(frame_from([](int, int) { return 0.7; }));
  CHECK(flat.dz == doctest::Approx(0.7).epsilon(1e-14));
  CHECK(std::abs(flat.dx) < 1e-14);
  CHECK(std::abs(flat.dy) < 1e-14);

  const double s = 0.3;
  const auto ramp = interpolate_taxels(frame_from([&](int, int c) { return 1.0 + s * c; }));
  CHECK(ramp.dx == doctest::Approx(s).epsilon(1e-12));
  CHECK(std::abs(ramp.dy) < 1e-14);
  CHECK(ramp.dz == doctest::Approx(1.0 + 1.5 * s).epsilon(1e-12));
  const auto down = interpolate_taxels(frame_from([&](int r, int) { return -s * r; }));
  CHECK(down.dy == doctest::Approx(-s).epsilon(1e-12));
}

TEST_CASE("spline reproduces knot values") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 3.0);
  for (int k = 0; k < 100; ++k) {
    const TactileFrame frame = frame_from([&](int, int) { return u(rng); });
    const TaxelField field(frame);
    for (int r = 0; r < kTaxelRows; ++r) {
      for (int c = 0; c < kTaxelCols; ++c) CHECK(std::abs(field.value(c, r) - frame.at(r, c)) < 1e-10);
    }
    // gradient against finite differences at an interior point
    const double h = 1e-6, x = 1.3, y = 2.2;
    const Eigen::Vector2d g = field.gradient(x, y);
    CHECK(std::abs(g[0] - (field.value(x + h, y) - field.value(x - h, y)) / (2 * h)) < 1e-7);
    CHECK(std::abs(g[1] - (field.value(x, y + h) - field.value(x, y - h)) / (2 * h)) < 1e-7);
  }
}

TEST_CASE("non-finite taxels are rejected") {
  TactileFrame f;
  f.taxels[3] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(interpolate_taxels(f), InvalidInput);
}

TEST_CASE("pad model deformation recovers load") {
  PadModel pad;
  pad.noise_mm = 0.0;
  const auto d = interpolate_taxels(pad.frame(0.0, SensorId::kLeftJaw, 4.0, {0.5, -1.0}, 1));
  CHECK(d.dz == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(d.dx == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(d.dy == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("force mapper training on the synthetic linear model") {
  CalibrationModel model;
  const auto train = synth_calibration(model, 100, 1);
  const auto test = synth_calibration(model, 20, 2);
  TrainingReport report;
  const ForceMapper m = train_force_mapper(train, test, {}, &report);
  CHECK(report.test_rmse < 0.05 * report.force_range);
  CHECK(rmse(m, test) == report.test_rmse);

  SUBCASE("same seed gives identical weights") {
    const ForceMapper again = train_force_mapper(train, test, {});
    CHECK(again == m);
  }
  SUBCASE("monotonic in D_z") {
    double prev = -1e9;
    for (double dz = 0.2; dz <= 4.8; dz += 0.2) {
      const double fz = m({0.0, 0.0, dz})[2];
      CHECK(fz > prev);
      prev = fz;
    }
  }
  SUBCASE("analytic gradient matches finite differences") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int k = 0; k < 20; ++k) {
      const Vec3 x(u(rng), u(rng), 2.5 + u(rng));
      const MatX fd = oracle::central_difference(
          [&](const VecX& v) -> VecX { return m({v[0], v[1], v[2]}); }, x, 1e-6);
      CHECK((m.jacobian({x[0], x[1], x[2]}) - fd).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
  SUBCASE("mapper.v1 round trip") {
    const ForceMapper back = mapper_from_text(mapper_to_text(m));
    CHECK(back == m);
    CHECK_THROWS_AS(mapper_from_text("mapper.v2\n"), SchemaError);
    std::string text = mapper_to_text(m);
    text.replace(text.find("b2"), 2, "bx");
    CHECK_THROWS_AS(mapper_from_text(text), SchemaError);
  }
}

TEST_CASE("zero deformation on zero-centered data") {
  CalibrationModel model;
  model.normal_min = -2.0;
  model.normal_max = 2.0;
  const auto train = synth_calibration(model, 100, 5);
  const auto test = synth_calibration(model, 20, 6);
  TrainingReport report;
  const ForceMapper m = train_force_mapper(train, test, {}, &report);
  CHECK(m({0, 0, 0}).norm() < 0.05 * report.force_range);
}

TEST_CASE("training failure is reported") {
  CalibrationModel model;
  model.noise_fraction = 1.0;
  const auto train = synth_calibration(model, 100, 1);
  const auto test = synth_calibration(model, 20, 2);
  TrainingOptions opt;
  opt.max_epochs = 50;
  CHECK_THROWS_AS(train_force_mapper(train, test, opt), TrainingFailed);
}

TEST_CASE("calibration file round trip") {
  const auto path = std::filesystem::temp_directory_path() / "isot_calibration_test.txt";
  const auto samples = synth_calibration({}, 10, 3);
  write_calibration(path.string(), samples);
  const auto back = read_calibration(path.string());
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].d.dz == samples[i].d.dz);
    CHECK(back[i].f == samples[i].f);
  }
  std::filesystem::remove(path);
}

TEST_CASE("force to base frame") {
  const Vec3 f(1.0, -2.0, 3.0);
  CHECK(force_to_base(f, Mat4::Identity(), Mat4::Identity()) == f);
  Mat4 Rz = Mat4::Identity();
  Rz.topLeftCorner<3, 3>() = Eigen::AngleAxisd(std::numbers::pi, Vec3::UnitZ()).toRotationMatrix();
  const Vec3 g = force_to_base(f, Rz, Mat4::Identity());
  CHECK((g - Vec3(-1.0, 2.0, 3.0)).norm() < 1e-15);
  std::mt19937_64 rng(12);
  for (int k = 0; k < 100; ++k) {
    const Mat4 a = random_transform(rng), b = random_transform(rng);
    Eigen::Vector4d h(f[0], f[1], f[2], 0.0);  // free vector: w = 0
    const Eigen::Vector4d expected = b * a * h;
    CHECK((force_to_base(f, a, b) - expected.head<3>()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("friction cone boundary cases") {
  FrictionParams as_written;
  FrictionParams standard;
  standard.convention = FrictionConvention::kStandard;
  // ratio exactly mu is not strictly greater
  CHECK(check_friction_cone({4.0, 0.0, 3.0}, as_written) == SlipState::kStable);
  CHECK(check_friction_cone({0.0, 0.0, 1.0}, as_written) == SlipState::kSlip);
  CHECK(check_friction_cone({3.0, 4.0, 0.0}, as_written) == SlipState::kStable);
  CHECK(check_friction_cone({3.0, 4.0, 0.0}, standard) == SlipState::kSlip);
  CHECK(check_friction_cone({3.0, 0.0, 4.0}, standard) == SlipState::kStable);
  CHECK(check_friction_cone({3.0, 0.0, 3.9}, standard) == SlipState::kSlip);
  CHECK(check_friction_cone({0.0, 0.0, 1.0}, standard) == SlipState::kStable);
  CHECK_THROWS_AS(check_friction_cone({0.0, 0.0, 0.0}, as_written), InvalidInput);
  FrictionParams bad;
  bad.mu = 0.0;
  CHECK_THROWS_AS(check_friction_cone({1.0, 0.0, 0.0}, bad), InvalidInput);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-3.0, 3.0), c(0.01, 100.0);
  for (int k = 0; k < 1000; ++k) {
    const DeformationVector d{u(rng), u(rng), u(rng)};
    const double s = c(rng);
    const DeformationVector ds{s * d.dx, s * d.dy, s * d.dz};
    for (const auto& p : {as_written, standard}) CHECK(check_friction_cone(d, p) == check_friction_cone(ds, p));
  }
}

TEST_CASE("grip modulation") {
  CHECK(modulate_grip({0, 0, 5.0}, 5.0, 0.5, 0.05) == 0.0);
  CHECK(modulate_grip({0, 0, 1.0}, 5.0, 0.5, 0.05) > 0.0);
  CHECK(modulate_grip({0, 0, 9.0}, 5.0, 0.5, 0.05) < 0.0);
  CHECK(modulate_grip({0, 0, 0.0}, 5.0, 10.0, 0.05) == 0.05);
  CHECK_THROWS_AS(modulate_grip({0, 0, 0}, 5.0, 0.0, 0.05), InvalidInput);

  // closed loop on a 1 N/mm pad, 1 kHz, jaw starting 2 mm short of contact
  const double k_c = 1000.0, dt = 1e-3, target = 5.0;
  double s = -0.002, t = 0.0;
  for (; t < 1.0; t += dt) {
    const double f = k_c * std::max(0.0, s);
    s += dt * modulate_grip({0.0, 0.0, f}, target, 0.02, 0.05);
  }
  CHECK(std::abs(k_c * std::max(0.0, s) - target) < 0.02 * target);
}

TEST_CASE("sensor sample counter") {
  CHECK(tactile_sample_index(0.0) == 0);
  CHECK(tactile_sample_index(1.0) == 115200);
  CHECK(tactile_sample_index(0.001) == 115);
}
