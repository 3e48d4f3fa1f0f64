#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "isot/fsm.hpp"
#include "isot/kinematics.hpp"

namespace isot {

/// One control tick of a trial.
struct TickRecord {
  double t = 0.0;
  Phase phase = Phase::kHoming;
  VecX q;
  Vec3 ee = Vec3::Zero();
  Quat orientation = Quat::Identity();
  Vec3 wrist = Vec3::Zero();  // leader wrist, filtered
  Vec3 force = Vec3::Zero();  // contact force, base frame
  Vec3 deformation = Vec3::Zero();
  bool slip = false;
  std::vector<std::string> events;  // ';'-separated in the event column
};

struct ContactSample {
  double t = 0.0;
  double left_mm = 0.0;
  double right_mm = 0.0;
};

struct TrialLog {
  int trial = 0;
  std::string task;
  std::vector<TickRecord> ticks;
  std::vector<TransitionRecord> transitions;
  std::vector<ContactSample> contacts;
};

// ---------------------------------------------------------------------------
// CSV files: trial_NN.csv, trial_NN_transitions.csv, trial_NN_contacts.csv

std::string tick_csv_header(int dof);
std::string tick_csv_row(const TickRecord& r);
std::vector<TickRecord> ticks_from_csv(const std::string& text);

std::string contacts_to_csv(const std::vector<ContactSample>& samples);
std::vector<ContactSample> contacts_from_csv(const std::string& text);

std::string trial_stem(int trial);  // "trial_01"
TrialLog load_trial(const std::string& dir, int trial);
/// Every trial_NN.csv in `dir`, ordered by trial number.
std::vector<TrialLog> load_trials(const std::string& dir);

/// Shortest round-trip decimal form.
std::string format_double(double v);

// ---------------------------------------------------------------------------
// Metrics

inline constexpr double kOnsetSpeed = 1e-3;  // m/s
inline constexpr int kResampleCount = 200;

struct PolarDelta {
  double dr = 0.0;      // m
  double dtheta = 0.0;  // rad
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)
  int count = 0;
};

MeanStd mean_std(const std::vector<double>& v);

/// End-effector polar change (pre-grasp minus homing) about the base origin,
/// taken at the first Homing -> PreGrasp transition and the first exit from
/// PreGrasp. Empty when the trial lacks either.
std::optional<PolarDelta> approach_delta(const TrialLog& trial);

struct ApproachStats {
  MeanStd dr;
  MeanStd dtheta;
  int excluded = 0;
};

/// Throws InvalidInput with fewer than two usable trials.
ApproachStats approach_adaptation(const std::vector<TrialLog>& trials);

/// Sum over transitions into PreGrasp, Grasp, Manipulate and Homing of the
/// time from the latest event token naming the trigger to the first tick at
/// or after the transition whose end-effector speed exceeds 1e-3 m/s.
double coordination_latency(const TrialLog& trial);

/// Jaw contact travel, sum of 1/2 (|d left| + |d right|) in mm, between
/// grasp establishment (first entry into Manipulate) and the end of
/// manipulation (exit to Release, else end of log). Empty without a grasp.
std::optional<double> grasp_correction(const TrialLog& trial);

/// End-effector path resampled on normalized time.
std::vector<Vec3> resample_path(const TrialLog& trial, int n = kResampleCount);
double path_length(const std::vector<Vec3>& path);

/// Mean over consecutive trial pairs of RMS pointwise deviation divided by
/// the mean path length of the pair, in percent.
double cumulative_posture_deviation(const std::vector<TrialLog>& trials);

/// 1 - mean pairwise mean pointwise distance / workspace diagonal, in [0, 1].
double task_repeatability(const std::vector<TrialLog>& trials, double workspace_diagonal);

struct MetricsReport {
  std::string scenario;
  std::string task;
  std::uint64_t seed = 0;
  int trials = 0;
  ApproachStats approach;
  MeanStd latency;
  std::optional<MeanStd> grasp_correction;
  double deviation_pct = 0.0;
  double repeatability = 0.0;
  double workspace_diagonal = 0.0;
  std::vector<std::string> warnings;
};

MetricsReport compute_report(const std::vector<TrialLog>& trials, double workspace_diagonal);

/// Aligned text table with one row per metric.
std::string report_table(const MetricsReport& report);
/// `report.v1` JSON document.
std::string report_json(const MetricsReport& report);

}  // namespace isot
