#pragma once

#include <string>
#include <vector>

#include "jse/chain.hpp"
#include "jse/sim.hpp"
#include "jse/so3.hpp"
#include "jse/types.hpp"

namespace jse {

/// Recovered (or assumed) pose of one mounted sensor, with the diagnostics
/// of the solves that produced it.
struct MountPose {
  Rotation orientation;                  // sensor frame -> link frame
  Vec3 position_in_base = Vec3::Zero();  // m, offset from the reference sensor
                                         // in the base-link frame at the
                                         // calibration pose
  Vec3 position_in_link = Vec3::Zero();  // m, sensor position in its link frame
  double orientation_residual = 0.0;     // rad/s, row misfit per sample
  double orientation_excitation = 0.0;   // (rad/s)^2, cross-correlation spread
  double position_residual = 0.0;        // m/s^2, row misfit per sample
  double position_condition = 0.0;
};

/// Per-sensor corrections, parallel to ChainModel::mounts().
struct MountCalibration {
  std::vector<MountPose> mounts;
  bool position_ill_conditioned = false;

  const Rotation& orientation(int mount) const {
    return mounts.at(static_cast<std::size_t>(mount)).orientation;
  }
  const Vec3& position_in_link(int mount) const {
    return mounts.at(static_cast<std::size_t>(mount)).position_in_link;
  }
};

/// Calibration that trusts the model's configured mount poses exactly.
MountCalibration calibration_from_model(const ChainModel& model);

/// Synchronized locked-joint recording used by the calibration solves.
struct CalibrationLog {
  std::vector<double> times;
  std::vector<std::vector<ImuSample>> samples;  // [step][mount]
  std::vector<VecX> joint_positions;            // actuated coordinates per step
  double sample_rate_hz = 0.0;

  static CalibrationLog from_simulation(const SimulationResult& sim);

  std::size_t step_count() const { return times.size(); }

  /// Throws SignalTooShortError when shorter than `min_steps` and
  /// LockedJointViolationError when any actuated coordinate moves more than
  /// `locked_tol_rad` across the log.
  void validate(const ChainModel& model, int min_steps = 200,
                double locked_tol_rad = 1e-3) const;

  /// Mean actuated pose expanded to a full generalized-coordinate vector
  /// (base entries zero).
  VecX mean_pose(const ChainModel& model) const;
};

struct OrientationCalibConfig {
  int reference_mount = 0;  // sensor whose pose is trusted
  int min_steps = 200;
  double locked_tol_rad = 1e-3;
  double excitation_warn = 1e-3;  // (rad/s)^2
};

struct OrientationCalibResult {
  Rotation orientation;     // sensor frame -> link frame
  double residual = 0.0;    // rad/s, Frobenius misfit over sqrt(step count)
  double excitation = 0.0;  // (rad/s)^2, second singular value of the
                            // cross-correlation divided by the step count
  bool low_excitation = false;
};

/// Recovers one sensor's mounting orientation from a locked-joint recording
/// by aligning its rate stream with the reference sensor's stream mapped
/// through the chain. Throws RankDeficientError when the motion spans fewer
/// than two rate directions.
OrientationCalibResult calibrate_orientation(
    const CalibrationLog& log, const ChainModel& model, int mount,
    const OrientationCalibConfig& cfg = {});

struct PositionCalibConfig {
  int reference_mount = 0;
  double cutoff_hz = 25.0;  // zero-phase low-pass ahead of the numeric
                            // rate derivative (the only differentiated path)
  int min_steps = 200;
  double locked_tol_rad = 1e-3;
  double condition_warn = 1e4;
};

struct PositionCalibResult {
  std::vector<Vec3> position_in_base;  // per mount, offset from the reference
  std::vector<Vec3> position_in_link;
  std::vector<double> residual;        // m/s^2 per mount
  double condition = 0.0;              // shared solve matrix conditioning
  bool ill_conditioned = false;
};

/// Recovers every sensor's lever arm relative to the reference sensor from a
/// locked-joint recording, given already-recovered orientations. One shared
/// factorization of the rate-derived solve matrix serves all sensors.
PositionCalibResult calibrate_position(const CalibrationLog& log,
                                       const ChainModel& model,
                                       const MountCalibration& orientations,
                                       const PositionCalibConfig& cfg = {});

/// Runs the orientation stage for every sensor, then the position stage, and
/// merges both into one calibration set. The reference sensor keeps the
/// model's configured pose.
MountCalibration calibrate_all(const CalibrationLog& log,
                               const ChainModel& model,
                               const OrientationCalibConfig& ocfg = {},
                               const PositionCalibConfig& pcfg = {});

/// Zero-phase low-pass: one forward and one backward second-order
/// Butterworth pass with steady-state initialization and reflected-edge
/// padding. Throws SignalTooShortError when the input is shorter than six
/// warm-up lengths and InvalidCutoffError for cutoffs outside (0, rate/2).
std::vector<double> zero_delay_filter(const std::vector<double>& signal,
                                      double cutoff_hz, double sample_rate_hz);
std::vector<Vec3> zero_delay_filter(const std::vector<Vec3>& signal,
                                    double cutoff_hz, double sample_rate_hz);

/// Derivative of a uniformly sampled stream: central differences in the
/// interior, one-sided at the endpoints.
std::vector<Vec3> numeric_derivative(const std::vector<Vec3>& signal,
                                     double sample_rate_hz);

/// Plain-text key/value persistence for calibration sets. Values round-trip
/// losslessly.
void save_calibration(const MountCalibration& cal, const std::string& path);
MountCalibration load_calibration(const std::string& path);

}  // namespace jse
