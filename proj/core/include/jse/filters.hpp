#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "jse/calib.hpp"
#include "jse/chain.hpp"
#include "jse/types.hpp"

namespace jse {

// ---------------------------------------------------------------------------
// Second-order IIR section
// ---------------------------------------------------------------------------

/// One normalized second-order IIR section (the leading denominator
/// coefficient is folded out, so the recursion is
///   y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]).
struct Biquad {
  double b0 = 1.0;
  double b1 = 0.0;
  double b2 = 0.0;
  double a1 = 0.0;
  double a2 = 0.0;

  /// True when both poles lie strictly inside the unit circle.
  bool stable() const;

  /// Magnitude of the frequency response at `freq_hz` for a stream sampled
  /// at `fs_hz`.
  double magnitude(double freq_hz, double fs_hz) const;
};

/// Per-channel delay state (transposed direct form II: two values).
struct BiquadState {
  double s1 = 0.0;
  double s2 = 0.0;
};

/// Second-order Butterworth low-pass designed by the bilinear transform with
/// frequency pre-warping, so the half-power point lands exactly on
/// `cutoff_hz`. The numerator is derived from the denominator sum, making the
/// DC gain exactly one in floating point. Throws InvalidCutoffError unless
/// 0 < cutoff_hz < fs_hz / 2.
Biquad butterworth2_design(double cutoff_hz, double fs_hz);

/// Advance one sample through the section, updating `state` in place.
double biquad_step(const Biquad& f, BiquadState& state, double x);

// ---------------------------------------------------------------------------
// Joint-position + gyro-bias extended Kalman filter
// ---------------------------------------------------------------------------

/// Noise magnitudes for the bias-estimating filter. The gyro and joint-sensor
/// deviations are floored internally (process 1e-6, measurement 1e-12) so a
/// zero-noise configuration stays numerically well-posed and keeps trusting
/// exact measurements over the discretized prediction. The bias walk is not
/// floored: zero freezes the bias states at their initial value.
struct BiasEkfConfig {
  double sigma_theta_meas = 1e-3;  ///< joint-sensor noise, rad
  double sigma_gyro = 5e-3;        ///< per-sample gyro noise, rad/s
  double sigma_bias_walk = 1e-4;   ///< bias random walk, rad/s per sqrt(s)
  double initial_theta_variance = 1e-2;
  double initial_bias_variance = 1e-2;
  /// A covariance diagonal above this triggers CovarianceDivergenceError.
  double variance_ceiling = 1e6;
};

/// Filter state over x = [theta; b], where b stacks the slot-0 gyro biases of
/// the moving links (1..N-1) in link order. Fixed-base chains only: with a
/// floating base the leading coordinates have no direct sensor and the base
/// gyro bias is indistinguishable from base motion.
struct BiasEkfState {
  VecX x;             ///< [theta (dof); b (3 per moving link)]
  MatX p;             ///< covariance of x
  BiasEkfConfig noise;
  double timestamp = 0.0;
  /// Normalized innovation squared of the latest update (chi-square with
  /// dof(theta) degrees of freedom when the filter is consistent).
  double last_nis = 0.0;
  int dof = 0;        ///< joint coordinates; bias entries follow

  VecX theta() const { return x.head(dof); }
  VecX bias() const { return x.tail(x.size() - dof); }
};

/// Initial state centered on `theta0` with zero bias and the configured
/// diagonal covariance. Throws ConfigError for floating-base models or when
/// a moving link lacks a slot-0 sensor.
BiasEkfState bias_ekf_init(const ChainModel& model, const BiasEkfConfig& cfg,
                           const VecX& theta0, double t0 = 0.0);

/// Deterministic part of the process model: advances [theta; b] by one step
/// of the gyro-driven rate solve, theta' = theta + dt * J+ (omega - b),
/// b' = b, where J is the stacked rate map of the moving links and omega the
/// orientation-corrected slot-0 gyro readings of links 1..N-1.
VecX bias_ekf_predict_mean(const ChainModel& model,
                           const MountCalibration& corrections, const VecX& x,
                           int dof, const std::vector<Vec3>& gyro, double dt);

/// Jacobian of bias_ekf_predict_mean with respect to x: the theta block by
/// central finite differences (h = 1e-6), the bias block in closed form.
MatX bias_ekf_process_jacobian(const ChainModel& model,
                               const MountCalibration& corrections,
                               const VecX& x, int dof,
                               const std::vector<Vec3>& gyro, double dt);

/// One predict + update cycle. `gyro` holds one reading per link (link
/// order), sampled at the start of the interval and held across dt;
/// `theta_meas` is the joint-sensor vector at the end of the interval. The
/// update uses the Joseph form and re-symmetrizes the covariance. Throws
/// CovarianceDivergenceError when any variance exceeds the ceiling.
BiasEkfState bias_ekf_step(const BiasEkfState& state, const ChainModel& model,
                           const MountCalibration& corrections,
                           const std::vector<Vec3>& gyro,
                           const VecX& theta_meas, double dt);

// ---------------------------------------------------------------------------
// Joint velocity Kalman filter
// ---------------------------------------------------------------------------

/// Source of the acceleration input driving the velocity filter's prediction.
enum class AccelMode {
  desired,        ///< the commanded trajectory's acceleration
  accelerometer,  ///< paired-accelerometer joint acceleration estimates
  zero            ///< no acceleration knowledge
};

/// Noise magnitudes for the velocity filter, floored like BiasEkfConfig.
struct VelocityKfConfig {
  double sigma_theta_meas = 1e-3;  ///< joint-sensor noise, rad
  /// Rate pseudo-measurement noise, rad/s. Negative selects the automatic
  /// model: the per-sample gyro noise propagated through the constrained
  /// rate solve's normal equations, sigma_gyro^2 (J^T J)^-1.
  double sigma_theta_dot_meas = -1.0;
  double sigma_gyro = 5e-3;   ///< per-sample gyro noise, rad/s
  double sigma_accel = 20.0;  ///< white acceleration strength, rad/s^2
  double initial_variance = 1e-2;
  double variance_ceiling = 1e6;
};

/// Filter state over x = [theta; theta_dot].
struct VelocityKfState {
  VecX x;
  MatX p;
  AccelMode mode = AccelMode::zero;
  VelocityKfConfig noise;
  double timestamp = 0.0;
  double last_nis = 0.0;
  int dof = 0;

  VecX theta() const { return x.head(dof); }
  VecX theta_dot() const { return x.tail(dof); }
};

VelocityKfState velocity_kf_init(int dof, const VelocityKfConfig& cfg,
                                 AccelMode mode, const VecX& theta0,
                                 const VecX& theta_dot0, double t0 = 0.0);

/// One predict + update cycle with exact constant-acceleration integration
/// over dt and a full-state measurement [theta_meas; theta_dot_meas] at the
/// end of the interval. `theta_ddot` is the acceleration input holding across
/// the interval; it is ignored in zero mode. The automatic rate-noise model
/// needs the chain, so `model` must be non-null when sigma_theta_dot_meas < 0
/// (ConfigError otherwise). Throws CovarianceDivergenceError on ceiling
/// violation.
VelocityKfState velocity_kf_step(const VelocityKfState& state,
                                 const VecX& theta_meas,
                                 const VecX& theta_dot_meas,
                                 const VecX& theta_ddot, double dt,
                                 const ChainModel* model = nullptr);

// ---------------------------------------------------------------------------
// Batch driver
// ---------------------------------------------------------------------------

/// Which filter a stream run applies.
enum class StreamFilter { bias_ekf, velocity_kf };

/// One timestep of input for filter_stream. Fields irrelevant to the chosen
/// filter may stay empty.
struct FilterSample {
  double timestamp = 0.0;
  VecX theta_meas;
  VecX theta_dot_meas;   ///< velocity filter only
  VecX theta_ddot;       ///< velocity filter, desired/accelerometer modes
  std::vector<Vec3> gyro;  ///< bias filter only, one per link
};

/// One timestep of output: theta always, rate and bias when the respective
/// filter produces them.
struct FilterEstimate {
  double timestamp = 0.0;
  VecX theta;
  VecX theta_dot;  ///< velocity filter only
  VecX bias;       ///< bias filter only
  double nis = 0.0;
};

struct FilterStreamConfig {
  StreamFilter kind = StreamFilter::velocity_kf;
  BiasEkfConfig ekf;
  VelocityKfConfig kf;
  AccelMode mode = AccelMode::zero;
};

/// Run the chosen filter across a time-ordered sample stream. The first
/// sample initializes the state (zero rates and biases) and is echoed as the
/// first estimate; each later sample advances one step with dt taken from
/// the timestamps, using the previous sample's rate/acceleration inputs (they
/// hold across the interval) and the arriving sample's position
/// measurements. Step errors are rethrown with the failing timestep index
/// appended to the message. Deterministic: identical inputs give identical
/// outputs.
std::vector<FilterEstimate> filter_stream(const ChainModel& model,
                                          const MountCalibration& corrections,
                                          const std::vector<FilterSample>& samples,
                                          const FilterStreamConfig& cfg);

}  // namespace jse
