#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "jse/filters.hpp"

namespace jse {

// ---------------------------------------------------------------------------
// Surrogate plant
// ---------------------------------------------------------------------------

/// Single torque-driven joint: a double integrator with viscous damping,
/// an optional first-order actuator lag, and a fixed feedback computation
/// delay measured in control samples.
struct PlantConfig {
  double inertia = 0.5;        ///< kg*m^2, must be > 0
  double damping = 0.1;        ///< N*m*s, viscous
  double torque_limit = 500.0; ///< N*m, symmetric command clamp
  double actuator_lag_s = 0.0; ///< first-order lag time constant; 0 = direct
  double sample_rate_hz = 1000.0;  ///< control / sensor rate
  int delay_samples = 1;       ///< command-to-torque latency, >= 0
};

/// Sinusoidal single-joint reference.
struct SineReference {
  double amplitude_rad = 0.25;
  double frequency_hz = 0.5;
  double phase_rad = 0.0;
  double offset_rad = 0.0;

  double position(double t) const;
  double velocity(double t) const;
  double acceleration(double t) const;
};

// ---------------------------------------------------------------------------
// Tracking runs
// ---------------------------------------------------------------------------

/// Which pipeline supplies the velocity feedback term.
enum class VelocitySource {
  butterworth_numeric,  ///< position sensor, backward difference, causal low-pass
  gyro_direct,          ///< rate sensed directly on the moving link
  kf_filtered           ///< position + rate fused by the velocity filter
};

/// Proportional-derivative gain pair.
struct Gains {
  double p = 0.0;
  double d = 0.0;
};

/// Run options shared by every source. Sensor noise levels are surrogate
/// values exposed here because no canonical figures exist for them.
struct TrackingOptions {
  double duration_s = 8.0;
  double transient_s = 1.0;    ///< settling span excluded from RMS windows
  double sigma_position = 0.0; ///< position-sensor noise, rad, per sample
  double sigma_rate = 0.0;     ///< rate-sensor noise, rad/s, per sample
  double velocity_cutoff_hz = 25.0;  ///< low-pass for the numeric source
  /// Fusion settings for the kf_filtered source. A negative rate-measurement
  /// noise is replaced by sigma_rate (there is no chain to derive it from).
  VelocityKfConfig kf{};
  std::uint64_t seed = 1;
  /// Diagnostic bypass: feed the exact plant rate to the controller no
  /// matter which source is selected, to verify the harness plumbing is
  /// source-independent.
  bool override_velocity_with_truth = false;
};

/// Outcome of one closed-loop run. RMS figures are computed over an integer
/// number of reference periods starting after the transient span (the whole
/// post-transient tail when the reference is constant) and are meaningful
/// only when `stable` is true.
struct TrackingResult {
  Gains gains{};
  VelocitySource source = VelocitySource::gyro_direct;
  bool stable = false;
  double rms_position_error = 0.0;  ///< rad
  double rms_velocity_error = 0.0;  ///< rad/s, true rate vs reference rate
  double max_abs_position_error = 0.0;  ///< over the full run
  /// Per-control-step series, truncated early if the run diverges hard.
  std::vector<double> time;
  std::vector<double> theta_ref;
  std::vector<double> theta;
  std::vector<double> theta_dot_ref;
  std::vector<double> theta_dot;
  std::vector<double> theta_dot_feedback;
  std::vector<double> torque;
};

/// Proportional-derivative law with symmetric saturation:
/// clamp(p (theta_ref - theta_fb) + d (rate_ref - rate_fb), +-torque_limit).
double pd_step(const PlantConfig& plant, double theta_ref, double theta_dot_ref,
               double theta_fb, double theta_dot_fb, double p_gain,
               double d_gain);

/// Closed-loop sine tracking at the plant's sample rate. The plant state is
/// integrated with a fixed-step fourth-order scheme between control ticks;
/// the applied torque is the command issued `delay_samples` ticks earlier
/// (zeros before the loop closes). The stability verdict requires the
/// position error to stay below 10x the reference amplitude (floored at
/// 0.05 rad for near-zero references) for the whole run; divergence is a
/// result, never an exception. Deterministic for a fixed seed. Throws
/// ConfigError for non-positive inertia, sample rate, duration, torque limit,
/// or a negative delay.
TrackingResult run_tracking(const PlantConfig& plant, const SineReference& ref,
                            const Gains& gains, VelocitySource source,
                            const TrackingOptions& opts);

// ---------------------------------------------------------------------------
// Gain-limit search
// ---------------------------------------------------------------------------

/// Which gain the search varies; the other one stays fixed.
enum class GainAxis { p, d };

struct GainSearch {
  GainAxis axis = GainAxis::p;
  double fixed_gain = 12.0;  ///< value of the non-searched gain
  double lower = 10.0;       ///< first grid point; must be stable
  double upper = 4000.0;     ///< search ceiling
  double resolution = 10.0;  ///< grid spacing, > 0
};

/// Largest gain on the grid {lower + k*resolution <= upper} whose tracking
/// run is stable, found by bisection over the grid (assumes stability is
/// monotone across the bracket, which the caller arranges by choosing
/// bounds). Returns `upper`'s grid point directly when it is stable. Throws
/// NoStableGainError when even `lower` diverges, and ConfigError for an
/// empty or inverted grid.
double find_gain_limit(const PlantConfig& plant, const SineReference& ref,
                       const GainSearch& search, VelocitySource source,
                       const TrackingOptions& opts);

// ---------------------------------------------------------------------------
// Delimited-text emission
// ---------------------------------------------------------------------------

/// Human-readable tag for a velocity source ("butterworth_numeric", ...).
const char* velocity_source_name(VelocitySource source);

/// Tab-separated per-step series with a header row:
/// time, theta_ref, theta, theta_dot_ref, theta_dot, theta_dot_feedback,
/// torque.
void write_tracking_series(std::ostream& out, const TrackingResult& result);

/// Tab-separated one-row-per-run summary with a header row: source, p, d,
/// stable, rms_position_error, rms_velocity_error, max_abs_position_error.
void write_tracking_summary(std::ostream& out,
                            const std::vector<TrackingResult>& results);

}  // namespace jse
