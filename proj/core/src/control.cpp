#include "jse/control.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <ostream>
#include <string>

#include "jse/errors.hpp"
#include "jse/rng.hpp"

namespace jse {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

/// Plant state advanced between control ticks. The actuator torque is a
/// state only when a lag constant is configured; otherwise the command acts
/// instantaneously and `torque` mirrors it.
struct PlantState {
  double theta = 0.0;
  double theta_dot = 0.0;
  double torque = 0.0;
};

struct PlantDeriv {
  double d_theta;
  double d_theta_dot;
  double d_torque;
};

PlantDeriv plant_deriv(const PlantConfig& plant, const PlantState& s,
                       double command) {
  PlantDeriv d;
  d.d_theta = s.theta_dot;
  const bool lagged = plant.actuator_lag_s > 0.0;
  const double applied = lagged ? s.torque : command;
  d.d_theta_dot = (applied - plant.damping * s.theta_dot) / plant.inertia;
  d.d_torque = lagged ? (command - s.torque) / plant.actuator_lag_s : 0.0;
  return d;
}

/// Classic fixed-step fourth-order integration of the plant over `h` with a
/// zero-order-held torque command.
PlantState integrate_step(const PlantConfig& plant, PlantState s,
                          double command, double h) {
  auto advance = [](const PlantState& base, const PlantDeriv& d, double dt) {
    PlantState out;
    out.theta = base.theta + dt * d.d_theta;
    out.theta_dot = base.theta_dot + dt * d.d_theta_dot;
    out.torque = base.torque + dt * d.d_torque;
    return out;
  };
  const PlantDeriv k1 = plant_deriv(plant, s, command);
  const PlantDeriv k2 = plant_deriv(plant, advance(s, k1, 0.5 * h), command);
  const PlantDeriv k3 = plant_deriv(plant, advance(s, k2, 0.5 * h), command);
  const PlantDeriv k4 = plant_deriv(plant, advance(s, k3, h), command);
  PlantState out;
  out.theta = s.theta + h / 6.0 *
                            (k1.d_theta + 2.0 * k2.d_theta + 2.0 * k3.d_theta +
                             k4.d_theta);
  out.theta_dot =
      s.theta_dot + h / 6.0 *
                        (k1.d_theta_dot + 2.0 * k2.d_theta_dot +
                         2.0 * k3.d_theta_dot + k4.d_theta_dot);
  out.torque = s.torque + h / 6.0 *
                              (k1.d_torque + 2.0 * k2.d_torque +
                               2.0 * k3.d_torque + k4.d_torque);
  if (plant.actuator_lag_s <= 0.0) out.torque = command;
  return out;
}

void validate_plant(const PlantConfig& plant) {
  if (!(plant.inertia > 0.0))
    throw ConfigError("plant inertia must be positive");
  if (!(plant.sample_rate_hz > 0.0))
    throw ConfigError("plant sample rate must be positive");
  if (!(plant.torque_limit > 0.0))
    throw ConfigError("plant torque limit must be positive");
  if (plant.delay_samples < 0)
    throw ConfigError("plant feedback delay must be non-negative");
  if (plant.actuator_lag_s < 0.0)
    throw ConfigError("plant actuator lag must be non-negative");
}

void append_row(std::string& out, const double* values, int count) {
  char buf[64];
  for (int i = 0; i < count; ++i) {
    std::snprintf(buf, sizeof(buf), "%.10g", values[i]);
    if (i) out += '\t';
    out += buf;
  }
  out += '\n';
}

}  // namespace

double SineReference::position(double t) const {
  return offset_rad +
         amplitude_rad * std::sin(kTwoPi * frequency_hz * t + phase_rad);
}

double SineReference::velocity(double t) const {
  const double w = kTwoPi * frequency_hz;
  return amplitude_rad * w * std::cos(w * t + phase_rad);
}

double SineReference::acceleration(double t) const {
  const double w = kTwoPi * frequency_hz;
  return -amplitude_rad * w * w * std::sin(w * t + phase_rad);
}

double pd_step(const PlantConfig& plant, double theta_ref,
               double theta_dot_ref, double theta_fb, double theta_dot_fb,
               double p_gain, double d_gain) {
  const double tau =
      p_gain * (theta_ref - theta_fb) + d_gain * (theta_dot_ref - theta_dot_fb);
  if (plant.torque_limit > 0.0)
    return std::clamp(tau, -plant.torque_limit, plant.torque_limit);
  return tau;
}

TrackingResult run_tracking(const PlantConfig& plant, const SineReference& ref,
                            const Gains& gains, VelocitySource source,
                            const TrackingOptions& opts) {
  validate_plant(plant);
  if (!(opts.duration_s > 0.0))
    throw ConfigError("tracking duration must be positive");

  const double fs = plant.sample_rate_hz;
  const double h = 1.0 / fs;
  const long steps = std::lround(opts.duration_s * fs);
  const int substeps = 4;

  // Sensor noise streams are drawn every tick regardless of the selected
  // source so paired runs across sources face identical realizations.
  Rng pos_rng = Rng(opts.seed).split("position-sensor");
  Rng rate_rng = Rng(opts.seed).split("rate-sensor");

  // Numeric-differentiation pipeline.
  const Biquad lowpass = butterworth2_design(opts.velocity_cutoff_hz, fs);
  BiquadState lp_state;
  double prev_theta_meas = 0.0;
  bool have_prev = false;

  // Fusion pipeline.
  VelocityKfConfig kf_cfg = opts.kf;
  if (kf_cfg.sigma_theta_dot_meas < 0.0)
    kf_cfg.sigma_theta_dot_meas = opts.sigma_rate;
  VelocityKfState kf_state;
  bool kf_ready = false;
  double prev_tick_time = 0.0;

  std::deque<double> command_queue(static_cast<std::size_t>(plant.delay_samples),
                                   0.0);

  TrackingResult result;
  result.gains = gains;
  result.source = source;
  const std::size_t reserve = static_cast<std::size_t>(steps);
  result.time.reserve(reserve);
  result.theta_ref.reserve(reserve);
  result.theta.reserve(reserve);
  result.theta_dot_ref.reserve(reserve);
  result.theta_dot.reserve(reserve);
  result.theta_dot_feedback.reserve(reserve);
  result.torque.reserve(reserve);

  const double bound = 10.0 * std::max(std::abs(ref.amplitude_rad), 0.05);
  bool bounded = true;
  PlantState state;
  state.theta = ref.position(0.0);  // start on the reference; no initial jump

  for (long k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * h;

    const double theta_meas =
        state.theta + opts.sigma_position * pos_rng.gaussian();
    const double rate_meas =
        state.theta_dot + opts.sigma_rate * rate_rng.gaussian();

    double feedback = 0.0;
    switch (source) {
      case VelocitySource::butterworth_numeric: {
        const double raw =
            have_prev ? (theta_meas - prev_theta_meas) * fs : 0.0;
        feedback = biquad_step(lowpass, lp_state, raw);
        break;
      }
      case VelocitySource::gyro_direct:
        feedback = rate_meas;
        break;
      case VelocitySource::kf_filtered: {
        VecX theta_v(1), rate_v(1), accel_v(1);
        theta_v << theta_meas;
        rate_v << rate_meas;
        if (!kf_ready) {
          kf_state = velocity_kf_init(1, kf_cfg, AccelMode::desired, theta_v,
                                      rate_v, t);
          kf_ready = true;
        } else {
          // The acceleration input holds across the elapsed interval, so it
          // is evaluated at the previous tick.
          accel_v << ref.acceleration(prev_tick_time);
          kf_state = velocity_kf_step(kf_state, theta_v, rate_v, accel_v,
                                      t - prev_tick_time);
        }
        feedback = kf_state.theta_dot()(0);
        break;
      }
    }
    prev_theta_meas = theta_meas;
    have_prev = true;
    prev_tick_time = t;

    if (opts.override_velocity_with_truth) feedback = state.theta_dot;

    const double command = pd_step(plant, ref.position(t), ref.velocity(t),
                                   theta_meas, feedback, gains.p, gains.d);
    command_queue.push_back(command);
    const double applied = command_queue.front();
    command_queue.pop_front();

    result.time.push_back(t);
    result.theta_ref.push_back(ref.position(t));
    result.theta.push_back(state.theta);
    result.theta_dot_ref.push_back(ref.velocity(t));
    result.theta_dot.push_back(state.theta_dot);
    result.theta_dot_feedback.push_back(feedback);
    result.torque.push_back(applied);

    const double err = state.theta - ref.position(t);
    if (!std::isfinite(err) || std::abs(err) >= bound) {
      bounded = false;
      result.max_abs_position_error =
          std::isfinite(err)
              ? std::max(result.max_abs_position_error, std::abs(err))
              : std::numeric_limits<double>::infinity();
      // Far past the verdict threshold nothing more can be learned; stop
      // before the state overflows.
      if (!std::isfinite(err) || std::abs(err) > 100.0 * bound) break;
    } else {
      result.max_abs_position_error =
          std::max(result.max_abs_position_error, std::abs(err));
    }

    const double sub_h = h / substeps;
    for (int s = 0; s < substeps; ++s)
      state = integrate_step(plant, state, applied, sub_h);
  }
  result.stable = bounded;

  // RMS over an integer number of reference periods after the transient;
  // the whole tail when the reference has no period.
  const long recorded = static_cast<long>(result.time.size());
  long start = std::lround(std::ceil(opts.transient_s * fs));
  start = std::max<long>(start, 0);
  long stop = recorded;
  if (ref.frequency_hz > 0.0) {
    const double period_s = 1.0 / ref.frequency_hz;
    const double span = opts.duration_s - static_cast<double>(start) * h;
    const double periods = std::floor(span / period_s + 1e-9);
    if (periods >= 1.0)
      stop = std::min<long>(recorded,
                            start + std::lround(periods * period_s * fs));
  }
  if (start < stop) {
    double pos_sq = 0.0, vel_sq = 0.0;
    long n = 0;
    for (long k = start; k < stop; ++k) {
      const double pe = result.theta[k] - result.theta_ref[k];
      const double ve = result.theta_dot[k] - result.theta_dot_ref[k];
      if (!std::isfinite(pe) || !std::isfinite(ve)) continue;
      pos_sq += pe * pe;
      vel_sq += ve * ve;
      ++n;
    }
    if (n > 0) {
      result.rms_position_error = std::sqrt(pos_sq / static_cast<double>(n));
      result.rms_velocity_error = std::sqrt(vel_sq / static_cast<double>(n));
    }
  }
  return result;
}

double find_gain_limit(const PlantConfig& plant, const SineReference& ref,
                       const GainSearch& search, VelocitySource source,
                       const TrackingOptions& opts) {
  if (!(search.resolution > 0.0))
    throw ConfigError("gain search resolution must be positive");
  if (search.upper < search.lower)
    throw ConfigError("gain search bounds are inverted");
  const long top = static_cast<long>(
      std::floor((search.upper - search.lower) / search.resolution + 1e-9));

  auto gain_at = [&](long i) {
    return search.lower + static_cast<double>(i) * search.resolution;
  };
  auto stable_at = [&](long i) {
    Gains g;
    if (search.axis == GainAxis::p) {
      g.p = gain_at(i);
      g.d = search.fixed_gain;
    } else {
      g.p = search.fixed_gain;
      g.d = gain_at(i);
    }
    return run_tracking(plant, ref, g, source, opts).stable;
  };

  if (!stable_at(0))
    throw NoStableGainError("tracking diverges at the lowest searched " +
                            std::string(search.axis == GainAxis::p ? "P" : "D") +
                            " gain " + std::to_string(gain_at(0)));
  if (stable_at(top)) return gain_at(top);

  long lo = 0;  // stable
  long hi = top;  // unstable
  while (hi - lo > 1) {
    const long mid = lo + (hi - lo) / 2;
    if (stable_at(mid))
      lo = mid;
    else
      hi = mid;
  }
  return gain_at(lo);
}

const char* velocity_source_name(VelocitySource source) {
  switch (source) {
    case VelocitySource::butterworth_numeric:
      return "butterworth_numeric";
    case VelocitySource::gyro_direct:
      return "gyro_direct";
    case VelocitySource::kf_filtered:
      return "kf_filtered";
  }
  return "unknown";
}

void write_tracking_series(std::ostream& out, const TrackingResult& result) {
  std::string text;
  text.reserve(result.time.size() * 80 + 128);
  text +=
      "time\ttheta_ref\ttheta\ttheta_dot_ref\ttheta_dot\ttheta_dot_feedback\t"
      "torque\n";
  for (std::size_t k = 0; k < result.time.size(); ++k) {
    const double row[7] = {result.time[k],          result.theta_ref[k],
                           result.theta[k],         result.theta_dot_ref[k],
                           result.theta_dot[k],     result.theta_dot_feedback[k],
                           result.torque[k]};
    append_row(text, row, 7);
  }
  out << text;
}

void write_tracking_summary(std::ostream& out,
                            const std::vector<TrackingResult>& results) {
  out << "source\tp\td\tstable\trms_position_error\trms_velocity_error\t"
         "max_abs_position_error\n";
  for (const TrackingResult& r : results) {
    std::string text = velocity_source_name(r.source);
    text += '\t';
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", r.gains.p);
    text += buf;
    text += '\t';
    std::snprintf(buf, sizeof(buf), "%.10g", r.gains.d);
    text += buf;
    text += r.stable ? "\t1\t" : "\t0\t";
    std::snprintf(buf, sizeof(buf), "%.10g", r.rms_position_error);
    text += buf;
    text += '\t';
    std::snprintf(buf, sizeof(buf), "%.10g", r.rms_velocity_error);
    text += buf;
    text += '\t';
    std::snprintf(buf, sizeof(buf), "%.10g", r.max_abs_position_error);
    text += buf;
    out << text << '\n';
  }
}

}  // namespace jse
