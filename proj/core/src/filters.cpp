#include "jse/filters.hpp"

#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "jse/errors.hpp"
#include "jse/estimator.hpp"

namespace jse {

namespace {

// The process floor sits far above the measurement floor on purpose: the
// one-step propagation carries discretization error, so a noise-free
// configuration must still trust an exact measurement over the prediction.
constexpr double kProcessSigmaFloor = 1e-6;
constexpr double kMeasSigmaFloor = 1e-12;

double floored_var(double sigma, double floor) {
  const double s = std::max(sigma, floor);
  return s * s;
}

/// Moore-Penrose pseudo-inverse with the usual singular-value cut.
MatX pinv(const MatX& a) {
  Eigen::JacobiSVD<MatX> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VecX& sv = svd.singularValues();
  const double cut = static_cast<double>(std::max(a.rows(), a.cols())) *
                     std::numeric_limits<double>::epsilon() *
                     (sv.size() > 0 ? sv(0) : 0.0);
  VecX inv = VecX::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cut) inv(i) = 1.0 / sv(i);
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

void symmetrize(MatX& p) { p = 0.5 * (p + p.transpose()).eval(); }

void check_ceiling(const MatX& p, double ceiling, const char* which) {
  const double worst = p.diagonal().maxCoeff();
  if (!(worst <= ceiling)) {
    throw CovarianceDivergenceError(
        std::string(which) + " variance " + std::to_string(worst) +
        " exceeds the configured ceiling " + std::to_string(ceiling));
  }
}

/// Stacked, orientation-corrected readings of the moving links (1..N-1).
VecX moving_link_rates(const ChainModel& model,
                       const MountCalibration& corrections,
                       const std::vector<Vec3>& gyro) {
  const auto corrected = correct_gyro_readings(model, gyro, corrections);
  const int moving = model.link_count() - 1;
  VecX out(3 * moving);
  for (int i = 0; i < moving; ++i) {
    out.segment<3>(3 * i) = corrected[static_cast<std::size_t>(i + 1)];
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Biquad
// ---------------------------------------------------------------------------

bool Biquad::stable() const {
  // Second-order stability triangle.
  return std::abs(a2) < 1.0 && std::abs(a1) < 1.0 + a2;
}

double Biquad::magnitude(double freq_hz, double fs_hz) const {
  const double w = 2.0 * std::numbers::pi * freq_hz / fs_hz;
  const std::complex<double> z1 = std::polar(1.0, -w);
  const std::complex<double> z2 = z1 * z1;
  const std::complex<double> num = b0 + b1 * z1 + b2 * z2;
  const std::complex<double> den = 1.0 + a1 * z1 + a2 * z2;
  return std::abs(num / den);
}

Biquad butterworth2_design(double cutoff_hz, double fs_hz) {
  if (!(fs_hz > 0.0) || !(cutoff_hz > 0.0) || !(cutoff_hz < 0.5 * fs_hz)) {
    throw InvalidCutoffError("cutoff " + std::to_string(cutoff_hz) +
                             " Hz outside (0, " + std::to_string(0.5 * fs_hz) +
                             ") for sample rate " + std::to_string(fs_hz) +
                             " Hz");
  }
  // Bilinear transform of the normalized analog prototype
  // 1 / (s^2 + sqrt(2) s + 1) with the frequency axis pre-warped so the
  // half-power point lands on cutoff_hz exactly.
  const double c = 1.0 / std::tan(std::numbers::pi * cutoff_hz / fs_hz);
  const double c2 = c * c;
  const double a0 = 1.0 + std::numbers::sqrt2 * c + c2;
  Biquad f;
  f.a1 = 2.0 * (1.0 - c2) / a0;
  f.a2 = (1.0 - std::numbers::sqrt2 * c + c2) / a0;
  // Deriving the numerator from the denominator sum makes the DC gain
  // (b0+b1+b2)/(1+a1+a2) equal to one exactly, not just to roundoff.
  f.b0 = (1.0 + f.a1 + f.a2) / 4.0;
  f.b1 = 2.0 * f.b0;
  f.b2 = f.b0;
  return f;
}

double biquad_step(const Biquad& f, BiquadState& state, double x) {
  // Transposed direct form II.
  const double y = f.b0 * x + state.s1;
  state.s1 = f.b1 * x - f.a1 * y + state.s2;
  state.s2 = f.b2 * x - f.a2 * y;
  return y;
}

// ---------------------------------------------------------------------------
// Bias EKF
// ---------------------------------------------------------------------------

BiasEkfState bias_ekf_init(const ChainModel& model, const BiasEkfConfig& cfg,
                           const VecX& theta0, double t0) {
  if (model.floating_base()) {
    throw ConfigError(
        "the bias filter needs a fixed base: floating-base coordinates have "
        "no direct sensor, leaving the base gyro bias unobservable");
  }
  const int dof = model.total_dof();
  if (theta0.size() != dof) {
    throw ConfigError("initial joint vector has " +
                      std::to_string(theta0.size()) + " entries, model has " +
                      std::to_string(dof));
  }
  // One slot-0 gyro per link is required; probing the correction path now
  // surfaces a missing sensor at init rather than mid-run.
  (void)correct_gyro_readings(
      model,
      std::vector<Vec3>(static_cast<std::size_t>(model.link_count()),
                        Vec3::Zero()),
      calibration_from_model(model));

  const int bias_dim = 3 * (model.link_count() - 1);
  BiasEkfState s;
  s.dof = dof;
  s.noise = cfg;
  s.timestamp = t0;
  s.x = VecX::Zero(dof + bias_dim);
  s.x.head(dof) = theta0;
  s.p = MatX::Zero(dof + bias_dim, dof + bias_dim);
  s.p.topLeftCorner(dof, dof) =
      cfg.initial_theta_variance * MatX::Identity(dof, dof);
  s.p.bottomRightCorner(bias_dim, bias_dim) =
      cfg.initial_bias_variance * MatX::Identity(bias_dim, bias_dim);
  return s;
}

VecX bias_ekf_predict_mean(const ChainModel& model,
                           const MountCalibration& corrections, const VecX& x,
                           int dof, const std::vector<Vec3>& gyro, double dt) {
  const VecX theta = x.head(dof);
  const VecX b = x.tail(x.size() - dof);
  const MatX j = stacked_angular_jacobian(model, theta);
  VecX out = x;
  out.head(dof) +=
      dt * (pinv(j) * (moving_link_rates(model, corrections, gyro) - b));
  return out;
}

MatX bias_ekf_process_jacobian(const ChainModel& model,
                               const MountCalibration& corrections,
                               const VecX& x, int dof,
                               const std::vector<Vec3>& gyro, double dt) {
  const Eigen::Index n = x.size();
  MatX f = MatX::Identity(n, n);
  // Joint block by central differences of the mean propagation.
  const double h = 1e-6;
  for (int jcol = 0; jcol < dof; ++jcol) {
    VecX xp = x;
    VecX xm = x;
    xp(jcol) += h;
    xm(jcol) -= h;
    const VecX fp =
        bias_ekf_predict_mean(model, corrections, xp, dof, gyro, dt);
    const VecX fm =
        bias_ekf_predict_mean(model, corrections, xm, dof, gyro, dt);
    f.col(jcol).head(dof) = (fp.head(dof) - fm.head(dof)) / (2.0 * h);
  }
  // Bias block in closed form: d theta' / d b = -dt * J+.
  const MatX j = stacked_angular_jacobian(model, x.head(dof));
  f.topRightCorner(dof, n - dof) = -dt * pinv(j);
  return f;
}

BiasEkfState bias_ekf_step(const BiasEkfState& state, const ChainModel& model,
                           const MountCalibration& corrections,
                           const std::vector<Vec3>& gyro,
                           const VecX& theta_meas, double dt) {
  if (!(dt > 0.0)) {
    throw ConfigError("filter step needs dt > 0, got " + std::to_string(dt));
  }
  if (theta_meas.size() != state.dof) {
    throw ConfigError("joint measurement has " +
                      std::to_string(theta_meas.size()) +
                      " entries, filter state has " +
                      std::to_string(state.dof));
  }
  const int dof = state.dof;
  const Eigen::Index n = state.x.size();
  const Eigen::Index bias_dim = n - dof;
  const BiasEkfConfig& cfg = state.noise;

  // Predict.
  BiasEkfState next = state;
  next.timestamp = state.timestamp + dt;
  next.x = bias_ekf_predict_mean(model, corrections, state.x, dof, gyro, dt);
  const MatX f =
      bias_ekf_process_jacobian(model, corrections, state.x, dof, gyro, dt);
  MatX q = MatX::Zero(n, n);
  const MatX jplus = pinv(stacked_angular_jacobian(model, state.x.head(dof)));
  q.topLeftCorner(dof, dof) = (dt * dt) *
                              floored_var(cfg.sigma_gyro, kProcessSigmaFloor) *
                              (jplus * jplus.transpose());
  // The bias walk is deliberately not floored: zero means "the biases are
  // known constants" and freezes those states instead of letting the filter
  // attribute model error to them.
  q.bottomRightCorner(bias_dim, bias_dim) =
      dt * cfg.sigma_bias_walk * cfg.sigma_bias_walk *
      MatX::Identity(bias_dim, bias_dim);
  MatX p = f * state.p * f.transpose() + q;

  // Update with the joint-sensor measurement y = [I 0] x + v.
  const double r_var = floored_var(cfg.sigma_theta_meas, kMeasSigmaFloor);
  const MatX s_mat =
      p.topLeftCorner(dof, dof) + r_var * MatX::Identity(dof, dof);
  const Eigen::LLT<MatX> s_llt(s_mat);
  const VecX innovation = theta_meas - next.x.head(dof);
  const MatX k = s_llt.solve(p.topRows(dof)).transpose();  // n x dof
  next.last_nis = innovation.dot(s_llt.solve(innovation));
  next.x += k * innovation;
  MatX i_kh = MatX::Identity(n, n);
  i_kh.leftCols(dof) -= k;
  p = i_kh * p * i_kh.transpose() + k * (r_var * MatX::Identity(dof, dof)) *
                                        k.transpose();  // Joseph form
  symmetrize(p);
  next.p = p;
  check_ceiling(next.p, cfg.variance_ceiling, "bias filter");
  return next;
}

// ---------------------------------------------------------------------------
// Velocity KF
// ---------------------------------------------------------------------------

VelocityKfState velocity_kf_init(int dof, const VelocityKfConfig& cfg,
                                 AccelMode mode, const VecX& theta0,
                                 const VecX& theta_dot0, double t0) {
  if (dof <= 0) {
    throw ConfigError("velocity filter needs at least one coordinate");
  }
  if (theta0.size() != dof || theta_dot0.size() != dof) {
    throw ConfigError("initial vectors must have " + std::to_string(dof) +
                      " entries each");
  }
  VelocityKfState s;
  s.dof = dof;
  s.mode = mode;
  s.noise = cfg;
  s.timestamp = t0;
  s.x = VecX::Zero(2 * dof);
  s.x.head(dof) = theta0;
  s.x.tail(dof) = theta_dot0;
  s.p = cfg.initial_variance * MatX::Identity(2 * dof, 2 * dof);
  return s;
}

VelocityKfState velocity_kf_step(const VelocityKfState& state,
                                 const VecX& theta_meas,
                                 const VecX& theta_dot_meas,
                                 const VecX& theta_ddot, double dt,
                                 const ChainModel* model) {
  if (!(dt > 0.0)) {
    throw ConfigError("filter step needs dt > 0, got " + std::to_string(dt));
  }
  const int dof = state.dof;
  if (theta_meas.size() != dof || theta_dot_meas.size() != dof) {
    throw ConfigError("measurement vectors must have " + std::to_string(dof) +
                      " entries each");
  }
  VecX u = VecX::Zero(dof);
  if (state.mode != AccelMode::zero) {
    if (theta_ddot.size() != dof) {
      throw ConfigError("acceleration input must have " + std::to_string(dof) +
                        " entries in desired/accelerometer mode");
    }
    u = theta_ddot;
  }
  const VelocityKfConfig& cfg = state.noise;

  // Predict: exact constant-acceleration kinematics over dt.
  VelocityKfState next = state;
  next.timestamp = state.timestamp + dt;
  next.x.head(dof) += dt * state.x.tail(dof) + 0.5 * dt * dt * u;
  next.x.tail(dof) += dt * u;
  MatX f = MatX::Identity(2 * dof, 2 * dof);
  f.topRightCorner(dof, dof) = dt * MatX::Identity(dof, dof);
  const double qa = floored_var(cfg.sigma_accel, kProcessSigmaFloor);
  MatX q(2 * dof, 2 * dof);
  const MatX eye = MatX::Identity(dof, dof);
  q.topLeftCorner(dof, dof) = 0.25 * dt * dt * dt * dt * qa * eye;
  q.topRightCorner(dof, dof) = 0.5 * dt * dt * dt * qa * eye;
  q.bottomLeftCorner(dof, dof) = 0.5 * dt * dt * dt * qa * eye;
  q.bottomRightCorner(dof, dof) = dt * dt * qa * eye;
  MatX p = f * state.p * f.transpose() + q;

  // Full-state measurement y = x + v.
  MatX r = MatX::Zero(2 * dof, 2 * dof);
  r.topLeftCorner(dof, dof) =
      floored_var(cfg.sigma_theta_meas, kMeasSigmaFloor) * eye;
  if (cfg.sigma_theta_dot_meas >= 0.0) {
    r.bottomRightCorner(dof, dof) =
        floored_var(cfg.sigma_theta_dot_meas, kMeasSigmaFloor) * eye;
  } else {
    if (model == nullptr) {
      throw ConfigError(
          "automatic rate-noise propagation needs the chain model");
    }
    // Per-sample gyro noise mapped through the constrained rate solve:
    // cov(theta_dot) = sigma^2 (J^T J)^-1 at the predicted pose.
    const MatX j = stacked_angular_jacobian(*model, next.x.head(dof));
    const double sg = floored_var(cfg.sigma_gyro, kMeasSigmaFloor);
    r.bottomRightCorner(dof, dof) =
        sg * pinv(j.transpose() * j) + kMeasSigmaFloor * eye;
  }
  VecX y(2 * dof);
  y.head(dof) = theta_meas;
  y.tail(dof) = theta_dot_meas;
  const VecX innovation = y - next.x;
  const MatX s_mat = p + r;
  const Eigen::LLT<MatX> s_llt(s_mat);
  const MatX k = s_llt.solve(p).transpose();
  next.last_nis = innovation.dot(s_llt.solve(innovation));
  next.x += k * innovation;
  const MatX i_kh = MatX::Identity(2 * dof, 2 * dof) - k;
  p = i_kh * p * i_kh.transpose() + k * r * k.transpose();  // Joseph form
  symmetrize(p);
  next.p = p;
  check_ceiling(next.p, cfg.variance_ceiling, "velocity filter");
  return next;
}

// ---------------------------------------------------------------------------
// Batch driver
// ---------------------------------------------------------------------------

std::vector<FilterEstimate> filter_stream(const ChainModel& model,
                                          const MountCalibration& corrections,
                                          const std::vector<FilterSample>& samples,
                                          const FilterStreamConfig& cfg) {
  std::vector<FilterEstimate> out;
  if (samples.empty()) return out;
  out.reserve(samples.size());

  const int dof = model.total_dof();
  const auto push = [&out](double t, const VecX& theta, const VecX& rate,
                           const VecX& bias, double nis) {
    FilterEstimate e;
    e.timestamp = t;
    e.theta = theta;
    e.theta_dot = rate;
    e.bias = bias;
    e.nis = nis;
    out.push_back(std::move(e));
  };

  if (cfg.kind == StreamFilter::bias_ekf) {
    BiasEkfState state = bias_ekf_init(model, cfg.ekf, samples[0].theta_meas,
                                       samples[0].timestamp);
    push(state.timestamp, state.theta(), VecX(), state.bias(), 0.0);
    for (std::size_t i = 1; i < samples.size(); ++i) {
      const double dt = samples[i].timestamp - samples[i - 1].timestamp;
      try {
        // Rate inputs are held over the interval they were measured at the
        // start of; position measurements apply at the arrival instant.
        state = bias_ekf_step(state, model, corrections, samples[i - 1].gyro,
                              samples[i].theta_meas, dt);
      } catch (const CovarianceDivergenceError& e) {
        throw CovarianceDivergenceError(std::string(e.what()) +
                                        " at timestep " + std::to_string(i));
      } catch (const ConfigError& e) {
        throw ConfigError(std::string(e.what()) + " at timestep " +
                          std::to_string(i));
      }
      push(state.timestamp, state.theta(), VecX(), state.bias(),
           state.last_nis);
    }
    return out;
  }

  VelocityKfState state =
      velocity_kf_init(dof, cfg.kf, cfg.mode, samples[0].theta_meas,
                       VecX::Zero(dof), samples[0].timestamp);
  push(state.timestamp, state.theta(), state.theta_dot(), VecX(), 0.0);
  for (std::size_t i = 1; i < samples.size(); ++i) {
    const double dt = samples[i].timestamp - samples[i - 1].timestamp;
    try {
      // As above: the acceleration input spans the interval, measurements
      // apply at arrival.
      state = velocity_kf_step(state, samples[i].theta_meas,
                               samples[i].theta_dot_meas,
                               samples[i - 1].theta_ddot, dt, &model);
    } catch (const CovarianceDivergenceError& e) {
      throw CovarianceDivergenceError(std::string(e.what()) + " at timestep " +
                                      std::to_string(i));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(e.what()) + " at timestep " +
                        std::to_string(i));
    }
    push(state.timestamp, state.theta(), state.theta_dot(), VecX(),
         state.last_nis);
  }
  return out;
}

}  // namespace jse
