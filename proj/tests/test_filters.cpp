#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "doctest.h"
#include "jse/errors.hpp"
#include "jse/estimator.hpp"
#include "jse/filters.hpp"
#include "jse/sim.hpp"
#include "support.hpp"

using namespace jse;
using jse::test::make_knee_rig;
using jse::test::make_leg;
using jse::test::max_abs_diff;
using jse::test::slot0_gyros;

namespace {

TrajectoryConfig fixed_leg_motion(double duration) {
  TrajectoryConfig traj;
  traj.duration_s = duration;
  traj.joints.resize(7);
  const double amps[7] = {0.25, 0.2, 0.15, 0.3, 0.18, 0.22, 0.12};
  const double freqs[7] = {0.5, 0.7, 0.4, 0.6, 0.45, 0.55, 0.65};
  for (int j = 0; j < 7; ++j) {
    traj.joints[static_cast<std::size_t>(j)] =
        SineSpec{amps[j], freqs[j], 0.3 * j, 0.1 * (j % 3)};
  }
  return traj;
}

void check_covariance_health(const MatX& p) {
  CHECK(max_abs_diff(p, p.transpose()) < 1e-10);
  Eigen::SelfAdjointEigenSolver<MatX> eig(p);
  CHECK(eig.eigenvalues().minCoeff() > -1e-9);
}

/// Argmax of the cross-correlation between an estimate series and the truth
/// series it should follow, searched over shifts in [lo, hi] samples.
int correlation_lag(const std::vector<double>& estimate,
                    const std::vector<double>& truth, int lo, int hi) {
  int best_shift = lo;
  double best = -1e300;
  const int n = static_cast<int>(estimate.size());
  for (int shift = lo; shift <= hi; ++shift) {
    double corr = 0.0;
    for (int k = std::max(0, shift); k < n && k - shift < n; ++k) {
      if (k - shift < 0) continue;
      corr += estimate[static_cast<std::size_t>(k)] *
              truth[static_cast<std::size_t>(k - shift)];
    }
    if (corr > best) {
      best = corr;
      best_shift = shift;
    }
  }
  return best_shift;
}

}  // namespace

// ---------------------------------------------------------------------------
// Low-pass design
// ---------------------------------------------------------------------------

TEST_CASE("low-pass design rejects out-of-range cutoffs") {
  CHECK_THROWS_AS(butterworth2_design(0.0, 1000.0), InvalidCutoffError);
  CHECK_THROWS_AS(butterworth2_design(-5.0, 1000.0), InvalidCutoffError);
  CHECK_THROWS_AS(butterworth2_design(500.0, 1000.0), InvalidCutoffError);
  CHECK_THROWS_AS(butterworth2_design(600.0, 1000.0), InvalidCutoffError);
  CHECK_THROWS_AS(butterworth2_design(25.0, 0.0), InvalidCutoffError);
}

TEST_CASE("low-pass design has unit gain at zero frequency") {
  for (const auto [fc, fs] : {std::pair{25.0, 1000.0}, std::pair{5.0, 100.0},
                              std::pair{40.0, 200.0}, std::pair{100.0, 1000.0}}) {
    const Biquad f = butterworth2_design(fc, fs);
    CHECK(std::abs(f.magnitude(0.0, fs) - 1.0) < 1e-15);
    CHECK(f.stable());

    // A held constant input settles on exactly that constant.
    BiquadState st;
    double y = 0.0;
    for (int k = 0; k < 5000; ++k) y = biquad_step(f, st, 1.0);
    CHECK(std::abs(y - 1.0) < 1e-12);
  }
}

TEST_CASE("the cutoff frequency sits at the half-power point") {
  for (const auto [fc, fs] : {std::pair{25.0, 1000.0}, std::pair{5.0, 100.0},
                              std::pair{40.0, 200.0}, std::pair{100.0, 1000.0}}) {
    const Biquad f = butterworth2_design(fc, fs);
    CHECK(std::abs(f.magnitude(fc, fs) - std::numbers::sqrt2 / 2.0) < 1e-6);
  }
}

TEST_CASE("digital response matches the analog prototype through the frequency map") {
  // Independent route: evaluate 1 / (s^2 + sqrt(2) s + 1) directly at the
  // pre-warped bilinear image of each digital frequency, never touching the
  // designed coefficients.
  for (const auto [fc, fs] : {std::pair{25.0, 1000.0}, std::pair{7.0, 120.0}}) {
    const Biquad f = butterworth2_design(fc, fs);
    const double warp = 1.0 / std::tan(std::numbers::pi * fc / fs);
    for (int i = 1; i <= 50; ++i) {
      const double freq = 0.49 * fs * i / 51.0;
      const double w = 2.0 * std::numbers::pi * freq / fs;
      const std::complex<double> zinv = std::polar(1.0, -w);
      const std::complex<double> s = warp * (1.0 - zinv) / (1.0 + zinv);
      const std::complex<double> h =
          1.0 / (s * s + std::numbers::sqrt2 * s + 1.0);
      CHECK(std::abs(f.magnitude(freq, fs) - std::abs(h)) < 1e-12);
    }
  }
}

TEST_CASE("the sample recursion matches the direct difference equation") {
  const Biquad f = butterworth2_design(25.0, 1000.0);
  Rng rng(5);
  BiquadState st;
  double x1 = 0.0, x2 = 0.0, y1 = 0.0, y2 = 0.0;
  for (int k = 0; k < 300; ++k) {
    const double x = rng.gaussian();
    const double via_state = biquad_step(f, st, x);
    const double direct = f.b0 * x + f.b1 * x1 + f.b2 * x2 - f.a1 * y1 - f.a2 * y2;
    CHECK(std::abs(via_state - direct) < 1e-13);
    x2 = x1;
    x1 = x;
    y2 = y1;
    y1 = direct;
  }

  Biquad unstable;
  unstable.a1 = -2.2;
  unstable.a2 = 1.3;
  CHECK_FALSE(unstable.stable());
}

TEST_CASE("slow signals pass while fast signals shrink") {
  const Biquad f = butterworth2_design(25.0, 1000.0);
  const double fs = 1000.0;
  for (const auto [freq, expected] :
       {std::pair{1.0, 1.0}, std::pair{200.0, 0.0156}}) {
    BiquadState st;
    double peak = 0.0;
    for (int k = 0; k < 4000; ++k) {
      const double x = std::sin(2.0 * std::numbers::pi * freq * k / fs);
      const double y = biquad_step(f, st, x);
      if (k > 2000) peak = std::max(peak, std::abs(y));
    }
    CHECK(peak == doctest::Approx(expected).epsilon(0.02));
  }
}

// ---------------------------------------------------------------------------
// Bias-estimating filter
// ---------------------------------------------------------------------------

TEST_CASE("the bias filter rejects floating bases and mismatched sizes") {
  Rng rng(61);
  const ChainModel floating = make_leg(rng, false, true);
  CHECK_THROWS_AS(bias_ekf_init(floating, BiasEkfConfig{}, VecX::Zero(10)),
                  ConfigError);

  const ChainModel fixed = make_leg(rng, false, false);
  CHECK_THROWS_AS(bias_ekf_init(fixed, BiasEkfConfig{}, VecX::Zero(5)),
                  ConfigError);
  const auto state = bias_ekf_init(fixed, BiasEkfConfig{}, VecX::Zero(7));
  CHECK(state.x.size() == 7 + 9);
  CHECK_THROWS_AS(bias_ekf_step(state, fixed, calibration_from_model(fixed),
                                std::vector<Vec3>(4, Vec3::Zero()),
                                VecX::Zero(6), 1e-3),
                  ConfigError);
  CHECK_THROWS_AS(bias_ekf_step(state, fixed, calibration_from_model(fixed),
                                std::vector<Vec3>(4, Vec3::Zero()),
                                VecX::Zero(7), 0.0),
                  ConfigError);
}

TEST_CASE("constant-rate motion integrates exactly for ten seconds") {
  Rng rng(62);
  const ChainModel model = make_leg(rng, true, false);
  const MountCalibration cal = calibration_from_model(model);
  VecX theta0(7), rate(7);
  theta0 << 0.2, -0.1, 0.3, 0.4, -0.2, 0.1, -0.3;
  rate << 0.04, -0.02, 0.03, 0.05, -0.01, 0.02, -0.03;

  const double dt = 1e-3;
  const int steps = 10000;
  BiasEkfState state = bias_ekf_init(model, BiasEkfConfig{}, theta0);
  double worst_theta = 0.0;
  for (int k = 1; k <= steps; ++k) {
    // Gyro readings at the interval start, from the rate map at the true pose.
    const VecX theta_prev = theta0 + (k - 1) * dt * rate;
    const MatX j = stacked_angular_jacobian(model, theta_prev);
    const VecX link_rates = j * rate;
    std::vector<Vec3> gyro(4, Vec3::Zero());
    for (int link = 1; link < 4; ++link) {
      gyro[static_cast<std::size_t>(link)] =
          cal.orientation(link).inverse() * link_rates.segment<3>(3 * (link - 1));
    }
    const VecX theta_now = theta0 + k * dt * rate;
    state = bias_ekf_step(state, model, cal, gyro, theta_now, dt);
    worst_theta = std::max(worst_theta, max_abs_diff(state.theta(), theta_now));
  }
  CHECK(worst_theta < 1e-6);
  CHECK(state.bias().cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("a zero-noise configuration tracks a simulated task exactly") {
  Rng rng(63);
  const ChainModel model = make_leg(rng, true, false);
  const MountCalibration cal = calibration_from_model(model);
  NoiseConfig noise;  // noiseless, 1 kHz
  const SimulationResult sim = simulate(model, fixed_leg_motion(1.0), noise);

  BiasEkfConfig cfg;
  cfg.sigma_theta_meas = 0.0;
  cfg.sigma_gyro = 0.0;
  cfg.sigma_bias_walk = 0.0;
  cfg.initial_theta_variance = 0.0;
  cfg.initial_bias_variance = 0.0;
  BiasEkfState state = bias_ekf_init(model, cfg, sim.truth[0].theta);

  double worst_theta = 0.0;
  double worst_bias = 0.0;
  for (std::size_t k = 1; k < sim.step_count(); ++k) {
    state = bias_ekf_step(state, model, cal,
                          slot0_gyros(sim, k - 1, model.link_count()),
                          sim.joint_measurements[k], sim.dt);
    worst_theta =
        std::max(worst_theta, max_abs_diff(state.theta(), sim.truth[k].theta));
    worst_bias = std::max(worst_bias, state.bias().cwiseAbs().maxCoeff());
  }
  CHECK(worst_theta < 1e-6);
  CHECK(worst_bias < 1e-6);
}

TEST_CASE("the process linearization matches an independent finite difference") {
  Rng rng(64);
  const ChainModel model = make_leg(rng, true, false);
  const MountCalibration cal = calibration_from_model(model);
  const double dt = 1e-3;
  const double h = 1e-5;

  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    VecX x(16);
    for (int i = 0; i < 7; ++i) x(i) = 1.2 * (rng.uniform01() - 0.5);
    for (int i = 7; i < 16; ++i) x(i) = 0.1 * (rng.uniform01() - 0.5);
    std::vector<Vec3> gyro(4);
    for (auto& g : gyro) g = rng.gaussian3();

    const MatX f = bias_ekf_process_jacobian(model, cal, x, 7, gyro, dt);
    MatX fd(16, 16);
    for (int col = 0; col < 16; ++col) {
      VecX xp = x, xm = x;
      xp(col) += h;
      xm(col) -= h;
      fd.col(col) = (bias_ekf_predict_mean(model, cal, xp, 7, gyro, dt) -
                     bias_ekf_predict_mean(model, cal, xm, 7, gyro, dt)) /
                    (2.0 * h);
    }
    worst = std::max(worst, (f - fd).cwiseAbs().maxCoeff() /
                                fd.cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("a wrong initial bias guess converges on a static pose") {
  Rng rng(65);
  const ChainModel model = make_leg(rng, true, false);
  const MountCalibration cal = calibration_from_model(model);
  TrajectoryConfig traj;
  traj.duration_s = 5.0;
  traj.joints.resize(7);
  for (int j = 0; j < 7; ++j) {
    traj.joints[static_cast<std::size_t>(j)].offset_rad = 0.1 * (j - 3);
  }
  NoiseConfig noise;
  noise.sample_rate_hz = 500.0;
  noise.gyro_noise_density = 5e-3 / std::sqrt(250.0);
  noise.joint_sensor_noise = 1e-3;
  noise.seed = 404;
  const SimulationResult sim = simulate(model, traj, noise);

  BiasEkfConfig cfg;
  cfg.sigma_gyro = 5e-3;
  cfg.sigma_theta_meas = 1e-3;
  cfg.sigma_bias_walk = 1e-4;
  BiasEkfState state = bias_ekf_init(model, cfg, sim.joint_measurements[0]);
  state.x.tail(9).setConstant(0.1);  // deliberately wrong: truth is zero

  for (std::size_t k = 1; k < sim.step_count(); ++k) {
    state = bias_ekf_step(state, model, cal,
                          slot0_gyros(sim, k - 1, model.link_count()),
                          sim.joint_measurements[k], sim.dt);
  }
  const VecX bias = state.bias();
  const VecX diag = state.p.diagonal();
  const VecX sd = diag.tail(9).cwiseSqrt();
  for (int i = 0; i < 9; ++i) {
    CHECK(std::abs(bias(i)) <= 3.0 * sd(i));
  }
  CHECK(bias.cwiseAbs().maxCoeff() < 0.02);
}

TEST_CASE("drifting sensor offsets are tracked through a moving task") {
  Rng rng(66);
  const ChainModel model = make_leg(rng, true, false);
  const MountCalibration cal = calibration_from_model(model);
  NoiseConfig noise;
  noise.sample_rate_hz = 1000.0;
  noise.gyro_noise_density = 5e-3 / std::sqrt(500.0);
  noise.joint_sensor_noise = 1e-3;
  noise.initial_gyro_bias = 0.05;
  noise.gyro_bias_walk = 0.01;
  noise.seed = 607;
  const SimulationResult sim = simulate(model, fixed_leg_motion(8.0), noise);

  BiasEkfConfig cfg;
  cfg.sigma_gyro = 5e-3;
  cfg.sigma_theta_meas = 1e-3;
  cfg.sigma_bias_walk = 0.01;
  cfg.initial_bias_variance = 0.05 * 0.05;
  BiasEkfState state = bias_ekf_init(model, cfg, sim.joint_measurements[0]);

  // True per-link biases, expressed in link coordinates like the filter's.
  const auto true_bias_at = [&](std::size_t k) {
    VecX b(9);
    for (const auto& s : sim.imu[k]) {
      if (s.slot == 0 && s.link >= 1) {
        b.segment<3>(3 * (s.link - 1)) =
            cal.orientation(s.mount) * s.true_gyro_bias.value();
      }
    }
    return b;
  };

  double err_sq = 0.0;
  double truth_sq = 0.0;
  double nis_sum = 0.0;
  std::size_t tail_count = 0;
  const std::size_t tail_start = 5000;
  for (std::size_t k = 1; k < sim.step_count(); ++k) {
    state = bias_ekf_step(state, model, cal,
                          slot0_gyros(sim, k - 1, model.link_count()),
                          sim.joint_measurements[k], sim.dt);
    if (k % 400 == 0) check_covariance_health(state.p);
    if (k >= tail_start) {
      const VecX bt = true_bias_at(k);
      err_sq += (state.bias() - bt).squaredNorm();
      truth_sq += bt.squaredNorm();
      nis_sum += state.last_nis;
      ++tail_count;
    }
  }
  const double rmse = std::sqrt(err_sq / (9.0 * tail_count));
  const double magnitude = std::sqrt(truth_sq / (9.0 * tail_count));
  CHECK(rmse < 0.3 * magnitude);

  // Innovation whiteness: mean normalized innovation energy near its
  // chi-square expectation.
  const double mean_nis = nis_sum / static_cast<double>(tail_count) / 7.0;
  CHECK(mean_nis > 0.8);
  CHECK(mean_nis < 1.2);
}

TEST_CASE("covariance ceilings turn mistuning into an error") {
  Rng rng(67);
  const ChainModel model = make_leg(rng, false, false);
  const MountCalibration cal = calibration_from_model(model);
  BiasEkfConfig cfg;
  cfg.variance_ceiling = 1e-9;
  const BiasEkfState state = bias_ekf_init(model, cfg, VecX::Zero(7));
  CHECK_THROWS_AS(bias_ekf_step(state, model, cal,
                                std::vector<Vec3>(4, Vec3::Zero()),
                                VecX::Zero(7), 1e-3),
                  CovarianceDivergenceError);
}

// ---------------------------------------------------------------------------
// Velocity filter
// ---------------------------------------------------------------------------

TEST_CASE("constant-acceleration motion tracks to machine precision") {
  const int dof = 2;
  VecX theta0(dof), v0(dof), accel(dof);
  theta0 << 0.1, -0.2;
  v0 << 0.5, -0.3;
  accel << 0.8, 0.4;

  VelocityKfConfig cfg;
  cfg.sigma_theta_meas = 0.0;
  cfg.sigma_theta_dot_meas = 0.0;
  cfg.sigma_accel = 0.0;
  cfg.initial_variance = 0.0;
  VelocityKfState state =
      velocity_kf_init(dof, cfg, AccelMode::desired, theta0, v0);

  const double dt = 1e-3;
  double worst = 0.0;
  for (int k = 1; k <= 1000; ++k) {
    const double t = k * dt;
    const VecX theta = theta0 + v0 * t + 0.5 * accel * t * t;
    const VecX rate = v0 + accel * t;
    state = velocity_kf_step(state, theta, rate, accel, dt);
    worst = std::max(worst, max_abs_diff(state.theta(), theta));
    worst = std::max(worst, max_abs_diff(state.theta_dot(), rate));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("velocity filter validates inputs") {
  VelocityKfConfig cfg;
  CHECK_THROWS_AS(
      velocity_kf_init(0, cfg, AccelMode::zero, VecX(), VecX()), ConfigError);
  CHECK_THROWS_AS(velocity_kf_init(2, cfg, AccelMode::zero, VecX::Zero(3),
                                   VecX::Zero(2)),
                  ConfigError);
  const auto state =
      velocity_kf_init(2, cfg, AccelMode::desired, VecX::Zero(2), VecX::Zero(2));
  CHECK_THROWS_AS(velocity_kf_step(state, VecX::Zero(2), VecX::Zero(2),
                                   VecX::Zero(3), 1e-3),
                  ConfigError);
  // Automatic rate-noise propagation without a model is refused.
  VelocityKfConfig auto_cfg;
  auto_cfg.sigma_theta_dot_meas = -1.0;
  const auto s2 = velocity_kf_init(2, auto_cfg, AccelMode::zero, VecX::Zero(2),
                                   VecX::Zero(2));
  CHECK_THROWS_AS(
      velocity_kf_step(s2, VecX::Zero(2), VecX::Zero(2), VecX(), 1e-3),
      ConfigError);
}

TEST_CASE("acceleration knowledge removes estimator lag") {
  Rng rng(71);
  const ChainModel model = make_knee_rig(rng, true);
  const MountCalibration cal = calibration_from_model(model);
  TrajectoryConfig traj;
  traj.duration_s = 3.0;
  traj.joints = {SineSpec{0.5, 1.0, 0.4, 0.0}};

  for (int seed = 0; seed < 10; ++seed) {
    NoiseConfig noise;
    noise.sample_rate_hz = 1000.0;
    noise.gyro_noise_density = 5e-3 / std::sqrt(500.0);
    noise.joint_sensor_noise = 1e-3;
    noise.seed = 500 + static_cast<std::uint64_t>(seed);
    const SimulationResult sim = simulate(model, traj, noise);

    VelocityKfConfig cfg;
    cfg.sigma_theta_meas = 1e-3;
    cfg.sigma_gyro = 5e-3;
    cfg.sigma_theta_dot_meas = -1.0;  // propagate through the rate solve
    // Trusting the acceleration input is what separates the modes: with an
    // exact input the prediction stays on phase, while a zero stand-in drags
    // the estimate tens of milliseconds behind.
    cfg.sigma_accel = 0.1;

    std::vector<double> est_desired, est_zero, truth_rate;
    for (const AccelMode mode : {AccelMode::desired, AccelMode::zero}) {
      VelocityKfState state = velocity_kf_init(
          1, cfg, mode, sim.joint_measurements[0], VecX::Zero(1));
      std::vector<double>& out =
          (mode == AccelMode::desired) ? est_desired : est_zero;
      for (std::size_t k = 1; k < sim.step_count(); ++k) {
        const VecX theta = sim.joint_measurements[k];
        const auto vel = joint_velocities_constrained(
            model, theta, slot0_gyros(sim, k, model.link_count()), cal);
        VecX u(1);
        u << sim.truth[k - 1].theta_ddot(0);
        state = velocity_kf_step(state, theta, vel.rates, u, sim.dt, &model);
        if (k >= 600) out.push_back(state.theta_dot()(0));
      }
    }
    for (std::size_t k = 600; k < sim.step_count(); ++k) {
      truth_rate.push_back(sim.truth[k].theta_dot(0));
    }

    const int lag_desired = correlation_lag(est_desired, truth_rate, -50, 150);
    const int lag_zero = correlation_lag(est_zero, truth_rate, -50, 150);
    CHECK(lag_desired >= 0);
    CHECK(lag_zero >= 0);
    CHECK(lag_desired < lag_zero);
  }
}

TEST_CASE("smoothing beats the raw rate measurement when still") {
  Rng rng(72);
  const ChainModel model = make_leg(rng, true, false);
  const MountCalibration cal = calibration_from_model(model);
  TrajectoryConfig traj;
  traj.duration_s = 3.0;
  traj.joints.resize(7);
  NoiseConfig noise;
  noise.sample_rate_hz = 500.0;
  noise.gyro_noise_density = 5e-3 / std::sqrt(250.0);
  noise.joint_sensor_noise = 1e-3;
  noise.seed = 88;
  const SimulationResult sim = simulate(model, traj, noise);

  VelocityKfConfig cfg;
  cfg.sigma_theta_meas = 1e-3;
  cfg.sigma_gyro = 5e-3;
  cfg.sigma_theta_dot_meas = -1.0;
  cfg.sigma_accel = 0.5;
  VelocityKfState state = velocity_kf_init(7, cfg, AccelMode::zero,
                                           sim.joint_measurements[0],
                                           VecX::Zero(7));
  double meas_sq = 0.0;
  double est_sq = 0.0;
  double nis_sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 1; k < sim.step_count(); ++k) {
    const auto vel = joint_velocities_constrained(
        model, sim.joint_measurements[k],
        slot0_gyros(sim, k, model.link_count()), cal);
    state = velocity_kf_step(state, sim.joint_measurements[k], vel.rates,
                             VecX(), sim.dt, &model);
    if (k % 100 == 0) check_covariance_health(state.p);
    if (k >= 500) {  // truth rate is zero on a static pose
      meas_sq += vel.rates.squaredNorm();
      est_sq += state.theta_dot().squaredNorm();
      nis_sum += state.last_nis;
      ++count;
    }
  }
  CHECK(est_sq < meas_sq);
  const double mean_nis = nis_sum / static_cast<double>(count) / 14.0;
  CHECK(mean_nis > 0.7);
  CHECK(mean_nis < 1.3);
}

TEST_CASE("covariance ceilings apply to the velocity filter too") {
  VelocityKfConfig cfg;
  cfg.variance_ceiling = 1e-9;
  cfg.sigma_theta_dot_meas = 0.05;  // explicit rate noise; no model attached
  const auto state =
      velocity_kf_init(2, cfg, AccelMode::zero, VecX::Zero(2), VecX::Zero(2));
  CHECK_THROWS_AS(
      velocity_kf_step(state, VecX::Zero(2), VecX::Zero(2), VecX(), 1e-3),
      CovarianceDivergenceError);
}

// ---------------------------------------------------------------------------
// Stream driver
// ---------------------------------------------------------------------------

TEST_CASE("the stream driver equals manual stepping and reports failing steps") {
  Rng rng(73);
  const ChainModel model = make_leg(rng, true, false);
  const MountCalibration cal = calibration_from_model(model);
  NoiseConfig noise;
  noise.sample_rate_hz = 200.0;
  noise.gyro_noise_density = 5e-3 / std::sqrt(100.0);
  noise.joint_sensor_noise = 1e-3;
  noise.seed = 29;
  TrajectoryConfig traj = fixed_leg_motion(0.5);
  const SimulationResult sim = simulate(model, traj, noise);

  std::vector<FilterSample> samples;
  for (std::size_t k = 0; k < sim.step_count(); ++k) {
    FilterSample s;
    s.timestamp = sim.times[k];
    s.theta_meas = sim.joint_measurements[k];
    s.gyro = slot0_gyros(sim, k, model.link_count());
    const auto vel = joint_velocities_constrained(model, s.theta_meas, s.gyro, cal);
    s.theta_dot_meas = vel.rates;
    s.theta_ddot = sim.truth[k].theta_ddot;
    samples.push_back(std::move(s));
  }

  SUBCASE("empty stream gives empty output") {
    FilterStreamConfig cfg;
    CHECK(filter_stream(model, cal, {}, cfg).empty());
  }

  SUBCASE("a single sample echoes the initial state") {
    FilterStreamConfig cfg;
    cfg.kind = StreamFilter::velocity_kf;
    const auto out = filter_stream(model, cal, {samples[0]}, cfg);
    REQUIRE(out.size() == 1);
    CHECK(out[0].timestamp == samples[0].timestamp);
    CHECK(max_abs_diff(out[0].theta, samples[0].theta_meas) == 0.0);
    CHECK(out[0].theta_dot.cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("velocity stream equals a manual step loop and repeats bit-identically") {
    FilterStreamConfig cfg;
    cfg.kind = StreamFilter::velocity_kf;
    cfg.mode = AccelMode::desired;
    const auto out = filter_stream(model, cal, samples, cfg);
    const auto again = filter_stream(model, cal, samples, cfg);
    REQUIRE(out.size() == samples.size());
    REQUIRE(again.size() == out.size());

    VelocityKfState state = velocity_kf_init(
        7, cfg.kf, cfg.mode, samples[0].theta_meas, VecX::Zero(7),
        samples[0].timestamp);
    for (std::size_t i = 1; i < samples.size(); ++i) {
      state = velocity_kf_step(state, samples[i].theta_meas,
                               samples[i].theta_dot_meas,
                               samples[i - 1].theta_ddot,
                               samples[i].timestamp - samples[i - 1].timestamp,
                               &model);
      CHECK(max_abs_diff(out[i].theta, state.theta()) == 0.0);
      CHECK(max_abs_diff(out[i].theta_dot, state.theta_dot()) == 0.0);
      CHECK(max_abs_diff(out[i].theta_dot, again[i].theta_dot) == 0.0);
    }
  }

  SUBCASE("bias stream equals a manual step loop") {
    FilterStreamConfig cfg;
    cfg.kind = StreamFilter::bias_ekf;
    const auto out = filter_stream(model, cal, samples, cfg);
    REQUIRE(out.size() == samples.size());

    BiasEkfState state = bias_ekf_init(model, cfg.ekf, samples[0].theta_meas,
                                       samples[0].timestamp);
    for (std::size_t i = 1; i < samples.size(); ++i) {
      state = bias_ekf_step(state, model, cal, samples[i - 1].gyro,
                            samples[i].theta_meas,
                            samples[i].timestamp - samples[i - 1].timestamp);
      CHECK(max_abs_diff(out[i].theta, state.theta()) == 0.0);
      CHECK(max_abs_diff(out[i].bias, state.bias()) == 0.0);
    }
  }

  SUBCASE("step failures carry the timestep index") {
    FilterStreamConfig cfg;
    cfg.kind = StreamFilter::velocity_kf;
    cfg.kf.variance_ceiling = 1e-9;
    try {
      filter_stream(model, cal, samples, cfg);
      FAIL("expected a divergence error");
    } catch (const CovarianceDivergenceError& e) {
      CHECK(std::string(e.what()).find("timestep 1") != std::string::npos);
    }

    auto bad = samples;
    bad[3].timestamp = bad[2].timestamp;  // non-advancing clock
    FilterStreamConfig vcfg;
    vcfg.kind = StreamFilter::velocity_kf;
    try {
      filter_stream(model, cal, bad, vcfg);
      FAIL("expected a config error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("timestep 3") != std::string::npos);
    }
  }
}
