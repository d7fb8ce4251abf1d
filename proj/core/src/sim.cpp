#include "jse/sim.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <numbers>

#include "jse/errors.hpp"

namespace jse {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

Mat3 attitude_derivative(const Mat3& r, const BaseMotionConfig& cfg, double t) {
  return r * skew(base_body_rate(cfg, t));
}

Rotation rk4_attitude_step(const Rotation& r, const BaseMotionConfig& cfg,
                           double t, double dt) {
  const Mat3 r0 = r.matrix();
  const Mat3 k1 = attitude_derivative(r0, cfg, t);
  const Mat3 k2 = attitude_derivative(r0 + 0.5 * dt * k1, cfg, t + 0.5 * dt);
  const Mat3 k3 = attitude_derivative(r0 + 0.5 * dt * k2, cfg, t + 0.5 * dt);
  const Mat3 k4 = attitude_derivative(r0 + dt * k3, cfg, t + dt);
  return Rotation::project(r0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
}

}  // namespace

double NoiseConfig::gyro_sample_sigma() const {
  return gyro_noise_density * std::sqrt(0.5 * sample_rate_hz);
}

double NoiseConfig::accel_sample_sigma() const {
  return accel_noise_density * std::sqrt(0.5 * sample_rate_hz);
}

void NoiseConfig::validate() const {
  if (gyro_noise_density < 0.0 || gyro_bias_walk < 0.0 ||
      accel_noise_density < 0.0 || joint_sensor_noise < 0.0 ||
      initial_gyro_bias < 0.0) {
    throw ConfigError("noise densities and bias magnitudes must be >= 0");
  }
  if (!(sample_rate_hz > 0.0)) {
    throw ConfigError("sample rate must be > 0");
  }
  if (gravity < 0.0) {
    throw ConfigError("gravity magnitude must be >= 0");
  }
}

void TrajectoryConfig::validate() const {
  if (!(duration_s > 0.0)) {
    throw ConfigError("trajectory duration must be > 0");
  }
}

Vec3 base_body_rate(const BaseMotionConfig& cfg, double t) {
  if (cfg.mode == BaseMode::fixed) return Vec3::Zero();
  Vec3 w;
  for (int i = 0; i < 3; ++i) {
    w(i) = cfg.amplitude(i) * std::sin(kTwoPi * cfg.frequency_hz(i) * t +
                                       cfg.phase(i)) +
           cfg.offset(i);
  }
  return w;
}

Vec3 base_body_rate_derivative(const BaseMotionConfig& cfg, double t) {
  if (cfg.mode == BaseMode::fixed) return Vec3::Zero();
  Vec3 a;
  for (int i = 0; i < 3; ++i) {
    const double w = kTwoPi * cfg.frequency_hz(i);
    a(i) = cfg.amplitude(i) * w * std::cos(w * t + cfg.phase(i));
  }
  return a;
}

JointState sine_trajectory(const TrajectoryConfig& cfg, double t) {
  const int bd = cfg.base_dof();
  const int n = bd + static_cast<int>(cfg.joints.size());
  JointState s;
  s.theta = VecX::Zero(n);
  s.theta_dot = VecX::Zero(n);
  s.theta_ddot = VecX::Zero(n);
  if (bd == 3) {
    s.theta_dot.head<3>() = base_body_rate(cfg.base, t);
    s.theta_ddot.head<3>() = base_body_rate_derivative(cfg.base, t);
  }
  for (std::size_t j = 0; j < cfg.joints.size(); ++j) {
    const SineSpec& sp = cfg.joints[j];
    const double w = kTwoPi * sp.frequency_hz;
    const double arg = w * t + sp.phase_rad;
    const int k = bd + static_cast<int>(j);
    s.theta(k) = sp.offset_rad + sp.amplitude_rad * std::sin(arg);
    s.theta_dot(k) = sp.amplitude_rad * w * std::cos(arg);
    s.theta_ddot(k) = -sp.amplitude_rad * w * w * std::sin(arg);
  }
  return s;
}

std::vector<LinkWorldState> world_kinematics(const ChainModel& model,
                                             const Rotation& base_attitude,
                                             const JointState& state) {
  if (state.theta.size() != model.total_dof() ||
      state.theta_dot.size() != model.total_dof() ||
      state.theta_ddot.size() != model.total_dof()) {
    throw ConfigError("state dimension does not match the model");
  }
  std::vector<LinkWorldState> out(static_cast<std::size_t>(model.link_count()));
  LinkWorldState& base = out[0];
  base.attitude = base_attitude;
  if (model.floating_base()) {
    base.angular_velocity = base_attitude * Vec3(state.theta_dot.head<3>());
    base.angular_acceleration = base_attitude * Vec3(state.theta_ddot.head<3>());
  }
  for (int c = 1; c < model.link_count(); ++c) {
    const JointSpec& spec = model.joint(c);
    const LinkWorldState& p = out[static_cast<std::size_t>(c - 1)];
    LinkWorldState& ch = out[static_cast<std::size_t>(c)];

    const Vec3 arm = p.attitude * spec.origin_in_parent;
    ch.origin = p.origin + arm;
    ch.velocity = p.velocity + p.angular_velocity.cross(arm);
    ch.acceleration = p.acceleration + p.angular_acceleration.cross(arm) +
                      p.angular_velocity.cross(p.angular_velocity.cross(arm));

    // Each rotation axis is fixed in the frame reached so far, so its world
    // direction drifts with that frame's angular velocity.
    Rotation r = p.attitude * spec.zero_rotation.inverse();
    Vec3 omega = p.angular_velocity;
    Vec3 alpha = p.angular_acceleration;
    const int off = model.dof_offset(c);
    for (int j = 0; j < spec.dof; ++j) {
      const Vec3 axis_w = r * spec.axes[static_cast<std::size_t>(j)];
      const double rate = state.theta_dot(off + j);
      alpha += axis_w * state.theta_ddot(off + j) +
               omega.cross(axis_w * rate);
      omega += axis_w * rate;
      r = r * Rotation::exp(spec.axes[static_cast<std::size_t>(j)] *
                            state.theta(off + j));
    }
    ch.attitude = r;
    ch.angular_velocity = omega;
    ch.angular_acceleration = alpha;
  }
  return out;
}

PointWorldState mount_world_state(const std::vector<LinkWorldState>& links,
                                  const ImuMount& mount) {
  const LinkWorldState& l = links.at(static_cast<std::size_t>(mount.link));
  const Vec3 arm = l.attitude * mount.position;
  PointWorldState s;
  s.attitude = l.attitude * mount.orientation;
  s.angular_velocity = l.angular_velocity;
  s.angular_acceleration = l.angular_acceleration;
  s.position = l.origin + arm;
  s.velocity = l.velocity + l.angular_velocity.cross(arm);
  s.acceleration = l.acceleration + l.angular_acceleration.cross(arm) +
                   l.angular_velocity.cross(l.angular_velocity.cross(arm));
  return s;
}

Vec3 step_bias(const Vec3& bias, double sigma_walk, double dt, Rng& rng) {
  if (!(dt > 0.0)) {
    throw ConfigError("bias step requires dt > 0");
  }
  return bias + sigma_walk * std::sqrt(dt) * rng.gaussian3();
}

Vec3 draw_initial_bias(double magnitude, Rng& rng) {
  if (magnitude <= 0.0) return Vec3::Zero();
  Vec3 dir = rng.gaussian3();
  while (dir.norm() < 1e-12) dir = rng.gaussian3();
  return magnitude * dir.normalized();
}

std::vector<ImuSample> synthesize_imu(const ChainModel& model,
                                      const std::vector<LinkWorldState>& links,
                                      double timestamp,
                                      const NoiseConfig& noise,
                                      const std::vector<Vec3>& gyro_biases,
                                      Rng& rng) {
  if (links.size() != static_cast<std::size_t>(model.link_count())) {
    throw ConfigError("link state count does not match the model");
  }
  if (gyro_biases.size() != model.mounts().size()) {
    throw ConfigError("bias count does not match the mount count");
  }
  const Vec3 g = noise.gravity_vector();
  const double sg = noise.gyro_sample_sigma();
  const double sa = noise.accel_sample_sigma();
  std::vector<ImuSample> out;
  out.reserve(model.mounts().size());
  for (std::size_t m = 0; m < model.mounts().size(); ++m) {
    const ImuMount& mt = model.mounts()[m];
    const PointWorldState p = mount_world_state(links, mt);
    const Rotation world_to_sensor = p.attitude.inverse();
    ImuSample s;
    s.timestamp = timestamp;
    s.mount = static_cast<int>(m);
    s.link = mt.link;
    s.slot = mt.slot;
    s.gyro = world_to_sensor * p.angular_velocity + gyro_biases[m] +
             sg * rng.gaussian3();
    s.accel = world_to_sensor * (p.acceleration - g) + noise.accel_bias +
              sa * rng.gaussian3();
    s.true_gyro_bias = gyro_biases[m];
    out.push_back(std::move(s));
  }
  return out;
}

SimulationResult simulate(const ChainModel& model, const TrajectoryConfig& traj,
                          const NoiseConfig& noise,
                          const Rotation& initial_base_attitude) {
  noise.validate();
  traj.validate();
  const bool floating = traj.base.mode == BaseMode::floating;
  if (floating != model.floating_base()) {
    throw ConfigError("base motion mode does not match the model's base type");
  }
  const int actuated = model.total_dof() - model.base_dof();
  if (static_cast<int>(traj.joints.size()) != actuated) {
    throw ConfigError("trajectory joint count does not match the model");
  }

  Rng root(noise.seed);
  Rng imu_rng = root.split("imu-noise");
  Rng joint_rng = root.split("joint-sensor");
  Rng bias_walk_rng = root.split("bias-walk");
  Rng bias_init_rng = root.split("bias-init");

  std::vector<Vec3> biases;
  biases.reserve(model.mounts().size());
  for (std::size_t m = 0; m < model.mounts().size(); ++m) {
    biases.push_back(draw_initial_bias(noise.initial_gyro_bias, bias_init_rng));
  }

  const double dt = 1.0 / noise.sample_rate_hz;
  const auto steps = static_cast<std::size_t>(
      std::llround(traj.duration_s * noise.sample_rate_hz)) + 1;

  SimulationResult res;
  res.dt = dt;
  res.times.reserve(steps);
  res.base_attitude.reserve(steps);
  res.truth.reserve(steps);
  res.joint_measurements.reserve(steps);
  res.imu.reserve(steps);

  Rotation attitude = initial_base_attitude;
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) / noise.sample_rate_hz;
    const JointState state = sine_trajectory(traj, t);
    const std::vector<LinkWorldState> links =
        world_kinematics(model, attitude, state);

    res.times.push_back(t);
    res.base_attitude.push_back(attitude);
    res.truth.push_back(state);
    res.imu.push_back(
        synthesize_imu(model, links, t, noise, biases, imu_rng));

    VecX meas = state.theta.tail(actuated);
    for (int j = 0; j < actuated; ++j) {
      meas(j) += noise.joint_sensor_noise * joint_rng.gaussian();
    }
    res.joint_measurements.push_back(std::move(meas));

    for (auto& b : biases) {
      b = step_bias(b, noise.gyro_bias_walk, dt, bias_walk_rng);
    }
    if (floating) {
      attitude = rk4_attitude_step(attitude, traj.base, t, dt);
    }
  }
  return res;
}

TrajectoryConfig calibration_motion(const ChainModel& model, double duration,
                                    Rng& rng, const VecX& locked_pose) {
  if (!model.floating_base()) {
    throw ConfigError("a rigid tumble requires a floating base");
  }
  if (!(duration > 0.0)) {
    throw ConfigError("tumble duration must be > 0");
  }
  const int actuated = model.total_dof() - model.base_dof();
  if (locked_pose.size() != 0 && locked_pose.size() != actuated) {
    throw ConfigError("locked pose dimension does not match the model");
  }
  TrajectoryConfig cfg;
  cfg.duration_s = duration;
  cfg.joints.resize(static_cast<std::size_t>(actuated));
  for (int j = 0; j < actuated; ++j) {
    cfg.joints[static_cast<std::size_t>(j)].offset_rad =
        locked_pose.size() ? locked_pose(j) : 0.0;
  }
  cfg.base.mode = BaseMode::floating;
  cfg.base.amplitude = Vec3(1.2, 1.0, 0.8);
  cfg.base.frequency_hz = Vec3(0.37, 0.53, 0.71);
  cfg.base.phase = Vec3(kTwoPi * rng.uniform01(), kTwoPi * rng.uniform01(),
                        kTwoPi * rng.uniform01());
  cfg.base.offset = Vec3(0.3, -0.2, 0.25);
  return cfg;
}

}  // namespace jse
