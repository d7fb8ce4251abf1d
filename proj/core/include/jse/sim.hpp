#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "jse/chain.hpp"
#include "jse/rng.hpp"
#include "jse/so3.hpp"
#include "jse/types.hpp"

namespace jse {

// Sensor noise, bias, and environment parameters for measurement synthesis.
struct NoiseConfig {
  double gyro_noise_density = 0.0;   // rad/s/sqrt(Hz)
  double gyro_bias_walk = 0.0;       // rad/s^2/sqrt(Hz); Brownian step sigma = walk*sqrt(dt)
  double initial_gyro_bias = 0.0;    // rad/s; magnitude of each gyro's starting bias
  double accel_noise_density = 0.0;  // (m/s^2)/sqrt(Hz)
  Vec3 accel_bias = Vec3::Zero();    // m/s^2, constant per-axis accelerometer offset
  double joint_sensor_noise = 0.0;   // rad, per-sample std of joint position readings
  double sample_rate_hz = 1000.0;    // Hz
  std::uint64_t seed = 0;
  double gravity = 9.81;  // m/s^2; the world gravity vector is (0, 0, -gravity)

  // Per-sample standard deviations at the configured rate (noise bandwidth =
  // half the sample rate).
  double gyro_sample_sigma() const;
  double accel_sample_sigma() const;
  Vec3 gravity_vector() const { return Vec3(0.0, 0.0, -gravity); }
  void validate() const;  // throws ConfigError on negative densities or rate <= 0
};

// One synthesized inertial reading. Gyro and accelerometer values are
// expressed in the sensor frame; the accelerometer reports specific force
// (proper acceleration), so a sensor at rest with identity attitude reads
// (0, 0, +gravity).
struct ImuSample {
  double timestamp = 0.0;  // s
  int mount = 0;           // index into ChainModel::mounts()
  int link = 0;
  int slot = 0;
  Vec3 gyro = Vec3::Zero();   // rad/s
  Vec3 accel = Vec3::Zero();  // m/s^2
  std::optional<Vec3> true_gyro_bias;  // rad/s, when the generator knows it
};

// Analytic sine profile for one joint coordinate.
struct SineSpec {
  double amplitude_rad = 0.0;
  double frequency_hz = 0.0;
  double phase_rad = 0.0;
  double offset_rad = 0.0;
};

// Prescribed body-frame angular-rate profile for the first link.
// fixed: the first link is anchored (no base coordinates in the state).
// floating: the first link rotates freely; each body-axis rate is
//   amplitude*sin(2*pi*frequency*t + phase) + offset.
enum class BaseMode { fixed, floating };

struct BaseMotionConfig {
  BaseMode mode = BaseMode::fixed;
  Vec3 amplitude = Vec3::Zero();     // rad/s
  Vec3 frequency_hz = Vec3::Zero();  // Hz
  Vec3 phase = Vec3::Zero();         // rad
  Vec3 offset = Vec3::Zero();        // rad/s, constant rate component
};

struct TrajectoryConfig {
  std::vector<SineSpec> joints;  // one per actuated degree of freedom
  BaseMotionConfig base;
  double duration_s = 1.0;

  int base_dof() const { return base.mode == BaseMode::floating ? 3 : 0; }
  void validate() const;  // throws ConfigError if duration <= 0
};

// Body-frame angular rate of the first link and its time derivative.
Vec3 base_body_rate(const BaseMotionConfig& cfg, double t);
Vec3 base_body_rate_derivative(const BaseMotionConfig& cfg, double t);

// Evaluates the analytic trajectory: positions, velocities, accelerations.
// For a floating base the leading three coordinates hold body angular rate
// and its derivative; the attitude itself is tracked separately as a
// Rotation, so the leading position entries stay zero.
JointState sine_trajectory(const TrajectoryConfig& cfg, double t);

// World-frame kinematic state of one link.
struct LinkWorldState {
  Rotation attitude;  // link frame -> world frame
  Vec3 angular_velocity = Vec3::Zero();      // rad/s, world frame
  Vec3 angular_acceleration = Vec3::Zero();  // rad/s^2, world frame
  Vec3 origin = Vec3::Zero();                // m, link origin in world
  Vec3 velocity = Vec3::Zero();              // m/s
  Vec3 acceleration = Vec3::Zero();          // m/s^2
};

// World-frame kinematic state of a point rigidly attached to a link.
struct PointWorldState {
  Rotation attitude;  // sensor frame -> world frame
  Vec3 angular_velocity = Vec3::Zero();
  Vec3 angular_acceleration = Vec3::Zero();
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Vec3 acceleration = Vec3::Zero();
};

// Propagates position/velocity/acceleration and angular rate/acceleration
// down the chain analytically (no numeric differentiation). The base link's
// origin is pinned at the world origin. For fixed-base models the base link
// is stationary at `base_attitude`.
std::vector<LinkWorldState> world_kinematics(const ChainModel& model,
                                             const Rotation& base_attitude,
                                             const JointState& state);

// Kinematics of a mounted sensor: lever-arm terms applied to its link state.
PointWorldState mount_world_state(const std::vector<LinkWorldState>& links,
                                  const ImuMount& mount);

// One Brownian bias step: b' = b + sigma_walk*sqrt(dt)*n, n ~ N(0, I).
Vec3 step_bias(const Vec3& bias, double sigma_walk, double dt, Rng& rng);

// Draws an initial bias of magnitude `magnitude` in a uniformly random
// direction (zero vector when magnitude is 0).
Vec3 draw_initial_bias(double magnitude, Rng& rng);

// Synthesizes one reading per mount from the link world states. Noise is
// drawn from `rng` in mount order (gyro triple, then accel triple) so a
// fixed seed yields a fixed stream.
std::vector<ImuSample> synthesize_imu(const ChainModel& model,
                                      const std::vector<LinkWorldState>& links,
                                      double timestamp,
                                      const NoiseConfig& noise,
                                      const std::vector<Vec3>& gyro_biases,
                                      Rng& rng);

// A complete simulated experiment: analytic truth plus synthesized sensors.
struct SimulationResult {
  double dt = 0.0;
  std::vector<double> times;
  std::vector<Rotation> base_attitude;         // first-link frame -> world, per step
  std::vector<JointState> truth;               // full-state ground truth, per step
  std::vector<VecX> joint_measurements;        // noisy actuated positions, per step
  std::vector<std::vector<ImuSample>> imu;     // [step][mount]
  std::size_t step_count() const { return times.size(); }
};

// Runs the trajectory at the configured sample rate. The floating-base
// attitude is integrated with a fourth-order Runge-Kutta step on the
// prescribed body-rate profile and re-orthonormalized each step.
SimulationResult simulate(const ChainModel& model, const TrajectoryConfig& traj,
                          const NoiseConfig& noise,
                          const Rotation& initial_base_attitude = Rotation());

// Builds a locked-joint rigid tumble: zero joint rates, with a smooth
// multi-axis base rate profile whose phases are jittered from `rng`.
// `locked_pose` (actuated coordinates) defaults to all zeros.
TrajectoryConfig calibration_motion(const ChainModel& model, double duration,
                                    Rng& rng,
                                    const VecX& locked_pose = VecX());

}  // namespace jse
