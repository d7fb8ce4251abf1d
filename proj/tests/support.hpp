#pragma once

#include <cmath>
#include <vector>

#include "jse/chain.hpp"
#include "jse/rng.hpp"
#include "jse/sim.hpp"
#include "jse/so3.hpp"
#include "jse/types.hpp"

namespace jse::test {

/// The slot-0 gyro reading of every link at one simulation step, link order.
inline std::vector<Vec3> slot0_gyros(const SimulationResult& sim,
                                     std::size_t step, int link_count) {
  std::vector<Vec3> g(static_cast<std::size_t>(link_count));
  for (const auto& s : sim.imu[step]) {
    if (s.slot == 0) g[static_cast<std::size_t>(s.link)] = s.gyro;
  }
  return g;
}

inline Vec3 random_unit(Rng& rng) {
  Vec3 v = rng.gaussian3();
  while (v.norm() < 1e-6) v = rng.gaussian3();
  return v.normalized();
}

/// Uniform-ish random rotation: random axis, angle uniform in (-pi, pi).
inline Rotation random_rotation(Rng& rng) {
  const double angle = (2.0 * rng.uniform01() - 1.0) * 3.14159;
  return Rotation::axis_angle(random_unit(rng), angle);
}

template <typename A, typename B>
double max_abs_diff(const Eigen::MatrixBase<A>& a,
                    const Eigen::MatrixBase<B>& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

/// Small rotation for sensor misalignment: random axis, angle up to
/// `max_angle` radians.
inline Rotation random_misalignment(Rng& rng, double max_angle = 0.2) {
  return Rotation::axis_angle(random_unit(rng), max_angle * rng.uniform01());
}

/// Four-link leg-style chain: floating pelvis, 3-DoF hip, 1-DoF knee, and an
/// ankle with `ankle_dof` axes (3 by default, or 2 for a pitch+roll ankle);
/// one sensor per link. Joint zero rotations are randomized from `rng`;
/// sensor misalignments and lever arms are randomized when `misaligned_mounts`
/// is set, otherwise the sensors sit at fixed offsets with identity
/// orientation.
inline ChainModel make_leg(Rng& rng, bool misaligned_mounts,
                           bool floating = true, int ankle_dof = 3) {
  std::vector<JointSpec> joints(3);
  joints[0].dof = 3;  // hip
  joints[0].axes = {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
  joints[0].zero_rotation = random_rotation(rng);
  joints[0].origin_in_parent = Vec3(0.05, -0.09, -0.12);
  joints[1].dof = 1;  // knee
  joints[1].axes = {Vec3::UnitY()};
  joints[1].zero_rotation = random_rotation(rng);
  joints[1].origin_in_parent = Vec3(0.0, 0.02, -0.4);
  joints[2].dof = ankle_dof;  // ankle
  if (ankle_dof == 3) {
    joints[2].axes = {Vec3::UnitZ(), Vec3::UnitY(), Vec3::UnitX()};
  } else {
    joints[2].axes = {Vec3::UnitY(), Vec3::UnitX()};
  }
  joints[2].zero_rotation = random_rotation(rng);
  joints[2].origin_in_parent = Vec3(0.01, 0.0, -0.38);

  std::vector<ImuMount> mounts(4);
  for (int l = 0; l < 4; ++l) {
    mounts[static_cast<std::size_t>(l)].link = l;
    mounts[static_cast<std::size_t>(l)].slot = 0;
    if (misaligned_mounts) {
      mounts[static_cast<std::size_t>(l)].position =
          0.15 * Vec3(rng.gaussian(), rng.gaussian(), rng.gaussian());
      mounts[static_cast<std::size_t>(l)].orientation =
          random_misalignment(rng);
    } else {
      mounts[static_cast<std::size_t>(l)].position =
          Vec3(0.03, 0.0, -0.1 * l);
    }
  }
  // The reference sensor's pose must be known, so keep it exact.
  mounts[0].position = Vec3(0.02, 0.01, 0.05);
  mounts[0].orientation = Rotation();
  return ChainModel(floating, joints, mounts);
}

/// Fixed-base single-joint rig: link 0 anchored with its sensor at the
/// joint center, link 1 carrying two sensors at distinct lever arms. The
/// geometry puts the parent sensor exactly at the joint so paired-sensor
/// acceleration recovery is exact.
inline ChainModel make_knee_rig(Rng& rng, bool misaligned_mounts) {
  std::vector<JointSpec> joints(1);
  joints[0].dof = 1;
  joints[0].axes = {Vec3::UnitY()};
  joints[0].origin_in_parent = Vec3(0.0, 0.0, -0.25);

  std::vector<ImuMount> mounts(3);
  mounts[0].link = 0;
  mounts[0].slot = 0;
  mounts[0].position = joints[0].origin_in_parent;  // at the joint center
  mounts[1].link = 1;
  mounts[1].slot = 0;
  mounts[1].position = Vec3(0.04, 0.02, -0.13);
  mounts[2].link = 1;
  mounts[2].slot = 1;
  mounts[2].position = Vec3(-0.05, 0.03, -0.31);
  if (misaligned_mounts) {
    mounts[1].orientation = random_misalignment(rng);
    mounts[2].orientation = random_misalignment(rng);
  }
  return ChainModel(false, joints, mounts);
}

}  // namespace jse::test
