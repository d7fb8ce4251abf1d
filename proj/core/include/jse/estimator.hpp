#pragma once

#include <vector>

#include "jse/calib.hpp"
#include "jse/chain.hpp"
#include "jse/types.hpp"

namespace jse {

enum class VelocityMethod { unconstrained, constrained };

struct VelocitySolveReport {
  /// unconstrained: one 3-vector block per link — block 0 is the base
  /// angular velocity in the base frame, block i (i >= 1) the relative
  /// angular velocity of link i w.r.t. link i-1 in link i's frame.
  /// constrained: the model's generalized-rate layout (total_dof values).
  VecX rates;
  double residual = 0.0;   // rad/s; always 0 for the exact sequential solve
  double condition = 1.0;  // ratio of extreme singular values (constrained)
  bool ill_conditioned = false;
  VelocityMethod method = VelocityMethod::unconstrained;
};

/// Stacked link-frame angular Jacobian: three rows per link, links ordered
/// from the first gyro-bearing link up. A floating base contributes the base
/// link's rows; a fixed base skips them (that link cannot move).
MatX stacked_angular_jacobian(const ChainModel& model, const VecX& theta);

/// Sensor-frame gyro readings mapped into their link frames via the
/// calibration, one per link (slot-0 mounts).
std::vector<Vec3> correct_gyro_readings(const ChainModel& model,
                                        const std::vector<Vec3>& gyro,
                                        const MountCalibration& corrections);

/// Sequential exact solve of the block-triangular rate system: each link's
/// relative rate is its gyro reading minus the accumulated rotated rates of
/// its ancestors. Treats every joint as three-axis; no matrix factorization
/// is performed. `gyro` holds one raw sensor-frame reading per link.
VelocitySolveReport joint_velocities_unconstrained(
    const ChainModel& model, const VecX& theta, const std::vector<Vec3>& gyro,
    const MountCalibration& corrections);

/// Least-squares fit of the generalized rates to all gyro readings through
/// the stacked link-frame Jacobian, respecting each joint's true degrees of
/// freedom. Flags (not throws) ill conditioning.
VelocitySolveReport joint_velocities_constrained(
    const ChainModel& model, const VecX& theta, const std::vector<Vec3>& gyro,
    const MountCalibration& corrections, double condition_threshold = 1e8);

struct AccelSolveReport {
  /// Relative angular acceleration of the child link w.r.t. its parent,
  /// expressed in the child frame.
  Vec3 joint_accel = Vec3::Zero();
  double condition = 0.0;
  double residual = 0.0;  // m/s^2
  /// False when the stacked lever-arm matrix is rank-deficient or badly
  /// conditioned (parallel or coincident mounts); the estimate is then
  /// unusable.
  bool usable = false;
};

/// Recovers one joint's angular acceleration from a parent-link
/// accelerometer and two child-link accelerometers at distinct lever arms.
/// `joint_rate` is the relative angular velocity of the child w.r.t. the
/// parent in the child frame (from a velocity solve). Readings are raw
/// sensor-frame values; mount indices refer to ChainModel::mounts().
/// Gravity cancels in the differences and never enters the solve.
///
/// The parent sensor is the pivot reference: lever arms are measured from
/// it, so the solve is exact when that sensor sits at the joint center and
/// the parent link is at rest. A parent sensor offset from the joint, or a
/// rotating parent link, contributes its unmeasured transport acceleration
/// directly to the result.
AccelSolveReport joint_acceleration(const ChainModel& model, const VecX& theta,
                                    const Vec3& joint_rate, int child_link,
                                    const Vec3& parent_accel,
                                    const Vec3& child_accel_a,
                                    const Vec3& child_accel_b, int parent_mount,
                                    int child_mount_a, int child_mount_b,
                                    const MountCalibration& corrections,
                                    double condition_threshold = 1e8);

}  // namespace jse
