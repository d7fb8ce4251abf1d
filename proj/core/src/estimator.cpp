#include "jse/estimator.hpp"

#include <Eigen/Dense>

#include <cstddef>

#include "jse/errors.hpp"
#include "jse/so3.hpp"

namespace jse {
namespace {

int mount_index(const ChainModel& model, int link, int slot) {
  const auto& mounts = model.mounts();
  for (std::size_t m = 0; m < mounts.size(); ++m) {
    if (mounts[m].link == link && mounts[m].slot == slot) {
      return static_cast<int>(m);
    }
  }
  throw ConfigError("no sensor mounted on link " + std::to_string(link) +
                    " slot " + std::to_string(slot));
}

void check_corrections(const ChainModel& model,
                       const MountCalibration& corrections) {
  if (corrections.mounts.size() != model.mounts().size()) {
    throw ConfigError("calibration entry count does not match the mounts");
  }
}

}  // namespace

MountCalibration calibration_from_model(const ChainModel& model) {
  MountCalibration cal;
  cal.mounts.resize(model.mounts().size());
  for (std::size_t m = 0; m < model.mounts().size(); ++m) {
    cal.mounts[m].orientation = model.mounts()[m].orientation;
    cal.mounts[m].position_in_link = model.mounts()[m].position;
  }
  return cal;
}

MatX stacked_angular_jacobian(const ChainModel& model, const VecX& theta) {
  const int start = model.floating_base() ? 0 : 1;
  const int rows = 3 * (model.link_count() - start);
  MatX t(rows, model.total_dof());
  for (int link = start; link < model.link_count(); ++link) {
    t.block(3 * (link - start), 0, 3, model.total_dof()) =
        model.angular_jacobian_local(theta, link);
  }
  return t;
}

std::vector<Vec3> correct_gyro_readings(const ChainModel& model,
                                        const std::vector<Vec3>& gyro,
                                        const MountCalibration& corrections) {
  if (gyro.size() != static_cast<std::size_t>(model.link_count())) {
    throw ConfigError("need one gyro reading per link");
  }
  check_corrections(model, corrections);
  std::vector<Vec3> corrected(gyro.size());
  for (int link = 0; link < model.link_count(); ++link) {
    const int m = mount_index(model, link, 0);
    corrected[static_cast<std::size_t>(link)] =
        corrections.orientation(m) * gyro[static_cast<std::size_t>(link)];
  }
  return corrected;
}

VelocitySolveReport joint_velocities_unconstrained(
    const ChainModel& model, const VecX& theta, const std::vector<Vec3>& gyro,
    const MountCalibration& corrections) {
  const std::vector<Vec3> w = correct_gyro_readings(model, gyro, corrections);
  const int links = model.link_count();

  VelocitySolveReport report;
  report.method = VelocityMethod::unconstrained;
  report.rates = VecX::Zero(3 * links);

  // carry = sum of all ancestor relative rates rotated into the current
  // link's frame; subtracting it from the gyro reading isolates this
  // link's own relative rate.
  Vec3 carry = Vec3::Zero();
  Vec3 block = w[0];
  report.rates.head<3>() = block;
  for (int link = 1; link < links; ++link) {
    const Rotation parent_to_child =
        model.joint_rotation(theta, link).inverse();
    carry = parent_to_child * (carry + block);
    block = w[static_cast<std::size_t>(link)] - carry;
    report.rates.segment<3>(3 * link) = block;
  }
  return report;
}

VelocitySolveReport joint_velocities_constrained(
    const ChainModel& model, const VecX& theta, const std::vector<Vec3>& gyro,
    const MountCalibration& corrections, double condition_threshold) {
  const std::vector<Vec3> w = correct_gyro_readings(model, gyro, corrections);
  const MatX t = stacked_angular_jacobian(model, theta);
  const int start = model.floating_base() ? 0 : 1;

  VecX b(t.rows());
  for (int link = start; link < model.link_count(); ++link) {
    b.segment<3>(3 * (link - start)) = w[static_cast<std::size_t>(link)];
  }

  const LstsqResult ls = lstsq_svd(t, b, condition_threshold);
  VelocitySolveReport report;
  report.method = VelocityMethod::constrained;
  report.rates = ls.x;
  report.residual = ls.residual_norm;
  report.condition = ls.condition;
  report.ill_conditioned = ls.ill_conditioned;
  return report;
}

AccelSolveReport joint_acceleration(const ChainModel& model, const VecX& theta,
                                    const Vec3& joint_rate, int child_link,
                                    const Vec3& parent_accel,
                                    const Vec3& child_accel_a,
                                    const Vec3& child_accel_b, int parent_mount,
                                    int child_mount_a, int child_mount_b,
                                    const MountCalibration& corrections,
                                    double condition_threshold) {
  if (child_link < 1 || child_link >= model.link_count()) {
    throw ConfigError("child link index out of range");
  }
  check_corrections(model, corrections);
  const auto& mounts = model.mounts();
  const auto mount_at = [&](int idx, int expected_link) -> const ImuMount& {
    if (idx < 0 || idx >= static_cast<int>(mounts.size())) {
      throw ConfigError("mount index out of range");
    }
    const ImuMount& m = mounts[static_cast<std::size_t>(idx)];
    if (m.link != expected_link) {
      throw ConfigError("mount is not on the expected link");
    }
    return m;
  };
  mount_at(parent_mount, child_link - 1);
  mount_at(child_mount_a, child_link);
  mount_at(child_mount_b, child_link);
  if (child_mount_a == child_mount_b) {
    throw ConfigError("the two child-link mounts must be distinct");
  }

  // Lever arms from the parent sensor to each child sensor, expressed in
  // the child frame, from forward kinematics at the current configuration.
  const std::vector<Vec3> origins = model.link_origins_in_base(theta);
  const auto base_pos = [&](int mount_idx) {
    const ImuMount& m = mounts[static_cast<std::size_t>(mount_idx)];
    return Vec3(origins[static_cast<std::size_t>(m.link)] +
                model.relative_rotation(theta, m.link, 0) *
                    corrections.position_in_link(mount_idx));
  };
  const Rotation base_to_child = model.relative_rotation(theta, 0, child_link);
  const Vec3 parent_pos = base_pos(parent_mount);
  const Vec3 r = base_to_child * Vec3(base_pos(child_mount_a) - parent_pos);
  const Vec3 r_tilde = base_to_child * Vec3(base_pos(child_mount_b) - parent_pos);

  // Readings mapped into link frames; the parent reading then into the child
  // frame. Gravity enters both sides identically and cancels in the
  // differences.
  const Vec3 a_parent = corrections.orientation(parent_mount) * parent_accel;
  const Vec3 a_child_a = corrections.orientation(child_mount_a) * child_accel_a;
  const Vec3 a_child_b = corrections.orientation(child_mount_b) * child_accel_b;
  const Rotation parent_to_child =
      model.joint_rotation(theta, child_link).inverse();
  const Vec3 parent_in_child = parent_to_child * a_parent;

  const Mat3 rate_sq = skew(joint_rate) * skew(joint_rate);
  MatX lhs(6, 3);
  lhs.topRows<3>() = skew(r);
  lhs.bottomRows<3>() = skew(r_tilde);
  VecX rhs(6);
  rhs.head<3>() = parent_in_child - a_child_a + rate_sq * r;
  rhs.tail<3>() = parent_in_child - a_child_b + rate_sq * r_tilde;

  const LstsqResult ls = lstsq_svd(lhs, rhs, condition_threshold);
  AccelSolveReport report;
  report.joint_accel = ls.x;
  report.condition = ls.condition;
  report.residual = ls.residual_norm;
  report.usable = ls.rank == 3 && !ls.ill_conditioned;
  return report;
}

}  // namespace jse
