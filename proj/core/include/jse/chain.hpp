#pragma once

#include <optional>
#include <vector>

#include "jse/so3.hpp"
#include "jse/types.hpp"

namespace jse {

/// Rotational joint connecting a parent link to the next link in the serial
/// chain. Multi-DoF joints are ordered sequences of single-axis rotations
/// applied after the fixed zero-position rotation; each axis is expressed in
/// the child link frame.
struct JointSpec {
  int dof = 1;
  /// One unit axis per DoF, child-link frame.
  std::vector<Vec3> axes;
  /// Maps parent-frame vectors into the child frame when all angles are zero.
  Rotation zero_rotation;
  /// Child-frame origin expressed in the parent frame (m). Constant; joints
  /// carry no translation DoF.
  Vec3 origin_in_parent = Vec3::Zero();
};

/// Rigidly attached IMU. `orientation` maps sensor-frame vectors into the
/// link frame; `position` is the sensor location in the link frame.
struct ImuMount {
  int link = 0;
  int slot = 0;  // 0 = primary, 1 = secondary; at most two per link
  Vec3 position = Vec3::Zero();
  Rotation orientation;
};

/// Positions, velocities and accelerations in generalized coordinates, all of
/// length total_dof(). When the base floats, the leading three velocity and
/// acceleration entries are the base angular velocity/acceleration in the
/// base frame, and the leading three position entries are an exponential
/// chart snapshot of the base attitude (informational; consumers never
/// finite-difference them).
struct JointState {
  VecX theta;
  VecX theta_dot;
  VecX theta_ddot;
};

/// Serial kinematic chain: links 0..N-1, link 0 is the base. Joint j connects
/// link j (parent) to link j+1 (child). A floating base contributes three
/// leading generalized coordinates (its orientation); a fixed base
/// contributes none.
class ChainModel {
 public:
  ChainModel(bool floating_base, std::vector<JointSpec> joints,
             std::vector<ImuMount> mounts);

  int link_count() const { return static_cast<int>(joints_.size()) + 1; }
  int joint_count() const { return static_cast<int>(joints_.size()); }
  bool floating_base() const { return floating_base_; }
  int base_dof() const { return floating_base_ ? 3 : 0; }
  int total_dof() const { return total_dof_; }

  /// Joint whose child is `child_link` (1 <= child_link < link_count).
  const JointSpec& joint(int child_link) const;
  /// Column offset of that joint's coordinates within the generalized vector.
  int dof_offset(int child_link) const;

  const std::vector<ImuMount>& mounts() const { return mounts_; }
  const ImuMount* find_mount(int link, int slot) const;
  const ImuMount& mount(int link, int slot) const;

  /// R_child^parent: maps child-frame vectors into the parent frame at the
  /// given configuration.
  Rotation joint_rotation(const VecX& theta, int child_link) const;

  /// R_from^to: maps from-link vectors into the to-link frame. Depends only
  /// on the joint angles between the two links, never on base attitude.
  Rotation relative_rotation(const VecX& theta, int from_link,
                             int to_link) const;

  /// K(phi), 3 x dof: maps the joint's coordinate rates to the relative
  /// angular velocity of child w.r.t. parent, expressed in the child frame.
  MatX joint_velocity_map(const VecX& theta, int child_link) const;

  /// J_i expressed in the base frame: angular velocity of link i (relative to
  /// the world, base contribution included when floating) as a function of
  /// generalized rates. 3 x total_dof().
  MatX angular_jacobian_base(const VecX& theta, int link) const;

  /// Same Jacobian expressed in the link's own frame: R_base->link times the
  /// base-frame Jacobian.
  MatX angular_jacobian_local(const VecX& theta, int link) const;

  /// Link-frame origins expressed in the base frame at this configuration.
  std::vector<Vec3> link_origins_in_base(const VecX& theta) const;

  Vec3 mount_position_in_base(const VecX& theta, const ImuMount& m) const;

 private:
  void check_theta(const VecX& theta) const;
  /// R_link^base for every link (prefix products down the chain).
  std::vector<Rotation> rotations_to_base(const VecX& theta) const;

  bool floating_base_;
  std::vector<JointSpec> joints_;
  std::vector<ImuMount> mounts_;
  std::vector<int> offsets_;
  int total_dof_ = 0;
};

}  // namespace jse
