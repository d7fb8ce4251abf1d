#include "jse/chain.hpp"

#include <cmath>

#include "jse/errors.hpp"

namespace jse {

ChainModel::ChainModel(bool floating_base, std::vector<JointSpec> joints,
                       std::vector<ImuMount> mounts)
    : floating_base_(floating_base),
      joints_(std::move(joints)),
      mounts_(std::move(mounts)) {
  if (joints_.empty()) {
    throw ConfigError("a chain needs at least one joint (two links)");
  }
  int offset = base_dof();
  offsets_.reserve(joints_.size());
  for (std::size_t j = 0; j < joints_.size(); ++j) {
    const JointSpec& spec = joints_[j];
    if (spec.dof < 1 || spec.dof > 3) {
      throw ConfigError("joint dof must be 1, 2 or 3");
    }
    if (static_cast<int>(spec.axes.size()) != spec.dof) {
      throw ConfigError("joint axis count must equal its dof");
    }
    for (const Vec3& a : spec.axes) {
      if (std::abs(a.norm() - 1.0) > 1e-12) {
        throw ConfigError("joint axes must be unit length within 1e-12");
      }
    }
    offsets_.push_back(offset);
    offset += spec.dof;
  }
  total_dof_ = offset;

  std::vector<int> per_link(link_count(), 0);
  for (const ImuMount& m : mounts_) {
    if (m.link < 0 || m.link >= link_count()) {
      throw ConfigError("IMU mount references a link outside the chain");
    }
    if (m.slot != 0 && m.slot != 1) {
      throw ConfigError("IMU mount slot must be 0 or 1");
    }
    if (find_mount(m.link, m.slot) != &m) {
      throw ConfigError("duplicate IMU mount slot on a link");
    }
    if (++per_link[m.link] > 2) {
      throw ConfigError("at most two IMU mounts per link");
    }
  }
}

const JointSpec& ChainModel::joint(int child_link) const {
  if (child_link < 1 || child_link >= link_count()) {
    throw Error("joint lookup: child link out of range");
  }
  return joints_[child_link - 1];
}

int ChainModel::dof_offset(int child_link) const {
  if (child_link < 1 || child_link >= link_count()) {
    throw Error("dof_offset: child link out of range");
  }
  return offsets_[child_link - 1];
}

const ImuMount* ChainModel::find_mount(int link, int slot) const {
  for (const ImuMount& m : mounts_) {
    if (m.link == link && m.slot == slot) return &m;
  }
  return nullptr;
}

const ImuMount& ChainModel::mount(int link, int slot) const {
  const ImuMount* m = find_mount(link, slot);
  if (m == nullptr) {
    throw Error("no IMU mount at requested link/slot");
  }
  return *m;
}

void ChainModel::check_theta(const VecX& theta) const {
  if (theta.size() != total_dof_) {
    throw Error("generalized position vector has wrong length");
  }
  if (!theta.allFinite()) {
    throw Error("generalized position vector has non-finite entries");
  }
}

Rotation ChainModel::joint_rotation(const VecX& theta, int child_link) const {
  check_theta(theta);
  const JointSpec& spec = joint(child_link);
  const int off = dof_offset(child_link);
  // R_child^parent = R_child^parent(0) * prod_j exp(a_j phi_j).
  Rotation r = spec.zero_rotation.inverse();
  for (int j = 0; j < spec.dof; ++j) {
    r = r * Rotation::exp(spec.axes[j] * theta(off + j));
  }
  return r;
}

Rotation ChainModel::relative_rotation(const VecX& theta, int from_link,
                                       int to_link) const {
  check_theta(theta);
  if (from_link < 0 || from_link >= link_count() || to_link < 0 ||
      to_link >= link_count()) {
    throw Error("relative_rotation: link index out of range");
  }
  if (from_link == to_link) return Rotation();
  if (from_link > to_link) {
    // v^to = R_{to+1}^to * ... * R_from^{from-1} * v^from.
    Rotation r = joint_rotation(theta, to_link + 1);
    for (int c = to_link + 2; c <= from_link; ++c) {
      r = r * joint_rotation(theta, c);
    }
    return r;
  }
  return relative_rotation(theta, to_link, from_link).inverse();
}

MatX ChainModel::joint_velocity_map(const VecX& theta, int child_link) const {
  check_theta(theta);
  const JointSpec& spec = joint(child_link);
  const int off = dof_offset(child_link);
  MatX k = MatX::Zero(3, spec.dof);
  // Column j is the j-th axis carried through the rotations that follow it in
  // the sequence: omega_rel^child = sum_j (E_{j+1}...E_dof)^T a_j phidot_j.
  for (int j = 0; j < spec.dof; ++j) {
    Rotation suffix;
    for (int l = j + 1; l < spec.dof; ++l) {
      suffix = suffix * Rotation::exp(spec.axes[l] * theta(off + l));
    }
    k.col(j) = suffix.inverse() * spec.axes[j];
  }
  return k;
}

std::vector<Rotation> ChainModel::rotations_to_base(const VecX& theta) const {
  std::vector<Rotation> to_base(link_count());
  to_base[0] = Rotation();
  for (int c = 1; c < link_count(); ++c) {
    to_base[c] = to_base[c - 1] * joint_rotation(theta, c);
  }
  return to_base;
}

MatX ChainModel::angular_jacobian_base(const VecX& theta, int link) const {
  check_theta(theta);
  if (link < 0 || link >= link_count()) {
    throw Error("angular_jacobian_base: link index out of range");
  }
  const std::vector<Rotation> to_base = rotations_to_base(theta);
  MatX j = MatX::Zero(3, total_dof_);
  if (floating_base_) {
    j.block<3, 3>(0, 0) = Mat3::Identity();
  }
  for (int c = 1; c <= link; ++c) {
    j.block(0, dof_offset(c), 3, joint(c).dof) =
        to_base[c].matrix() * joint_velocity_map(theta, c);
  }
  return j;
}

MatX ChainModel::angular_jacobian_local(const VecX& theta, int link) const {
  const std::vector<Rotation> to_base = rotations_to_base(theta);
  MatX j = angular_jacobian_base(theta, link);
  return to_base[link].inverse().matrix() * j;
}

std::vector<Vec3> ChainModel::link_origins_in_base(const VecX& theta) const {
  check_theta(theta);
  const std::vector<Rotation> to_base = rotations_to_base(theta);
  std::vector<Vec3> origins(link_count());
  origins[0] = Vec3::Zero();
  for (int c = 1; c < link_count(); ++c) {
    origins[c] = origins[c - 1] + to_base[c - 1] * joint(c).origin_in_parent;
  }
  return origins;
}

Vec3 ChainModel::mount_position_in_base(const VecX& theta,
                                        const ImuMount& m) const {
  const std::vector<Vec3> origins = link_origins_in_base(theta);
  const Rotation r = relative_rotation(theta, m.link, 0);
  return origins[m.link] + r * m.position;
}

}  // namespace jse
