#include "jse/chain.hpp"

#include <cmath>
#include <numbers>

#include "doctest.h"
#include "jse/errors.hpp"
#include "jse/rng.hpp"
#include "support.hpp"

using namespace jse;
using test::max_abs_diff;
using test::random_rotation;
using test::random_unit;

namespace {

ChainModel two_link_z() {
  JointSpec j;
  j.dof = 1;
  j.axes = {Vec3::UnitZ()};
  j.origin_in_parent = Vec3(0.0, 0.0, -0.3);
  ImuMount m0{0, 0, Vec3(0.1, 0.0, 0.0), Rotation()};
  ImuMount m1{1, 0, Vec3(0.2, 0.0, 0.0), Rotation()};
  return ChainModel(false, {j}, {m0, m1});
}

// Floating base + 3-DoF joint + 1-DoF joint + 3-DoF joint: 10 coordinates.
ChainModel leg_like(Rng& rng) {
  JointSpec hip;
  hip.dof = 3;
  hip.axes = {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
  hip.zero_rotation = random_rotation(rng);
  hip.origin_in_parent = Vec3(0.0, 0.09, -0.12);
  JointSpec knee;
  knee.dof = 1;
  knee.axes = {Vec3::UnitY()};
  knee.zero_rotation = random_rotation(rng);
  knee.origin_in_parent = Vec3(0.0, 0.0, -0.4);
  JointSpec ankle;
  ankle.dof = 3;
  ankle.axes = {Vec3::UnitZ(), Vec3::UnitY(), Vec3::UnitX()};
  ankle.zero_rotation = random_rotation(rng);
  ankle.origin_in_parent = Vec3(0.0, 0.0, -0.38);
  std::vector<ImuMount> mounts;
  for (int link = 0; link < 4; ++link) {
    mounts.push_back({link, 0, 0.05 * rng.gaussian3(), random_rotation(rng)});
  }
  return ChainModel(true, {hip, knee, ankle}, mounts);
}

VecX random_theta(const ChainModel& model, Rng& rng) {
  VecX theta(model.total_dof());
  for (int i = 0; i < theta.size(); ++i) {
    theta(i) = (2.0 * rng.uniform01() - 1.0) * 1.2;
  }
  return theta;
}

Mat3 rodrigues(const Vec3& axis, double angle) {
  const Mat3 k = skew(axis);
  return Mat3::Identity() + std::sin(angle) * k +
         (1.0 - std::cos(angle)) * (k * k);
}

}  // namespace

TEST_CASE("model construction validates its inputs") {
  JointSpec bad_axis;
  bad_axis.dof = 1;
  bad_axis.axes = {Vec3(1.0, 1.0, 0.0)};
  CHECK_THROWS_AS(ChainModel(false, {bad_axis}, {}), ConfigError);

  JointSpec mismatch;
  mismatch.dof = 2;
  mismatch.axes = {Vec3::UnitX()};
  CHECK_THROWS_AS(ChainModel(false, {mismatch}, {}), ConfigError);

  JointSpec ok;
  ok.dof = 1;
  ok.axes = {Vec3::UnitX()};
  CHECK_THROWS_AS(
      ChainModel(false, {ok}, {ImuMount{5, 0, Vec3::Zero(), Rotation()}}),
      ConfigError);
  CHECK_THROWS_AS(
      ChainModel(false, {ok},
                 {ImuMount{0, 0, Vec3::Zero(), Rotation()},
                  ImuMount{0, 0, Vec3::UnitX(), Rotation()}}),
      ConfigError);
  CHECK_THROWS_AS(ChainModel(false, {}, {}), ConfigError);
}

TEST_CASE("coordinate bookkeeping") {
  Rng rng(21);
  const ChainModel leg = leg_like(rng);
  CHECK(leg.link_count() == 4);
  CHECK(leg.total_dof() == 10);
  CHECK(leg.base_dof() == 3);
  CHECK(leg.dof_offset(1) == 3);
  CHECK(leg.dof_offset(2) == 6);
  CHECK(leg.dof_offset(3) == 7);

  const ChainModel fixed = two_link_z();
  CHECK(fixed.total_dof() == 1);
  CHECK(fixed.base_dof() == 0);
  CHECK(fixed.dof_offset(1) == 0);
}

TEST_CASE("single joint rotation matches Rodrigues") {
  const ChainModel model = two_link_z();
  VecX theta(1);
  theta << 0.5 * std::numbers::pi;
  const Rotation r = model.relative_rotation(theta, 1, 0);
  CHECK(max_abs_diff(r.matrix(), rodrigues(Vec3::UnitZ(), theta(0))) < 1e-12);
  // Mapping the other way transposes.
  CHECK(max_abs_diff(model.relative_rotation(theta, 0, 1).matrix(),
                     r.matrix().transpose()) < 1e-15);
}

TEST_CASE("relative rotations compose along the chain") {
  Rng rng(22);
  const ChainModel leg = leg_like(rng);
  for (int trial = 0; trial < 20; ++trial) {
    const VecX theta = random_theta(leg, rng);
    const Rotation r30 = leg.relative_rotation(theta, 3, 0);
    const Rotation composed = leg.relative_rotation(theta, 1, 0) *
                              leg.relative_rotation(theta, 2, 1) *
                              leg.relative_rotation(theta, 3, 2);
    CHECK(geodesic_distance(r30, composed) < 1e-12);
  }
}

TEST_CASE("relative rotation ignores base coordinates") {
  Rng rng(23);
  const ChainModel leg = leg_like(rng);
  VecX theta = random_theta(leg, rng);
  const Rotation before = leg.relative_rotation(theta, 3, 1);
  theta.head<3>() += Vec3(0.7, -0.3, 0.2);
  CHECK(geodesic_distance(before, leg.relative_rotation(theta, 3, 1)) < 1e-15);
}

TEST_CASE("1-DoF velocity map is the joint axis") {
  const ChainModel model = two_link_z();
  VecX theta(1);
  theta << 0.8;
  const MatX k = model.joint_velocity_map(theta, 1);
  CHECK(k.rows() == 3);
  CHECK(k.cols() == 1);
  CHECK((Vec3(k.col(0)) - Vec3::UnitZ()).norm() < 1e-15);

  // In the base frame the column is the rotated axis.
  const MatX jb = model.angular_jacobian_base(theta, 1);
  const Vec3 expected = model.relative_rotation(theta, 1, 0) * Vec3::UnitZ();
  CHECK((Vec3(jb.col(0)) - expected).norm() < 1e-12);
}

TEST_CASE("multi-DoF velocity map matches finite differences") {
  Rng rng(24);
  const ChainModel leg = leg_like(rng);
  const double h = 1e-6;
  for (int trial = 0; trial < 10; ++trial) {
    VecX theta = random_theta(leg, rng);
    for (int child : {1, 2, 3}) {
      const JointSpec& spec = leg.joint(child);
      const int off = leg.dof_offset(child);
      VecX rates(spec.dof);
      for (int j = 0; j < spec.dof; ++j) rates(j) = rng.gaussian();

      VecX tp = theta, tm = theta;
      for (int j = 0; j < spec.dof; ++j) {
        tp(off + j) += h * rates(j);
        tm(off + j) -= h * rates(j);
      }
      const Mat3 rp = leg.joint_rotation(tp, child).matrix();
      const Mat3 rm = leg.joint_rotation(tm, child).matrix();
      const Mat3 rdot = (rp - rm) / (2.0 * h);
      // R_c^p' = R_c^p * skew(omega_rel^child).
      const Vec3 omega_fd =
          vee(leg.joint_rotation(theta, child).matrix().transpose() * rdot);
      const Vec3 omega_map =
          leg.joint_velocity_map(theta, child) * rates;
      CHECK((omega_fd - omega_map).norm() < 1e-6);
    }
  }
}

TEST_CASE("angular Jacobians match finite differences of the chain") {
  Rng rng(25);
  const ChainModel leg = leg_like(rng);
  const double h = 1e-6;
  for (int trial = 0; trial < 10; ++trial) {
    const VecX theta = random_theta(leg, rng);
    VecX rates(leg.total_dof());
    for (int i = 0; i < rates.size(); ++i) rates(i) = rng.gaussian();
    const Vec3 base_rate = rates.head<3>();

    for (int link = 1; link < leg.link_count(); ++link) {
      // Differentiate only the joint part; the base block is exact identity.
      VecX tp = theta, tm = theta;
      tp.tail(leg.total_dof() - 3) += h * rates.tail(leg.total_dof() - 3);
      tm.tail(leg.total_dof() - 3) -= h * rates.tail(leg.total_dof() - 3);
      const Mat3 rp = leg.relative_rotation(tp, link, 0).matrix();
      const Mat3 rm = leg.relative_rotation(tm, link, 0).matrix();
      const Mat3 rdot = (rp - rm) / (2.0 * h);
      const Mat3 r = leg.relative_rotation(theta, link, 0).matrix();
      const Vec3 omega_joints_base = vee(rdot * r.transpose());
      const Vec3 expected_base_frame = base_rate + omega_joints_base;

      const Vec3 from_jacobian =
          Vec3(leg.angular_jacobian_base(theta, link) * rates);
      CHECK((from_jacobian - expected_base_frame).norm() < 5e-6);

      const Vec3 local = Vec3(leg.angular_jacobian_local(theta, link) * rates);
      CHECK((local - Vec3(r.transpose() * expected_base_frame)).norm() < 5e-6);
    }
  }
}

TEST_CASE("link origins accumulate joint offsets") {
  const ChainModel model = two_link_z();
  VecX theta(1);
  theta << 0.0;
  const auto origins = model.link_origins_in_base(theta);
  CHECK((origins[0] - Vec3::Zero()).norm() == 0.0);
  CHECK((origins[1] - Vec3(0.0, 0.0, -0.3)).norm() == 0.0);

  // Rotating the joint does not move the child origin (origin sits on the
  // joint), but it does move a mount on the child link.
  theta << 0.5 * std::numbers::pi;
  const Vec3 p = model.mount_position_in_base(theta, model.mount(1, 0));
  CHECK((p - Vec3(0.0, 0.2, -0.3)).norm() < 1e-12);
}

TEST_CASE("mount positions follow three-link forward kinematics") {
  Rng rng(26);
  const ChainModel leg = leg_like(rng);
  const VecX theta = random_theta(leg, rng);
  const auto origins = leg.link_origins_in_base(theta);
  // Hand-rolled FK for link 2's origin.
  const Vec3 expected = leg.joint(1).origin_in_parent +
                        leg.relative_rotation(theta, 1, 0) *
                            leg.joint(2).origin_in_parent;
  CHECK((origins[2] - expected).norm() < 1e-12);
}
