#pragma once

#include "jse/types.hpp"

namespace jse {

/// Skew-symmetric cross-product matrix: skew(v) * w == v.cross(w).
Mat3 skew(const Vec3& v);

/// Inverse of skew for skew-symmetric input (the averaged off-diagonals).
Vec3 vee(const Mat3& m);

/// Proper rotation matrix with enforced invariants.
///
/// Every instance satisfies ||R^T R - I||_inf <= 1e-12 and |det(R) - 1| <=
/// 1e-12. Compositions re-orthonormalize lazily (polar projection) when
/// floating-point drift approaches the bound, so arbitrarily long product
/// chains keep the invariants.
class Rotation {
 public:
  /// Identity.
  Rotation();

  /// Wraps a matrix that must already be orthonormal with det +1 (tolerance
  /// 1e-9 on both checks; the stored matrix is polar-projected so the class
  /// invariants hold exactly enough). Throws Error on violation or non-finite
  /// input.
  static Rotation from_matrix(const Mat3& m);

  /// Nearest proper rotation to an arbitrary full-rank matrix (polar
  /// projection via SVD with determinant correction).
  static Rotation project(const Mat3& m);

  /// Exponential map of a rotation vector (axis * angle, radians).
  static Rotation exp(const Vec3& rotvec);

  /// Rotation about a unit axis by an angle. Axis must have norm 1 within
  /// 1e-9.
  static Rotation axis_angle(const Vec3& axis, double angle_rad);

  /// Rotation vector (minimal-norm logarithm, angle in [0, pi]).
  Vec3 log() const;

  Rotation inverse() const;
  Rotation operator*(const Rotation& rhs) const;
  Vec3 operator*(const Vec3& v) const { return m_ * v; }

  const Mat3& matrix() const { return m_; }

 private:
  explicit Rotation(const Mat3& m) : m_(m) {}

  Mat3 m_;
};

/// Geodesic distance ||log(R1^T R2)|| in radians.
double geodesic_distance(const Rotation& r1, const Rotation& r2);

/// Best-fit rotation mapping the rows of A onto the rows of B: minimizes
/// sum_m ||R a_m - b_m||^2 over proper rotations, via SVD of A^T B with the
/// determinant-sign correction on the smallest singular direction, so a
/// reflection is never returned. A and B are M x 3 with M >= 3 matched rows.
/// Throws RankDeficientError when the two smallest singular values of A^T B
/// fall below max(M,3) * eps * sigma_max (the row directions span fewer than
/// two dimensions).
Rotation kabsch_fit(const MatX& a, const MatX& b);

/// Minimum-norm least-squares solution of A x = b via SVD.
struct LstsqResult {
  VecX x;
  /// Ratio of largest to smallest retained singular value (1 when only one is
  /// retained; infinity never appears because truncated directions are
  /// excluded).
  double condition = 1.0;
  /// Retained rank after truncation.
  int rank = 0;
  /// Set when condition exceeds the threshold or any singular value was
  /// truncated. Non-fatal; the solution is still the minimum-norm one.
  bool ill_conditioned = false;
  /// ||A x - b||.
  double residual_norm = 0.0;
};

/// Singular values below max(M,N) * eps * sigma_max are truncated
/// (eps = 2^-52). condition_threshold controls the ill_conditioned flag only.
LstsqResult lstsq_svd(const MatX& a, const VecX& b,
                      double condition_threshold = 1e8);

}  // namespace jse
