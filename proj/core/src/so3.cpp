#include "jse/so3.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "jse/errors.hpp"

namespace jse {
namespace {

constexpr double kOrthoTol = 1e-9;
// Re-orthonormalize products before drift can reach the 1e-12 invariant.
constexpr double kRenormTrigger = 2e-13;

double ortho_deviation(const Mat3& m) {
  return ((m.transpose() * m) - Mat3::Identity()).cwiseAbs().maxCoeff();
}

Mat3 polar_project(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Mat3 flip = Mat3::Identity();
    flip(2, 2) = -1.0;
    r = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  return r;
}

}  // namespace

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return m;
}

Vec3 vee(const Mat3& m) {
  return Vec3(0.5 * (m(2, 1) - m(1, 2)),
              0.5 * (m(0, 2) - m(2, 0)),
              0.5 * (m(1, 0) - m(0, 1)));
}

Rotation::Rotation() : m_(Mat3::Identity()) {}

Rotation Rotation::from_matrix(const Mat3& m) {
  if (!m.allFinite()) {
    throw Error("rotation matrix has non-finite entries");
  }
  if (ortho_deviation(m) > kOrthoTol) {
    throw Error("matrix is not orthonormal within 1e-9");
  }
  if (std::abs(m.determinant() - 1.0) > kOrthoTol) {
    throw Error("matrix determinant is not +1 within 1e-9 (reflection?)");
  }
  return Rotation(polar_project(m));
}

Rotation Rotation::project(const Mat3& m) {
  if (!m.allFinite()) {
    throw Error("matrix has non-finite entries");
  }
  return Rotation(polar_project(m));
}

Rotation Rotation::exp(const Vec3& rotvec) {
  if (!rotvec.allFinite()) {
    throw Error("rotation vector has non-finite entries");
  }
  const double angle = rotvec.norm();
  const Mat3 k = skew(rotvec);
  Mat3 m;
  if (angle < 1e-8) {
    // Second-order Taylor expansion; exact to double precision here.
    m = Mat3::Identity() + k + 0.5 * (k * k);
  } else {
    const double s = std::sin(angle) / angle;
    const double c = (1.0 - std::cos(angle)) / (angle * angle);
    m = Mat3::Identity() + s * k + c * (k * k);
  }
  Rotation r(m);
  if (ortho_deviation(m) > kRenormTrigger) {
    r.m_ = polar_project(m);
  }
  return r;
}

Rotation Rotation::axis_angle(const Vec3& axis, double angle_rad) {
  if (std::abs(axis.norm() - 1.0) > 1e-9) {
    throw Error("axis must be unit length");
  }
  return exp(axis * angle_rad);
}

Vec3 Rotation::log() const {
  // Quaternion extraction is numerically stable across the whole angle range,
  // including near pi where the direct matrix formula degenerates.
  Eigen::Quaterniond q(m_);
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();  // minimal-norm branch
  const double s = q.vec().norm();
  if (s < 1e-12) {
    return 2.0 * q.vec();
  }
  const double angle = 2.0 * std::atan2(s, q.w());
  return q.vec() * (angle / s);
}

Rotation Rotation::inverse() const { return Rotation(m_.transpose()); }

Rotation Rotation::operator*(const Rotation& rhs) const {
  Mat3 m = m_ * rhs.m_;
  if (ortho_deviation(m) > kRenormTrigger) {
    m = polar_project(m);
  }
  return Rotation(m);
}

double geodesic_distance(const Rotation& r1, const Rotation& r2) {
  return (r1.inverse() * r2).log().norm();
}

Rotation kabsch_fit(const MatX& a, const MatX& b) {
  if (a.cols() != 3 || b.cols() != 3) {
    throw Error("kabsch_fit expects M x 3 inputs");
  }
  if (a.rows() != b.rows() || a.rows() < 3) {
    throw Error("kabsch_fit needs at least 3 matched row pairs");
  }
  if (!a.allFinite() || !b.allFinite()) {
    throw Error("kabsch_fit inputs must be finite");
  }
  const Mat3 h = a.transpose() * b;
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  const double tol = static_cast<double>(std::max<Eigen::Index>(a.rows(), 3)) *
                     std::numeric_limits<double>::epsilon() * sv(0);
  if (sv(1) <= tol) {
    throw RankDeficientError(
        "rotation fit needs row directions spanning at least two dimensions");
  }
  // Minimizer of sum ||R a_m - b_m||^2 is V S U^T with S correcting the
  // determinant sign on the weakest direction, which excludes reflections.
  Mat3 d = Mat3::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) {
    d(2, 2) = -1.0;
  }
  return Rotation::project(svd.matrixV() * d * svd.matrixU().transpose());
}

LstsqResult lstsq_svd(const MatX& a, const VecX& b, double condition_threshold) {
  if (a.rows() != b.size()) {
    throw Error("lstsq_svd: row count of A must match length of b");
  }
  if (!a.allFinite() || !b.allFinite()) {
    throw Error("lstsq_svd inputs must be finite");
  }
  Eigen::JacobiSVD<MatX> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VecX sv = svd.singularValues();
  const double smax = sv.size() > 0 ? sv(0) : 0.0;
  const double tol = static_cast<double>(std::max(a.rows(), a.cols())) *
                     std::numeric_limits<double>::epsilon() * smax;

  LstsqResult out;
  out.x = VecX::Zero(a.cols());
  bool truncated = false;
  double smin_retained = 0.0;
  const VecX utb = svd.matrixU().transpose() * b;
  for (int i = 0; i < sv.size(); ++i) {
    if (sv(i) > tol && sv(i) > 0.0) {
      out.x += svd.matrixV().col(i) * (utb(i) / sv(i));
      out.rank += 1;
      smin_retained = sv(i);  // singular values are sorted descending
    } else {
      truncated = true;
    }
  }
  out.condition = (out.rank > 0) ? smax / smin_retained : 0.0;
  out.ill_conditioned = truncated || out.condition > condition_threshold;
  out.residual_norm = (a * out.x - b).norm();
  return out;
}

}  // namespace jse
