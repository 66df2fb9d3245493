#pragma once

// Rigid-body poses, Pluecker and orthonormal line representations, and the
// projection of 3D lines into a pinhole image.

#include <algorithm>
#include <cmath>
#include <utility>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "plslam/error.hpp"

namespace plslam {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Tangent increment of a pose: translation part first, rotation part second.
///   delta_xi = (rho_x, rho_y, rho_z, phi_x, phi_y, phi_z)
using PoseUpdate = Vec6;

/// Tangent increment of an orthonormal line: (theta_x, theta_y, theta_z) acts
/// on U, the last coordinate rotates W.
using LineUpdate = Vec4;

inline Mat3 skew(const Vec3& a) {
  Mat3 m;
  m << 0.0, -a.z(), a.y(),  //
      a.z(), 0.0, -a.x(),   //
      -a.y(), a.x(), 0.0;
  return m;
}

/// Rodrigues' formula.
inline Mat3 so3_exp(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const Mat3 k = skew(phi);
  if (theta2 < 1e-16) {
    return Mat3::Identity() + k + 0.5 * k * k;
  }
  const double theta = std::sqrt(theta2);
  return Mat3::Identity() + (std::sin(theta) / theta) * k +
         ((1.0 - std::cos(theta)) / theta2) * k * k;
}

/// Rotation vector of R, angle in [0, pi].
inline Vec3 so3_log(const Mat3& rotation) {
  const Eigen::AngleAxisd aa(rotation);
  return aa.angle() * aa.axis();
}

/// Nearest rotation matrix in the Frobenius sense.
inline Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) {
    d(2, 2) = -1.0;
  }
  return svd.matrixU() * d * svd.matrixV().transpose();
}

/// Rigid transform from world to camera coordinates: x_c = R x_w + t.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  Vec3 operator*(const Vec3& x) const { return rotation * x + translation; }

  /// Composition: (a * b)(x) = a(b(x)).
  Pose operator*(const Pose& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation};
  }

  Pose inverse() const {
    const Mat3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }

  /// Camera centre in world coordinates when the pose is world-to-camera.
  Vec3 center() const { return -(rotation.transpose() * translation); }

  /// 6x6 adjoint in (rho, phi) ordering: T Exp(xi) T^-1 = Exp(Ad_T xi).
  Mat6 adjoint() const {
    Mat6 ad = Mat6::Zero();
    ad.topLeftCorner<3, 3>() = rotation;
    ad.topRightCorner<3, 3>() = skew(translation) * rotation;
    ad.bottomRightCorner<3, 3>() = rotation;
    return ad;
  }
};

/// SE(3) exponential of (rho, phi).
inline Pose se3_exp(const PoseUpdate& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  const double theta2 = phi.squaredNorm();
  const Mat3 k = skew(phi);
  Mat3 v;
  if (theta2 < 1e-16) {
    v = Mat3::Identity() + 0.5 * k + (1.0 / 6.0) * k * k;
  } else {
    const double theta = std::sqrt(theta2);
    v = Mat3::Identity() + ((1.0 - std::cos(theta)) / theta2) * k +
        ((theta - std::sin(theta)) / (theta2 * theta)) * k * k;
  }
  return {so3_exp(phi), v * rho};
}

/// Left-multiplicative update T <- Exp(delta_xi^) T. The rotation is projected
/// back onto SO(3) after every update.
inline Pose pose_update(const Pose& pose, const PoseUpdate& delta) {
  Pose out = se3_exp(delta) * pose;
  out.rotation = nearest_rotation(out.rotation);
  return out;
}

struct CameraIntrinsics {
  double fu = 500.0;
  double fv = 500.0;
  double cu = 320.0;
  double cv = 240.0;
  double baseline = 0.5;  // meters

  void validate() const {
    if (!(fu > 0.0) || !(fv > 0.0) || !(baseline > 0.0)) {
      throw Error("camera intrinsics require fu, fv, baseline > 0");
    }
  }

  Mat3 point_matrix() const {
    Mat3 k;
    k << fu, 0.0, cu, 0.0, fv, cv, 0.0, 0.0, 1.0;
    return k;
  }

  /// Matrix mapping the moment of a camera-frame Pluecker line to its image
  /// line: l = K_line * n_c.
  Mat3 line_matrix() const {
    Mat3 k;
    k << fv, 0.0, 0.0,  //
        0.0, fu, 0.0,   //
        -fv * cu, -fu * cv, fu * fv;
    return k;
  }

  /// Pixel of a camera-frame point. No depth check.
  Vec2 project(const Vec3& x_c) const {
    return {fu * x_c.x() / x_c.z() + cu, fv * x_c.y() / x_c.z() + cv};
  }

  /// Unnormalized viewing ray through pixel (u, v).
  Vec3 back_project(const Vec2& pixel) const {
    return {(pixel.x() - cu) / fu, (pixel.y() - cv) / fv, 1.0};
  }
};

/// Infinite 3D line in Pluecker coordinates, with n = p x v for every point p
/// on the line. Defined up to a nonzero scale.
struct PlueckerLine {
  Vec3 n = Vec3::Zero();
  Vec3 v = Vec3::UnitX();

  Vec6 vector() const {
    Vec6 out;
    out << n, v;
    return out;
  }

  static PlueckerLine from_vector(const Vec6& l) { return {l.head<3>(), l.tail<3>()}; }

  double norm() const { return std::sqrt(n.squaredNorm() + v.squaredNorm()); }

  PlueckerLine normalized() const {
    const double s = norm();
    return {n / s, v / s};
  }

  /// Unit norm, largest-magnitude component of v positive (or of n when v = 0).
  PlueckerLine canonical() const {
    PlueckerLine out = normalized();
    const Vec3& key = out.v.squaredNorm() > 0.0 ? out.v : out.n;
    Eigen::Index i = 0;
    key.cwiseAbs().maxCoeff(&i);
    if (key[i] < 0.0) {
      out.n = -out.n;
      out.v = -out.v;
    }
    return out;
  }

  /// Point on the line closest to the origin.
  Vec3 closest_point_to_origin() const { return v.cross(n) / v.squaredNorm(); }
};

/// Largest componentwise difference between the unit-norm representatives of
/// two lines. With |allow_negative_scale| the better of +/- scale is used.
inline double projective_distance(const PlueckerLine& a, const PlueckerLine& b,
                                  bool allow_negative_scale = false) {
  const Vec6 x = a.normalized().vector();
  const Vec6 y = b.normalized().vector();
  const double same = (x - y).cwiseAbs().maxCoeff();
  if (!allow_negative_scale) return same;
  return std::min(same, (x + y).cwiseAbs().maxCoeff());
}

/// Line through two homogeneous points X = (x, y, z, r), oriented from X1
/// toward X2:  n = x1 x x2,  v = r1 x2 - r2 x1.  Returned at unit norm.
inline PlueckerLine plucker_from_points(const Vec4& p1, const Vec4& p2) {
  const Vec3 x1 = p1.head<3>();
  const Vec3 x2 = p2.head<3>();
  if (p1.w() == 0.0 && p2.w() == 0.0) {
    throw DegenerateError("plucker_from_points: both points at infinity");
  }
  PlueckerLine l{x1.cross(x2), p1.w() * x2 - p2.w() * x1};
  const double scale = x1.norm() * std::abs(p2.w()) + x2.norm() * std::abs(p1.w());
  if (l.v.norm() <= 1e-14 * scale || l.v.squaredNorm() == 0.0) {
    throw DegenerateError("plucker_from_points: coincident points define no line");
  }
  if (p1.w() * p2.w() < 0.0) {
    l.n = -l.n;
    l.v = -l.v;
  }
  return l.normalized();
}

inline PlueckerLine plucker_from_points(const Vec3& a, const Vec3& b) {
  return plucker_from_points(Vec4(a.x(), a.y(), a.z(), 1.0), Vec4(b.x(), b.y(), b.z(), 1.0));
}

/// Minimal line parameterization (U, W) in SO(3) x SO(2). W is stored as its
/// first column (w1, w2) = (cos, sin).
struct OrthonormalLine {
  Mat3 u = Mat3::Identity();
  Vec2 w = Vec2(1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0));

  Mat2 w_matrix() const {
    Mat2 m;
    m << w.x(), -w.y(), w.y(), w.x();
    return m;
  }
};

namespace detail {

// Unit vector orthogonal to a (nonzero) vector.
inline Vec3 any_orthogonal(const Vec3& a) {
  const Vec3 axis = std::abs(a.x()) < 0.9 * a.norm() ? Vec3::UnitX() : Vec3::UnitY();
  return a.cross(axis).normalized();
}

}  // namespace detail

/// U = [n/|n|, v/|v|, (n x v)/|n x v|],  (w1, w2) = (|n|, |v|) / |(n, v)|.
/// A zero moment (line through the origin) takes u1 as any unit vector
/// orthogonal to v; a zero direction (line at infinity) is symmetric.
inline OrthonormalLine orthonormal_from_plucker(const PlueckerLine& line) {
  const double nn = line.n.norm();
  const double vn = line.v.norm();
  if (nn == 0.0 && vn == 0.0) {
    throw DegenerateError("orthonormal_from_plucker: zero Pluecker vector");
  }
  const double scale = std::max(nn, vn);
  Vec3 u1;
  Vec3 u2;
  if (nn <= 1e-15 * scale) {
    u2 = line.v / vn;
    u1 = detail::any_orthogonal(u2);
  } else if (vn <= 1e-15 * scale) {
    u1 = line.n / nn;
    u2 = detail::any_orthogonal(u1);
  } else {
    u1 = line.n / nn;
    u2 = line.v / vn;
    // Re-orthogonalize against round-off in n . v = 0.
    u2 = (u2 - u2.dot(u1) * u1).normalized();
  }
  OrthonormalLine out;
  out.u.col(0) = u1;
  out.u.col(1) = u2;
  out.u.col(2) = u1.cross(u2);
  const double r = std::hypot(nn, vn);
  out.w = Vec2(nn <= 1e-15 * scale ? 0.0 : nn / r, vn <= 1e-15 * scale ? 0.0 : vn / r);
  out.w.normalize();
  return out;
}

/// n = w1 u1, v = w2 u2 (unit norm; no sign canonicalization so that the map
/// stays smooth in (U, W)).
inline PlueckerLine plucker_from_orthonormal(const OrthonormalLine& o) {
  return {o.w.x() * o.u.col(0), o.w.y() * o.u.col(1)};
}

/// U <- Exp([theta]x) U,  W <- W Rot2(theta_w).  Both factors are projected
/// back onto their groups afterwards.
inline OrthonormalLine update_orthonormal(const OrthonormalLine& o, const LineUpdate& delta) {
  OrthonormalLine out;
  out.u = nearest_rotation(so3_exp(delta.head<3>()) * o.u);
  const double c = std::cos(delta[3]);
  const double s = std::sin(delta[3]);
  out.w = Vec2(o.w.x() * c - o.w.y() * s, o.w.y() * c + o.w.x() * s);
  out.w.normalize();
  return out;
}

/// 6x6 line motion matrix [R, [t]x R; 0, R].
inline Mat6 line_motion_matrix(const Pose& pose) {
  Mat6 h = Mat6::Zero();
  h.topLeftCorner<3, 3>() = pose.rotation;
  h.topRightCorner<3, 3>() = skew(pose.translation) * pose.rotation;
  h.bottomRightCorner<3, 3>() = pose.rotation;
  return h;
}

/// n_c = R n_w + [t]x R v_w,  v_c = R v_w.  Linear in the line; no rescaling.
inline PlueckerLine transform_line(const Pose& pose, const PlueckerLine& l) {
  const Vec3 rv = pose.rotation * l.v;
  return {pose.rotation * l.n + pose.translation.cross(rv), rv};
}

/// Image line l' = K_line n_c. Only the moment takes part in the projection.
/// Throws when the result is the line at infinity (l1 = l2 = 0).
inline Vec3 project_line(const CameraIntrinsics& k, const PlueckerLine& l_c) {
  const Vec3 l = k.line_matrix() * l_c.n;
  if (l.x() == 0.0 && l.y() == 0.0) {
    throw DegenerateError("project_line: line projects to the line at infinity");
  }
  return l;
}

namespace detail {

// Point on the line (line_point, line_dir) closest to the ray. Throws when the
// two are nearly parallel.
inline Vec3 closest_point_on_line_to_ray(const Vec3& ray_origin, const Vec3& ray_dir,
                                         const Vec3& line_point, const Vec3& line_dir) {
  const Vec3 d1 = ray_dir.normalized();
  const Vec3 d2 = line_dir.normalized();
  const double sin_angle = d1.cross(d2).norm();
  if (sin_angle < 1e-6) {
    throw DegenerateError("trim_endpoints: viewing ray is parallel to the line");
  }
  // Minimize |ray_origin + s d1 - (line_point + t d2)|.
  const Vec3 w0 = ray_origin - line_point;
  const double b = d1.dot(d2);
  const double d = d1.dot(w0);
  const double e = d2.dot(w0);
  const double denom = 1.0 - b * b;
  const double t = (e - b * d) / denom;
  return line_point + t * d2;
}

}  // namespace detail

/// Points on the infinite world line |l_w| closest to the viewing rays of the
/// two observed endpoints (pixels) seen from |pose|.
inline std::pair<Vec3, Vec3> trim_endpoints(const PlueckerLine& l_w, const Vec2& start_px,
                                            const Vec2& end_px, const Pose& pose,
                                            const CameraIntrinsics& k) {
  if (l_w.v.squaredNorm() == 0.0) {
    throw DegenerateError("trim_endpoints: line at infinity");
  }
  const Vec3 c_l = transform_line(pose, l_w).n;
  const Vec3 img = k.line_matrix() * c_l;
  if (img.x() == 0.0 && img.y() == 0.0) {
    throw DegenerateError("trim_endpoints: line does not project to a finite image line");
  }
  const Vec3 center = pose.center();
  const Mat3 rt = pose.rotation.transpose();
  const Vec3 p0 = l_w.closest_point_to_origin();
  const Vec3 a = detail::closest_point_on_line_to_ray(center, rt * k.back_project(start_px), p0, l_w.v);
  const Vec3 b = detail::closest_point_on_line_to_ray(center, rt * k.back_project(end_px), p0, l_w.v);
  return {a, b};
}

}  // namespace plslam
