#pragma once

// Point and line re-projection residuals and their analytic Jacobians.
//
// Every pose Jacobian in this file is taken with respect to the left
// increment T <- Exp(delta_xi^) T with delta_xi = (rho, phi), matching
// pose_update(). Line Jacobians are taken with respect to the orthonormal
// increment of update_orthonormal().

#include <bitset>
#include <cmath>
#include <optional>

#include <Eigen/Core>

#include "plslam/error.hpp"
#include "plslam/geometry.hpp"

namespace plslam {

using Descriptor = std::bitset<256>;

/// Points closer than this to the camera plane are treated as invalid.
inline constexpr double kMinDepth = 1e-4;

/// Observed image segment as homogeneous pixels (u, v, 1).
struct ImageLineSegment {
  Vec3 xs = Vec3(0.0, 0.0, 1.0);
  Vec3 xe = Vec3(1.0, 0.0, 1.0);
  std::optional<Descriptor> descriptor;

  ImageLineSegment() = default;
  ImageLineSegment(const Vec2& start, const Vec2& end)
      : xs(start.x(), start.y(), 1.0), xe(end.x(), end.y(), 1.0) {}

  Vec2 start() const { return xs.head<2>(); }
  Vec2 end() const { return xe.head<2>(); }
};

/// Left-image pixel, optionally paired with the right-image column of a
/// rectified stereo match.
struct PointObservation {
  Vec2 pixel = Vec2::Zero();
  std::optional<double> right_u;

  int dimension() const { return right_u ? 3 : 2; }
};

using LineResidual = Vec2;

// Residual and Jacobian storage for 2 (mono) or 3 (stereo) point rows.
using PointResidual = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 3, 1>;
using PointPoseJacobian = Eigen::Matrix<double, Eigen::Dynamic, 6, 0, 3, 6>;
using PointLandmarkJacobian = Eigen::Matrix<double, Eigen::Dynamic, 3, 0, 3, 3>;

using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat24 = Eigen::Matrix<double, 2, 4>;
using Mat26 = Eigen::Matrix<double, 2, 6>;
using Mat36 = Eigen::Matrix<double, 3, 6>;
using Mat64 = Eigen::Matrix<double, 6, 4>;

namespace detail {

inline double image_line_norm(const Vec3& l) {
  const double ln = std::hypot(l.x(), l.y());
  if (!(ln > 0.0) || !std::isfinite(ln)) {
    throw DegenerateError("line residual undefined for the line at infinity");
  }
  return ln;
}

}  // namespace detail

/// Signed distances of the two observed endpoints to the image line l'.
inline LineResidual line_residual(const ImageLineSegment& obs, const Vec3& l) {
  const double ln = detail::image_line_norm(l);
  return {obs.xs.dot(l) / ln, obs.xe.dot(l) / ln};
}

/// d e / d l' (2x3).
inline Mat23 jac_residual_wrt_lprime(const ImageLineSegment& obs, const Vec3& l) {
  const double ln = detail::image_line_norm(l);
  const double ln2 = ln * ln;
  const double e1 = obs.xs.dot(l);
  const double e2 = obs.xe.dot(l);
  Mat23 j;
  j << obs.xs.x() - l.x() * e1 / ln2, obs.xs.y() - l.y() * e1 / ln2, 1.0,  //
      obs.xe.x() - l.x() * e2 / ln2, obs.xe.y() - l.y() * e2 / ln2, 1.0;
  return j / ln;
}

/// d l' / d L_c = [K_line | 0].
inline Mat36 jac_lprime_wrt_Lc(const CameraIntrinsics& k) {
  Mat36 j = Mat36::Zero();
  j.leftCols<3>() = k.line_matrix();
  return j;
}

/// d L_c / d L_w = line motion matrix of the pose.
inline Mat6 jac_Lc_wrt_Lw(const Pose& pose) { return line_motion_matrix(pose); }

/// d L_w / d delta_theta at delta_theta = 0 (6x4):
///   [ -[w1 u1]x  -w2 u1 ]
///   [ -[w2 u2]x   w1 u2 ]
inline Mat64 jac_Lw_wrt_dtheta(const OrthonormalLine& o) {
  const Vec3 u1 = o.u.col(0);
  const Vec3 u2 = o.u.col(1);
  const double w1 = o.w.x();
  const double w2 = o.w.y();
  Mat64 j;
  j.topLeftCorner<3, 3>() = -skew(w1 * u1);
  j.topRightCorner<3, 1>() = -w2 * u1;
  j.bottomLeftCorner<3, 3>() = -skew(w2 * u2);
  j.bottomRightCorner<3, 1>() = w1 * u2;
  return j;
}

/// d L_c / d delta_xi (6x6), columns ordered (rho, phi):
///   rho: [ -[R v]x ; 0 ]
///   phi: [ -[R n]x - [[t]x R v]x ; -[R v]x ]
inline Mat6 jac_Lc_wrt_dxi(const Pose& pose, const PlueckerLine& l_w) {
  const Vec3 rn = pose.rotation * l_w.n;
  const Vec3 rv = pose.rotation * l_w.v;
  Mat6 j = Mat6::Zero();
  j.topLeftCorner<3, 3>() = -skew(rv);
  j.topRightCorner<3, 3>() = -skew(rn) - skew(pose.translation.cross(rv));
  j.bottomRightCorner<3, 3>() = -skew(rv);
  return j;
}

struct LineJacobians {
  LineResidual residual;
  Mat26 d_pose;   // d e / d delta_xi
  Mat24 d_line;   // d e / d delta_theta
};

/// Residual of a world line observed from |pose| plus both Jacobian chains.
inline LineJacobians line_jacobians(const ImageLineSegment& obs, const Pose& pose,
                                    const OrthonormalLine& line, const CameraIntrinsics& k) {
  const PlueckerLine l_w = plucker_from_orthonormal(line);
  const PlueckerLine l_c = transform_line(pose, l_w);
  const Vec3 l = k.line_matrix() * l_c.n;
  const Mat23 de_dl = jac_residual_wrt_lprime(obs, l);
  const Mat26 de_dlc = de_dl * jac_lprime_wrt_Lc(k);
  LineJacobians out;
  out.residual = line_residual(obs, l);
  out.d_pose = de_dlc * jac_Lc_wrt_dxi(pose, l_w);
  out.d_line = de_dlc * jac_Lc_wrt_Lw(pose) * jac_Lw_wrt_dtheta(line);
  return out;
}

namespace detail {

inline Vec3 camera_point_checked(const Pose& pose, const Vec3& x_w) {
  const Vec3 x_c = pose * x_w;
  if (!(x_c.z() > kMinDepth)) {
    throw DegenerateError("point is behind the camera");
  }
  return x_c;
}

}  // namespace detail

/// Observed minus predicted pixel (u, v[, u_right]).
inline PointResidual point_residual(const PointObservation& obs, const Pose& pose,
                                    const Vec3& x_w, const CameraIntrinsics& k) {
  const Vec3 x_c = detail::camera_point_checked(pose, x_w);
  PointResidual r(obs.dimension());
  const Vec2 px = k.project(x_c);
  r.head<2>() = obs.pixel - px;
  if (obs.right_u) {
    r[2] = *obs.right_u - (px.x() - k.fu * k.baseline / x_c.z());
  }
  return r;
}

struct PointJacobians {
  PointResidual residual;
  PointPoseJacobian d_pose;       // d r / d delta_xi
  PointLandmarkJacobian d_point;  // d r / d X_w
};

inline PointJacobians point_jacobians(const PointObservation& obs, const Pose& pose,
                                      const Vec3& x_w, const CameraIntrinsics& k) {
  const Vec3 x_c = detail::camera_point_checked(pose, x_w);
  const int dim = obs.dimension();
  const double x = x_c.x();
  const double y = x_c.y();
  const double iz = 1.0 / x_c.z();
  const double iz2 = iz * iz;

  // d projection / d x_c, rows (u, v[, u_right]).
  Eigen::Matrix<double, Eigen::Dynamic, 3, 0, 3, 3> dproj(dim, 3);
  dproj.row(0) << k.fu * iz, 0.0, -k.fu * x * iz2;
  dproj.row(1) << 0.0, k.fv * iz, -k.fv * y * iz2;
  if (dim == 3) {
    dproj.row(2) << k.fu * iz, 0.0, -k.fu * (x - k.baseline) * iz2;
  }

  // d x_c / d delta_xi = [I | -[x_c]x].
  Eigen::Matrix<double, 3, 6> dxc;
  dxc.leftCols<3>().setIdentity();
  dxc.rightCols<3>() = -skew(x_c);

  PointJacobians out;
  out.residual = point_residual(obs, pose, x_w, k);
  out.d_pose = -dproj * dxc;
  out.d_point = -dproj * pose.rotation;
  return out;
}

}  // namespace plslam
