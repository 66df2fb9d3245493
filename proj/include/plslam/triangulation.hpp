#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SVD>

#include "plslam/geometry.hpp"
#include "plslam/measurement.hpp"

namespace plslam {

/// World point from a rectified stereo match seen by the left camera at
/// |pose|. nullopt when the disparity is not positive.
inline std::optional<Vec3> triangulate_stereo_point(const Vec2& left, double right_u,
                                                    const Pose& pose, const CameraIntrinsics& k,
                                                    double min_disparity = 1e-3) {
  const double disparity = left.x() - right_u;
  if (!(disparity > min_disparity)) return std::nullopt;
  const double z = k.fu * k.baseline / disparity;
  const Vec3 x_c = z * k.back_project(left);
  return pose.inverse() * x_c;
}

/// One image segment together with the world-to-camera pose that saw it.
struct LineView {
  Pose pose;
  Vec2 start;
  Vec2 end;
};

/// Plane through the camera centre and the image segment, as (normal, d) with
/// normal . X + d = 0 and |normal| = 1.
inline Vec4 back_projected_plane(const LineView& view, const CameraIntrinsics& k) {
  const Vec3 image_line = Vec3(view.start.x(), view.start.y(), 1.0).cross(Vec3(view.end.x(), view.end.y(), 1.0));
  const Vec3 camera_plane = k.point_matrix().transpose() * image_line;
  Vec4 plane;
  plane.head<3>() = view.pose.rotation.transpose() * camera_plane;
  plane[3] = view.pose.translation.dot(camera_plane);
  return plane / plane.head<3>().norm();
}

/// Least-squares intersection of the back-projected planes of all views.
/// nullopt unless two of the planes make at least |min_plane_angle| radians.
inline std::optional<PlueckerLine> triangulate_line(const std::vector<LineView>& views,
                                                    const CameraIntrinsics& k,
                                                    double min_plane_angle = 0.035) {
  if (views.size() < 2) return std::nullopt;
  Eigen::MatrixXd a(static_cast<Eigen::Index>(views.size()), 4);
  for (std::size_t i = 0; i < views.size(); ++i) {
    a.row(static_cast<Eigen::Index>(i)) = back_projected_plane(views[i], k).transpose();
  }
  // Largest angle between plane normals decides whether the intersection is
  // well conditioned.
  double best = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < a.rows(); ++j) {
      best = std::max(best, a.row(i).head<3>().cross(a.row(j).head<3>()).norm());
    }
  }
  if (best < std::sin(min_plane_angle)) return std::nullopt;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Vec4 p1 = svd.matrixV().col(2);
  const Vec4 p2 = svd.matrixV().col(3);
  try {
    return plucker_from_points(p1, p2);
  } catch (const DegenerateError&) {
    return std::nullopt;
  }
}

}  // namespace plslam
