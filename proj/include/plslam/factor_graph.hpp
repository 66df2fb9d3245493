#pragma once

// Pose/point/line factor graph with robust re-projection edges.

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "plslam/error.hpp"
#include "plslam/geometry.hpp"
#include "plslam/measurement.hpp"

namespace plslam {

/// Huber kernel on the squared Mahalanobis norm s:
///   rho(s) = s                      for s <= delta^2
///   rho(s) = 2 delta sqrt(s) - delta^2  otherwise
/// An infinite delta gives the plain quadratic cost.
struct HuberKernel {
  double delta = std::numeric_limits<double>::infinity();

  double rho(double s) const {
    if (!std::isfinite(delta) || s <= delta * delta) return s;
    return 2.0 * delta * std::sqrt(s) - delta * delta;
  }

  /// d rho / d s.
  double weight(double s) const {
    if (!std::isfinite(delta) || s <= delta * delta) return 1.0;
    return delta / std::sqrt(s);
  }
};

/// 95% chi-square quantiles for 2 and 3 degrees of freedom, as kernel widths.
inline const double kHuberDelta2Dof = std::sqrt(5.991);
inline const double kHuberDelta3Dof = std::sqrt(7.815);

enum class CameraSide { kLeft, kRight };

struct PoseVertex {
  Pose pose;
  bool fixed = false;
};

struct PointVertex {
  Vec3 position = Vec3::Zero();
  bool fixed = false;
};

struct LineVertex {
  OrthonormalLine line;
  bool fixed = false;
};

struct PointEdge {
  int pose_id = 0;
  int point_id = 0;
  PointObservation observation;
  Eigen::MatrixXd information;  // 2x2 or 3x3, matching the observation
  HuberKernel kernel{kHuberDelta2Dof};
};

struct LineEdge {
  int pose_id = 0;
  int line_id = 0;
  ImageLineSegment observation;
  Mat2 information = Mat2::Identity();
  HuberKernel kernel{kHuberDelta2Dof};
  CameraSide camera = CameraSide::kLeft;
};

/// World-to-camera transform of the right camera of a rectified stereo rig,
/// given the left camera pose.
inline Pose right_camera_offset(const CameraIntrinsics& k) {
  return {Mat3::Identity(), Vec3(-k.baseline, 0.0, 0.0)};
}

class FactorGraph {
 public:
  CameraIntrinsics intrinsics;
  std::map<int, PoseVertex> poses;
  std::map<int, PointVertex> points;
  std::map<int, LineVertex> lines;
  std::vector<PointEdge> point_edges;
  std::vector<LineEdge> line_edges;

  void add_pose(int id, const Pose& pose, bool fixed = false) {
    if (!poses.emplace(id, PoseVertex{pose, fixed}).second) {
      throw InvalidGraphError("duplicate pose id " + std::to_string(id));
    }
  }

  void add_point(int id, const Vec3& position, bool fixed = false) {
    if (!points.emplace(id, PointVertex{position, fixed}).second) {
      throw InvalidGraphError("duplicate point id " + std::to_string(id));
    }
  }

  void add_line(int id, const OrthonormalLine& line, bool fixed = false) {
    if (!lines.emplace(id, LineVertex{line, fixed}).second) {
      throw InvalidGraphError("duplicate line id " + std::to_string(id));
    }
  }

  /// Point edge with identity information and the default kernel for its
  /// dimension.
  PointEdge& add_point_edge(int pose_id, int point_id, const PointObservation& obs) {
    PointEdge e;
    e.pose_id = pose_id;
    e.point_id = point_id;
    e.observation = obs;
    e.information = Eigen::MatrixXd::Identity(obs.dimension(), obs.dimension());
    e.kernel = HuberKernel{obs.dimension() == 3 ? kHuberDelta3Dof : kHuberDelta2Dof};
    point_edges.push_back(std::move(e));
    return point_edges.back();
  }

  LineEdge& add_line_edge(int pose_id, int line_id, const ImageLineSegment& obs,
                          CameraSide camera = CameraSide::kLeft) {
    LineEdge e;
    e.pose_id = pose_id;
    e.line_id = line_id;
    e.observation = obs;
    e.camera = camera;
    line_edges.push_back(std::move(e));
    return line_edges.back();
  }

  bool has_free_landmark() const {
    for (const auto& [id, p] : points) {
      if (!p.fixed) return true;
    }
    for (const auto& [id, l] : lines) {
      if (!l.fixed) return true;
    }
    return false;
  }

  bool has_fixed_pose() const {
    for (const auto& [id, p] : poses) {
      if (p.fixed) return true;
    }
    return false;
  }

  /// Throws InvalidGraphError on dangling edges or non-SPD information.
  void validate() const {
    intrinsics.validate();
    for (const auto& e : point_edges) {
      if (!poses.count(e.pose_id) || !points.count(e.point_id)) {
        throw InvalidGraphError("point edge references a missing vertex (pose " +
                                std::to_string(e.pose_id) + ", point " +
                                std::to_string(e.point_id) + ")");
      }
      const int dim = e.observation.dimension();
      if (e.information.rows() != dim || e.information.cols() != dim) {
        throw InvalidGraphError("point edge information size does not match observation");
      }
      check_spd(e.information);
    }
    for (const auto& e : line_edges) {
      if (!poses.count(e.pose_id) || !lines.count(e.line_id)) {
        throw InvalidGraphError("line edge references a missing vertex (pose " +
                                std::to_string(e.pose_id) + ", line " +
                                std::to_string(e.line_id) + ")");
      }
      check_spd(e.information);
    }
  }

 private:
  static void check_spd(const Eigen::MatrixXd& m) {
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + m.cwiseAbs().maxCoeff())) {
      throw InvalidGraphError("information matrix is not symmetric");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) {
      throw InvalidGraphError("information matrix is not positive definite");
    }
  }
};

/// Camera-side pose for a line edge.
inline Pose edge_camera_pose(const Pose& left, CameraSide side, const CameraIntrinsics& k) {
  return side == CameraSide::kLeft ? left : right_camera_offset(k) * left;
}

/// Squared Mahalanobis norm of a point edge, or nullopt when the edge is
/// deactivated (landmark behind the camera).
inline std::optional<double> point_edge_chi2(const PointEdge& e, const Pose& pose,
                                             const Vec3& x_w, const CameraIntrinsics& k) {
  const Vec3 x_c = pose * x_w;
  if (!(x_c.z() > kMinDepth)) return std::nullopt;
  const PointResidual r = point_residual(e.observation, pose, x_w, k);
  const double s = r.dot(e.information * r);
  return std::isfinite(s) ? std::optional<double>(s) : std::nullopt;
}

/// Squared Mahalanobis norm of a line edge, or nullopt when the line does not
/// project to a finite image line.
inline std::optional<double> line_edge_chi2(const LineEdge& e, const Pose& left_pose,
                                            const OrthonormalLine& line,
                                            const CameraIntrinsics& k) {
  const Pose pose = edge_camera_pose(left_pose, e.camera, k);
  const Vec3 l = k.line_matrix() * transform_line(pose, plucker_from_orthonormal(line)).n;
  const double ln = std::hypot(l.x(), l.y());
  if (!(ln > 1e-12 * l.norm())) return std::nullopt;
  const LineResidual r = line_residual(e.observation, l);
  const double s = r.dot(e.information * r);
  return std::isfinite(s) ? std::optional<double>(s) : std::nullopt;
}

/// Robust cost  sum rho_p(Ep' Sp Ep) + sum rho_l(El' Sl El)  over all edges;
/// deactivated edges contribute zero.
inline double total_cost(const FactorGraph& g) {
  double cost = 0.0;
  for (const auto& e : g.point_edges) {
    const auto s = point_edge_chi2(e, g.poses.at(e.pose_id).pose,
                                   g.points.at(e.point_id).position, g.intrinsics);
    if (s) cost += e.kernel.rho(*s);
  }
  for (const auto& e : g.line_edges) {
    const auto s = line_edge_chi2(e, g.poses.at(e.pose_id).pose, g.lines.at(e.line_id).line,
                                  g.intrinsics);
    if (s) cost += e.kernel.rho(*s);
  }
  return cost;
}

}  // namespace plslam
