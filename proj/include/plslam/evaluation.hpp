#pragma once

// Trajectory error metrics and TUM trajectory files.
//
// A Trajectory stores camera-to-world poses (the camera pose expressed in the
// world frame), the convention of TUM files:
//   timestamp tx ty tz qx qy qz qw

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "plslam/error.hpp"
#include "plslam/geometry.hpp"
#include "plslam/text_io.hpp"

namespace plslam {

struct Trajectory {
  std::vector<double> timestamps;
  std::vector<Pose> poses;  // camera-to-world

  std::size_t size() const { return poses.size(); }
  bool empty() const { return poses.empty(); }

  void push_back(double stamp, const Pose& camera_to_world) {
    if (!timestamps.empty() && !(stamp > timestamps.back())) {
      throw Error("trajectory timestamps must be strictly increasing");
    }
    timestamps.push_back(stamp);
    poses.push_back(camera_to_world);
  }
};

struct RpeResult {
  double trans = 0.0;  // meters
  double rot = 0.0;    // radians
  std::size_t pairs = 0;
};

inline constexpr double kDefaultAssociationTolerance = 0.02;  // seconds

/// Index pairs (est, gt) matched by nearest timestamp within |tolerance|.
inline std::vector<std::pair<std::size_t, std::size_t>> associate(
    const Trajectory& est, const Trajectory& gt, double tolerance = kDefaultAssociationTolerance) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t j = 0;
  for (std::size_t i = 0; i < est.size() && !gt.empty(); ++i) {
    const double t = est.timestamps[i];
    while (j + 1 < gt.size() &&
           std::abs(gt.timestamps[j + 1] - t) <= std::abs(gt.timestamps[j] - t)) {
      ++j;
    }
    if (std::abs(gt.timestamps[j] - t) <= tolerance) out.emplace_back(i, j);
  }
  return out;
}

inline double rotation_angle(const Mat3& r) {
  const double c = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  return std::acos(c);
}

/// RMSE over associated pairs i of the translation norm and rotation angle of
///   (gt_i^-1 gt_{i+delta})^-1 (est_i^-1 est_{i+delta}).
inline RpeResult rpe_rmse(const Trajectory& est, const Trajectory& gt, std::size_t delta = 1,
                          double tolerance = kDefaultAssociationTolerance) {
  if (delta == 0) throw Error("rpe_rmse: delta must be positive");
  const auto pairs = associate(est, gt, tolerance);
  if (pairs.size() < delta + 1) throw Error("rpe_rmse: not enough associated poses");
  RpeResult r;
  double sum_t = 0.0;
  double sum_r = 0.0;
  for (std::size_t k = 0; k + delta < pairs.size(); ++k) {
    const auto [ei, gi] = pairs[k];
    const auto [ej, gj] = pairs[k + delta];
    const Pose gt_rel = gt.poses[gi].inverse() * gt.poses[gj];
    const Pose est_rel = est.poses[ei].inverse() * est.poses[ej];
    const Pose err = gt_rel.inverse() * est_rel;
    sum_t += err.translation.squaredNorm();
    const double a = rotation_angle(err.rotation);
    sum_r += a * a;
    ++r.pairs;
  }
  r.trans = std::sqrt(sum_t / static_cast<double>(r.pairs));
  r.rot = std::sqrt(sum_r / static_cast<double>(r.pairs));
  return r;
}

/// Rigid transform (no scale) minimizing sum |gt_i - (R est_i + t)|^2.
inline Pose align_rigid(const std::vector<Vec3>& est, const std::vector<Vec3>& gt) {
  const std::size_t n = est.size();
  Vec3 mu_e = Vec3::Zero();
  Vec3 mu_g = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mu_e += est[i];
    mu_g += gt[i];
  }
  mu_e /= static_cast<double>(n);
  mu_g /= static_cast<double>(n);
  Mat3 cov = Mat3::Zero();
  for (std::size_t i = 0; i < n; ++i) cov += (gt[i] - mu_g) * (est[i] - mu_e).transpose();
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 s = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) s(2, 2) = -1.0;
  const Mat3 r = svd.matrixU() * s * svd.matrixV().transpose();
  return {r, mu_g - r * mu_e};
}

/// RMSE of position differences, optionally after rigid alignment of est onto gt.
inline double ate(const Trajectory& est, const Trajectory& gt, bool align,
                  double tolerance = kDefaultAssociationTolerance) {
  const auto pairs = associate(est, gt, tolerance);
  if (pairs.empty()) throw Error("ate: no associated poses");
  std::vector<Vec3> pe;
  std::vector<Vec3> pg;
  for (const auto& [i, j] : pairs) {
    pe.push_back(est.poses[i].translation);
    pg.push_back(gt.poses[j].translation);
  }
  Pose t;
  if (align) t = align_rigid(pe, pg);
  double sum = 0.0;
  for (std::size_t i = 0; i < pe.size(); ++i) sum += (pg[i] - t * pe[i]).squaredNorm();
  return std::sqrt(sum / static_cast<double>(pe.size()));
}

/// Trajectory of camera-to-world poses from world-to-camera estimates.
inline Trajectory trajectory_from_world_to_camera(const std::vector<double>& stamps,
                                                  const std::vector<Pose>& world_to_camera) {
  Trajectory t;
  for (std::size_t i = 0; i < world_to_camera.size(); ++i) {
    t.push_back(stamps.at(i), world_to_camera[i].inverse());
  }
  return t;
}

inline void write_trajectory(std::ostream& os, const Trajectory& t) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    const Eigen::Quaterniond q(t.poses[i].rotation);
    const Vec3& p = t.poses[i].translation;
    os << format_double(t.timestamps[i]) << ' ' << format_double(p.x()) << ' '
       << format_double(p.y()) << ' ' << format_double(p.z()) << ' ' << format_double(q.x())
       << ' ' << format_double(q.y()) << ' ' << format_double(q.z()) << ' '
       << format_double(q.w()) << '\n';
  }
}

/// Parses TUM lines; blank lines and '#' comments are skipped.
inline Trajectory read_trajectory(std::istream& is) {
  Trajectory t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto tokens = split_fields(line);
    if (tokens.empty()) continue;
    if (tokens.size() != 8) {
      throw ParseError("expected 8 fields (timestamp tx ty tz qx qy qz qw), got " +
                           std::to_string(tokens.size()),
                       line_no);
    }
    double f[8];
    for (int i = 0; i < 8; ++i) f[i] = parse_double(tokens[i], line_no);
    Eigen::Quaterniond q(f[7], f[4], f[5], f[6]);
    if (!(q.norm() > 0.0)) throw ParseError("zero quaternion", line_no);
    q.normalize();
    if (!t.timestamps.empty() && !(f[0] > t.timestamps.back())) {
      throw ParseError("timestamps must be strictly increasing", line_no);
    }
    t.push_back(f[0], Pose{q.toRotationMatrix(), Vec3(f[1], f[2], f[3])});
  }
  return t;
}

inline void write_trajectory(const std::string& path, const Trajectory& t) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_trajectory(os, t);
  if (!os) throw IoError("failed writing " + path);
}

inline Trajectory read_trajectory(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  return read_trajectory(is);
}

}  // namespace plslam
