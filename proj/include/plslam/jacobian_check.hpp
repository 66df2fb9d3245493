#pragma once

// Randomized comparison of every analytic Jacobian block against central
// finite differences of the map it differentiates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "plslam/geometry.hpp"
#include "plslam/measurement.hpp"
#include "plslam/random.hpp"

namespace plslam {

struct JacobianCheckOptions {
  int trials = 1000;
  double tolerance = 1e-5;
  double step = 1e-6;
  std::uint64_t seed = 1;
  /// Negative control: flips the sign of the translation block of
  /// d L_c / d delta_xi before comparing, which must make the check fail.
  bool inject_sign_error = false;
};

struct JacobianBlockResult {
  std::string name;
  double max_relative_error = 0.0;
  int failures = 0;
};

struct JacobianCheckReport {
  int trials = 0;
  int rejected_samples = 0;
  std::vector<JacobianBlockResult> blocks;

  bool passed() const {
    return std::all_of(blocks.begin(), blocks.end(), [](const auto& b) { return b.failures == 0; });
  }
};

/// Central differences of f around x, one column per coordinate.
template <typename F>
Eigen::MatrixXd numeric_jacobian(F&& f, const Eigen::VectorXd& x, double h) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd j(f0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x;
    Eigen::VectorXd xm = x;
    xp[i] += h;
    xm[i] -= h;
    j.col(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return j;
}

/// ||a - n||_F / max(||n||_F, 1e-12).
inline double relative_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric) {
  return (analytic - numeric).norm() / std::max(numeric.norm(), 1e-12);
}

/// One random, well-conditioned configuration: a pose, a line and a point in
/// front of the camera, and noisy observations of both.
struct JacobianSample {
  Pose pose;
  OrthonormalLine line;
  Vec3 point;
  ImageLineSegment line_obs;
  PointObservation point_obs;
  CameraIntrinsics k;
};

namespace detail {

inline Vec3 random_vec3(CounterRng& rng, double lo, double hi) {
  return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

// Camera-frame coordinates are drawn first so that depths and image-line
// conditioning can be controlled, then mapped to the world.
inline std::optional<JacobianSample> draw_sample(CounterRng& rng) {
  JacobianSample s;
  s.k = {rng.uniform(300.0, 700.0), rng.uniform(300.0, 700.0), rng.uniform(200.0, 400.0),
         rng.uniform(150.0, 300.0), rng.uniform(0.1, 1.0)};
  s.pose = {so3_exp(random_vec3(rng, -1.5, 1.5)), random_vec3(rng, -3.0, 3.0)};
  const Pose inv = s.pose.inverse();
  const auto in_front = [&] {
    return Vec3(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(1.0, 10.0));
  };
  const Vec3 a_c = in_front();
  const Vec3 b_c = in_front();
  const Vec3 p_c = in_front();
  if ((a_c - b_c).norm() < 0.5) return std::nullopt;

  const PlueckerLine l_w = plucker_from_points(inv * a_c, inv * b_c);
  s.line = orthonormal_from_plucker(l_w);
  const Vec3 l = s.k.line_matrix() * transform_line(s.pose, plucker_from_orthonormal(s.line)).n;
  if (std::hypot(l.x(), l.y()) < 1e-3) return std::nullopt;

  const auto noise = [&] { return Vec2(rng.gaussian(3.0), rng.gaussian(3.0)); };
  s.line_obs = ImageLineSegment(s.k.project(a_c) + noise(), s.k.project(b_c) + noise());
  s.point = inv * p_c;
  const Vec2 px = s.k.project(p_c);
  s.point_obs.pixel = px + noise();
  s.point_obs.right_u = px.x() - s.k.fu * s.k.baseline / p_c.z() + rng.gaussian(3.0);
  return s;
}

}  // namespace detail

inline JacobianCheckReport check_jacobians(const JacobianCheckOptions& opts = {}) {
  JacobianCheckReport report;
  report.blocks = {{"de_dl"},       {"dl_dLc"},       {"dLc_dLw"},      {"dLw_dtheta"},
                   {"dLc_dxi"},     {"line_d_pose"},  {"line_d_line"},  {"point_d_pose"},
                   {"point_d_point"}};
  const double h = opts.step;
  CounterRng rng(opts.seed, 0x4a4143ULL);
  const auto record = [&](std::size_t i, const Eigen::MatrixXd& a, const Eigen::MatrixXd& n) {
    const double err = relative_error(a, n);
    auto& b = report.blocks[i];
    b.max_relative_error = std::max(b.max_relative_error, err);
    if (!(err < opts.tolerance)) ++b.failures;
  };

  while (report.trials < opts.trials) {
    const auto drawn = detail::draw_sample(rng);
    if (!drawn) {
      ++report.rejected_samples;
      continue;
    }
    const JacobianSample& s = *drawn;
    ++report.trials;
    const PlueckerLine l_w = plucker_from_orthonormal(s.line);
    const PlueckerLine l_c = transform_line(s.pose, l_w);
    const Vec3 l = s.k.line_matrix() * l_c.n;

    record(0, jac_residual_wrt_lprime(s.line_obs, l),
           numeric_jacobian([&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
             return line_residual(s.line_obs, Vec3(x));
           }, l, h * l.norm()));

    record(1, jac_lprime_wrt_Lc(s.k),
           numeric_jacobian([&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
             return project_line(s.k, PlueckerLine::from_vector(Vec6(x)));
           }, l_c.vector(), h));

    record(2, jac_Lc_wrt_Lw(s.pose),
           numeric_jacobian([&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
             return transform_line(s.pose, PlueckerLine::from_vector(Vec6(x))).vector();
           }, l_w.vector(), h));

    record(3, jac_Lw_wrt_dtheta(s.line),
           numeric_jacobian([&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
             return plucker_from_orthonormal(update_orthonormal(s.line, LineUpdate(x))).vector();
           }, LineUpdate::Zero(), h));

    Mat6 d_xi = jac_Lc_wrt_dxi(s.pose, l_w);
    if (opts.inject_sign_error) d_xi.leftCols<3>() *= -1.0;
    record(4, d_xi,
           numeric_jacobian([&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
             return transform_line(pose_update(s.pose, PoseUpdate(x)), l_w).vector();
           }, PoseUpdate::Zero(), h));

    const LineJacobians lj = line_jacobians(s.line_obs, s.pose, s.line, s.k);
    Mat26 line_d_pose = lj.d_pose;
    if (opts.inject_sign_error) {
      line_d_pose.leftCols<3>() = -lj.d_pose.leftCols<3>();
    }
    record(5, line_d_pose,
           numeric_jacobian([&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
             const Pose p = pose_update(s.pose, PoseUpdate(x));
             return line_residual(s.line_obs, project_line(s.k, transform_line(p, l_w)));
           }, PoseUpdate::Zero(), h));
    record(6, lj.d_line,
           numeric_jacobian([&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
             const PlueckerLine moved = plucker_from_orthonormal(update_orthonormal(s.line, LineUpdate(x)));
             return line_residual(s.line_obs, project_line(s.k, transform_line(s.pose, moved)));
           }, LineUpdate::Zero(), h));

    const PointJacobians pj = point_jacobians(s.point_obs, s.pose, s.point, s.k);
    record(7, pj.d_pose,
           numeric_jacobian([&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
             return point_residual(s.point_obs, pose_update(s.pose, PoseUpdate(x)), s.point, s.k);
           }, PoseUpdate::Zero(), h));
    record(8, pj.d_point,
           numeric_jacobian([&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
             return point_residual(s.point_obs, s.pose, Vec3(x), s.k);
           }, s.point, h));
  }
  return report;
}

}  // namespace plslam
