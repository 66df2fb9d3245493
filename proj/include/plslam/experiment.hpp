#pragma once

// Drivers that connect the simulator to the optimizer: factor graph
// construction with several initializations, and a sequential stereo
// odometry (motion-only BA per frame followed by windowed local BA) used for
// the Monte-Carlo comparison of point, line and point+line back-ends.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "plslam/error.hpp"
#include "plslam/evaluation.hpp"
#include "plslam/factor_graph.hpp"
#include "plslam/optimizer.hpp"
#include "plslam/random.hpp"
#include "plslam/simulator.hpp"
#include "plslam/triangulation.hpp"

namespace plslam {

enum class FeatureMode { kPoints, kLines, kPointsAndLines };

inline bool uses_points(FeatureMode m) { return m != FeatureMode::kLines; }
inline bool uses_lines(FeatureMode m) { return m != FeatureMode::kPoints; }

inline std::string to_string(FeatureMode m) {
  switch (m) {
    case FeatureMode::kPoints: return "points";
    case FeatureMode::kLines: return "lines";
    case FeatureMode::kPointsAndLines: return "points+lines";
  }
  return "unknown";
}

inline FeatureMode parse_feature_mode(const std::string& s) {
  if (s == "points") return FeatureMode::kPoints;
  if (s == "lines") return FeatureMode::kLines;
  if (s == "points+lines") return FeatureMode::kPointsAndLines;
  throw Error("unknown feature mode '" + s + "'");
}

enum class InitMode { kGroundTruth, kPerturbed, kOdometryChain };

struct GraphInit {
  InitMode mode = InitMode::kGroundTruth;
  /// Std of each tangent coordinate of the pose perturbation.
  double pose_sigma = 0.05;
  /// Std of the landmark perturbation (meters for points, tangent units for
  /// lines) when landmarks are not triangulated.
  double landmark_sigma = 0.0;
  /// Initialize landmarks from the observations and the initial poses
  /// instead of perturbing the ground truth.
  bool triangulate = false;
  FeatureMode features = FeatureMode::kPointsAndLines;
  /// Add right-image line observations as separate edges.
  bool stereo_lines = true;
  std::uint64_t seed = 1;
};

/// Ground-truth vertices keyed like the graph built from the simulation.
struct SimGraph {
  FactorGraph graph;
  std::vector<int> pose_ids;  // frame order
  std::vector<double> timestamps;
};

namespace detail {

inline std::vector<LineView> collect_line_views(const std::vector<FrameObservations>& frames,
                                                const std::vector<Pose>& poses, int line_id,
                                                const CameraIntrinsics& k) {
  std::vector<LineView> views;
  const Pose right = right_camera_offset(k);
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (const auto& l : frames[f].lines) {
      if (l.id != line_id) continue;
      if (l.left) views.push_back({poses[f], l.left->start, l.left->end});
      if (l.right) views.push_back({right * poses[f], l.right->start, l.right->end});
    }
  }
  return views;
}

inline Vec6 gaussian6(CounterRng& rng, double sigma) {
  Vec6 v;
  for (int i = 0; i < 6; ++i) v[i] = rng.gaussian(sigma);
  return v;
}

}  // namespace detail

/// Factor graph over every frame of |frames| with the first pose fixed at its
/// true value. Points take stereo (3-row) edges when a right observation
/// exists; lines take one edge per observed image.
inline SimGraph build_graph_from_sim(const SimScene& scene,
                                     const std::vector<FrameObservations>& frames,
                                     const CameraIntrinsics& k, const GraphInit& init) {
  if (frames.empty()) throw Error("build_graph_from_sim: no observations");
  SimGraph out;
  FactorGraph& g = out.graph;
  g.intrinsics = k;
  CounterRng rng(init.seed, streams::kInitialization);

  std::vector<Pose> initial;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const Pose& truth = frames[f].true_pose;
    Pose p = truth;
    if (f > 0) {
      switch (init.mode) {
        case InitMode::kGroundTruth:
          break;
        case InitMode::kPerturbed:
          p = pose_update(truth, detail::gaussian6(rng, init.pose_sigma));
          break;
        case InitMode::kOdometryChain: {
          const Pose rel = truth * frames[f - 1].true_pose.inverse();
          p = pose_update(rel * initial.back(), detail::gaussian6(rng, init.pose_sigma));
          break;
        }
      }
    }
    initial.push_back(p);
    g.add_pose(frames[f].frame, p, f == 0);
    out.pose_ids.push_back(frames[f].frame);
    out.timestamps.push_back(frames[f].timestamp);
  }

  if (uses_points(init.features)) {
    for (const auto& sp : scene.points) {
      std::optional<Vec3> x;
      if (init.triangulate) {
        for (std::size_t f = 0; f < frames.size() && !x; ++f) {
          for (const auto& o : frames[f].points) {
            if (o.id == sp.id && o.right) {
              x = triangulate_stereo_point(o.left, o.right->x(), initial[f], k);
              break;
            }
          }
        }
      } else {
        x = sp.position + Vec3(rng.gaussian(init.landmark_sigma), rng.gaussian(init.landmark_sigma),
                               rng.gaussian(init.landmark_sigma));
      }
      if (x) g.add_point(sp.id, *x);
    }
  }
  if (uses_lines(init.features)) {
    for (const auto& sl : scene.lines) {
      std::optional<OrthonormalLine> o;
      if (init.triangulate) {
        if (auto l = triangulate_line(detail::collect_line_views(frames, initial, sl.id, k), k)) {
          o = orthonormal_from_plucker(*l);
        }
      } else {
        LineUpdate d;
        for (int i = 0; i < 4; ++i) d[i] = rng.gaussian(init.landmark_sigma);
        o = update_orthonormal(orthonormal_from_plucker(plucker_from_points(sl.start, sl.end)), d);
      }
      if (o) g.add_line(sl.id, *o);
    }
  }

  for (const auto& fr : frames) {
    for (const auto& o : fr.points) {
      if (!g.points.count(o.id)) continue;
      PointObservation obs{o.left, std::nullopt};
      if (o.right) obs.right_u = o.right->x();
      g.add_point_edge(fr.frame, o.id, obs);
    }
    for (const auto& o : fr.lines) {
      if (!g.lines.count(o.id)) continue;
      if (o.left) g.add_line_edge(fr.frame, o.id, {o.left->start, o.left->end}, CameraSide::kLeft);
      if (o.right && init.stereo_lines) {
        g.add_line_edge(fr.frame, o.id, {o.right->start, o.right->end}, CameraSide::kRight);
      }
    }
  }
  if (g.point_edges.empty() && g.line_edges.empty()) {
    throw Error("build_graph_from_sim: no usable observations");
  }
  return out;
}

/// Estimated camera-to-world trajectory of the graph's poses.
inline Trajectory graph_trajectory(const SimGraph& sg) {
  std::vector<Pose> poses;
  for (int id : sg.pose_ids) poses.push_back(sg.graph.poses.at(id).pose);
  return trajectory_from_world_to_camera(sg.timestamps, poses);
}

inline Trajectory true_trajectory(const std::vector<FrameObservations>& frames) {
  Trajectory t;
  for (const auto& f : frames) t.push_back(f.timestamp, f.true_pose.inverse());
  return t;
}

struct OdometryOptions {
  FeatureMode features = FeatureMode::kPointsAndLines;
  /// Every n-th frame is a keyframe; only keyframes create landmarks and
  /// enter the local BA. Other frames are tracked by motion-only BA.
  int keyframe_interval = 3;
  /// Keyframes optimized by each local BA (the newest ones).
  int window = 5;
  /// Older keyframes whose observations constrain the local BA while held
  /// fixed.
  int context = 10;
  bool stereo_lines = true;
  /// Minimum angle between back-projected planes for line initialization.
  double min_line_plane_angle = 0.035;
  SolverOptions motion{.max_iters = 10, .validate_graph = false};
  SolverOptions local{.max_iters = 10, .validate_graph = false};
};

struct OdometryResult {
  std::vector<Pose> poses;  // world-to-camera, frame order
  std::vector<double> timestamps;
  FactorGraph graph;
  int initialized_points = 0;
  int initialized_lines = 0;
};

/// Sequential stereo odometry with perfect association. Frame 0 is anchored
/// at its true pose; each later frame is predicted with a constant-velocity
/// model, refined by motion-only BA against the current map, used to
/// initialize new landmarks, and finally adjusted by a local BA over the last
/// |window| frames.
inline OdometryResult run_odometry(const std::vector<FrameObservations>& frames,
                                   const CameraIntrinsics& k, const OdometryOptions& opts) {
  if (frames.empty()) throw Error("run_odometry: no frames");
  OdometryResult res;
  FactorGraph& g = res.graph;
  g.intrinsics = k;
  const Pose right = right_camera_offset(k);
  const bool points = uses_points(opts.features);
  const bool lines = uses_lines(opts.features);

  std::vector<int> keyframes;
  // Line observations waiting for a well-conditioned initialization.
  std::map<int, std::vector<std::pair<int, LineSighting>>> pending_lines;

  const auto add_point_edge = [&](int frame, const PointSighting& o) {
    PointObservation obs{o.left, std::nullopt};
    if (o.right) obs.right_u = o.right->x();
    g.add_point_edge(frame, o.id, obs);
  };
  const auto add_line_edges = [&](int frame, const LineSighting& o) {
    if (o.left) g.add_line_edge(frame, o.id, {o.left->start, o.left->end}, CameraSide::kLeft);
    if (o.right && opts.stereo_lines) {
      g.add_line_edge(frame, o.id, {o.right->start, o.right->end}, CameraSide::kRight);
    }
  };

  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto& fr = frames[f];
    Pose guess = fr.true_pose;
    if (f == 1) {
      guess = g.poses.at(frames[0].frame).pose;
    } else if (f >= 2) {
      const Pose& p1 = g.poses.at(frames[f - 1].frame).pose;
      const Pose& p2 = g.poses.at(frames[f - 2].frame).pose;
      guess = (p1 * p2.inverse()) * p1;
    }
    g.add_pose(fr.frame, guess, f == 0);

    // Track against the existing map.
    std::size_t tracked = 0;
    if (points) {
      for (const auto& o : fr.points) {
        if (g.points.count(o.id)) {
          add_point_edge(fr.frame, o);
          ++tracked;
        }
      }
    }
    if (lines) {
      for (const auto& o : fr.lines) {
        if (g.lines.count(o.id)) {
          add_line_edges(fr.frame, o);
          ++tracked;
        }
      }
    }
    if (f > 0 && tracked > 0) motion_only_ba(g, fr.frame, opts.motion);
    const Pose current = g.poses.at(fr.frame).pose;
    const bool keyframe = f % static_cast<std::size_t>(std::max(1, opts.keyframe_interval)) == 0;
    if (!keyframe) {
      g.poses.at(fr.frame).fixed = true;
      continue;
    }
    keyframes.push_back(fr.frame);

    // New landmarks.
    if (points) {
      for (const auto& o : fr.points) {
        if (g.points.count(o.id) || !o.right) continue;
        if (auto x = triangulate_stereo_point(o.left, o.right->x(), current, k)) {
          g.add_point(o.id, *x);
          add_point_edge(fr.frame, o);
          ++res.initialized_points;
        }
      }
    }
    if (lines) {
      for (const auto& o : fr.lines) {
        if (g.lines.count(o.id)) continue;
        auto& pending = pending_lines[o.id];
        pending.emplace_back(fr.frame, o);
        std::vector<LineView> views;
        for (const auto& [frame, s] : pending) {
          const Pose& p = g.poses.at(frame).pose;
          if (s.left) views.push_back({p, s.left->start, s.left->end});
          if (s.right) views.push_back({right * p, s.right->start, s.right->end});
        }
        if (auto l = triangulate_line(views, k, opts.min_line_plane_angle)) {
          g.add_line(o.id, orthonormal_from_plucker(*l));
          for (const auto& [frame, s] : pending) add_line_edges(frame, s);
          pending_lines.erase(o.id);
          ++res.initialized_lines;
        }
      }
    }

    if (f > 0) {
      std::set<int> active;
      std::set<int> context;
      const int n = static_cast<int>(keyframes.size());
      const int first = std::max(0, n - opts.window);
      const int ctx_first = std::max(0, first - opts.context);
      for (int i = first; i < n; ++i) active.insert(keyframes[i]);
      for (int i = ctx_first; i < first; ++i) context.insert(keyframes[i]);
      local_ba(g, active, opts.local, &context);
    }
  }

  for (const auto& fr : frames) {
    res.poses.push_back(g.poses.at(fr.frame).pose);
    res.timestamps.push_back(fr.timestamp);
  }
  return res;
}

/// One Monte-Carlo run: simulate with |seed|, run the odometry, score it.
struct RunResult {
  std::uint64_t seed = 0;
  FeatureMode features = FeatureMode::kPointsAndLines;
  RpeResult rpe;
  double ate = 0.0;
  Trajectory estimate;
  Trajectory truth;
};

inline RunResult run_odometry_trial(SimConfig cfg, FeatureMode features, OdometryOptions opts = {}) {
  cfg.validate();
  const SimScene scene = generate_house_scene(cfg.n_points, cfg.seed);
  const auto poses = generate_trajectory(cfg);
  const auto frames = render_observations(scene, poses, cfg);
  opts.features = features;
  const OdometryResult odo = run_odometry(frames, cfg.intrinsics, opts);
  RunResult r;
  r.seed = cfg.seed;
  r.features = features;
  r.truth = true_trajectory(frames);
  r.estimate = trajectory_from_world_to_camera(odo.timestamps, odo.poses);
  r.rpe = rpe_rmse(r.estimate, r.truth, 1);
  r.ate = ate(r.estimate, r.truth, false);
  return r;
}

}  // namespace plslam
