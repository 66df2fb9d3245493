#pragma once

// Synthetic stereo scene: a house made of 25 line segments plus sampled
// points, a circular camera orbit around it, and noisy stereo observations
// with perfect data association.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "plslam/error.hpp"
#include "plslam/frontend.hpp"
#include "plslam/geometry.hpp"
#include "plslam/random.hpp"
#include "plslam/text_io.hpp"

namespace plslam {

struct SceneLine {
  int id = 0;
  Vec3 start = Vec3::Zero();
  Vec3 end = Vec3::UnitX();
};

struct ScenePoint {
  int id = 0;
  Vec3 position = Vec3::Zero();
};

struct SimScene {
  std::vector<SceneLine> lines;
  std::vector<ScenePoint> points;
};

struct OrbitConfig {
  double radius = 6.0;   // meters
  double height = 1.0;   // camera height, meters
  int n_frames = 100;
  double frame_interval = 0.1;  // seconds
};

struct SimConfig {
  int n_points = 200;
  double noise_sigma = 1.0;  // pixels, standard deviation
  CameraIntrinsics intrinsics;
  int image_width = 640;
  int image_height = 480;
  OrbitConfig orbit;
  std::uint64_t seed = 1;

  void validate() const {
    intrinsics.validate();
    if (n_points < 0) throw Error("n_points must be nonnegative");
    if (!(noise_sigma >= 0.0)) throw Error("noise_sigma must be nonnegative");
    if (orbit.n_frames < 2) throw Error("the orbit needs at least 2 frames");
    if (!(orbit.radius > 0.0)) throw Error("orbit radius must be positive");
    if (image_width <= 0 || image_height <= 0) throw Error("image size must be positive");
  }
};

struct PointSighting {
  int id = 0;
  Vec2 left = Vec2::Zero();
  std::optional<Vec2> right;
};

struct LineSighting {
  int id = 0;
  std::optional<Segment2D> left;
  std::optional<Segment2D> right;
};

struct FrameObservations {
  int frame = 0;
  double timestamp = 0.0;
  Pose true_pose;  // world-to-camera (left camera)
  std::vector<PointSighting> points;
  std::vector<LineSighting> lines;
};

/// House edges: 12 cube edges, ridge, 4 roof slopes, 3 door edges, 4 window
/// edges and a chimney. The cube spans [-1, 1]^3 and the ridge sits at z = 1.8.
inline std::vector<SceneLine> house_lines() {
  const double r = 1.8;  // ridge height
  std::vector<std::pair<Vec3, Vec3>> s;
  for (double z : {-1.0, 1.0}) {
    s.emplace_back(Vec3(-1, -1, z), Vec3(1, -1, z));
    s.emplace_back(Vec3(1, -1, z), Vec3(1, 1, z));
    s.emplace_back(Vec3(1, 1, z), Vec3(-1, 1, z));
    s.emplace_back(Vec3(-1, 1, z), Vec3(-1, -1, z));
  }
  for (double x : {-1.0, 1.0}) {
    for (double y : {-1.0, 1.0}) s.emplace_back(Vec3(x, y, -1), Vec3(x, y, 1));
  }
  s.emplace_back(Vec3(-1, 0, r), Vec3(1, 0, r));
  for (double x : {-1.0, 1.0}) {
    for (double y : {-1.0, 1.0}) s.emplace_back(Vec3(x, y, 1), Vec3(x, 0, r));
  }
  // Door on the y = -1 wall.
  s.emplace_back(Vec3(-0.3, -1, -1), Vec3(-0.3, -1, 0.2));
  s.emplace_back(Vec3(0.3, -1, -1), Vec3(0.3, -1, 0.2));
  s.emplace_back(Vec3(-0.3, -1, 0.2), Vec3(0.3, -1, 0.2));
  // Window on the x = 1 wall.
  s.emplace_back(Vec3(1, -0.5, 0.0), Vec3(1, 0.5, 0.0));
  s.emplace_back(Vec3(1, 0.5, 0.0), Vec3(1, 0.5, 0.6));
  s.emplace_back(Vec3(1, 0.5, 0.6), Vec3(1, -0.5, 0.6));
  s.emplace_back(Vec3(1, -0.5, 0.6), Vec3(1, -0.5, 0.0));
  // Chimney rising from the +y roof plane.
  s.emplace_back(Vec3(0.5, 0.4, 1.0 + 0.8 * 0.6), Vec3(0.5, 0.4, 2.2));

  std::vector<SceneLine> out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    out.push_back({static_cast<int>(i), s[i].first, s[i].second});
  }
  return out;
}

/// Deterministic scene: the 25 house lines and |n_points| points sampled on
/// the walls and roof planes with up to 0.1 m of offset along the normal.
inline SimScene generate_house_scene(int n_points, std::uint64_t seed) {
  if (n_points < 0) throw Error("n_points must be nonnegative");
  SimScene scene;
  scene.lines = house_lines();
  CounterRng rng(seed, streams::kScene);
  const double roof_width = std::hypot(1.0, 0.8);
  const double wall_area = 4.0;
  const double roof_area = 2.0 * roof_width;
  const double total = 4.0 * wall_area + 2.0 * roof_area;
  for (int i = 0; i < n_points; ++i) {
    const double pick = rng.uniform() * total;
    const double a = rng.uniform(-1.0, 1.0);
    const double b = rng.uniform(-1.0, 1.0);
    const double off = rng.uniform(-0.1, 0.1);
    Vec3 p;
    if (pick < 4.0 * wall_area) {
      switch (static_cast<int>(pick / wall_area)) {
        case 0: p = Vec3(a, -1.0 - off, b); break;
        case 1: p = Vec3(1.0 + off, a, b); break;
        case 2: p = Vec3(a, 1.0 + off, b); break;
        default: p = Vec3(-1.0 - off, a, b); break;
      }
    } else {
      const double side = pick - 4.0 * wall_area < roof_area / 2.0 ? -1.0 : 1.0;
      const double t = 0.5 * (b + 1.0);  // 0 at the eave, 1 at the ridge
      const Vec3 normal = Vec3(0.0, side * 0.8, 1.0).normalized();
      p = Vec3(a, side * (1.0 - t), 1.0 + 0.8 * t) + off * normal;
    }
    scene.points.push_back({i, p});
  }
  return scene;
}

/// Camera facing the orbit centre horizontally, world z up, camera y down.
inline Pose look_at_horizontal(const Vec3& position, const Vec3& target) {
  Vec3 forward = target - position;
  forward.z() = 0.0;
  forward.normalize();
  const Vec3 down(0.0, 0.0, -1.0);
  const Vec3 right = down.cross(forward);
  Mat3 r_wc;
  r_wc.col(0) = right;
  r_wc.col(1) = down;
  r_wc.col(2) = forward;
  const Mat3 r_cw = r_wc.transpose();
  return {r_cw, -(r_cw * position)};
}

/// Closed circular orbit around the origin (the house centre). Returns
/// world-to-camera poses.
inline std::vector<Pose> generate_trajectory(const SimConfig& cfg) {
  cfg.validate();
  std::vector<Pose> poses;
  const int n = cfg.orbit.n_frames;
  for (int k = 0; k < n; ++k) {
    const double a = 2.0 * std::numbers::pi * k / n;
    const Vec3 c(cfg.orbit.radius * std::cos(a), cfg.orbit.radius * std::sin(a), cfg.orbit.height);
    poses.push_back(look_at_horizontal(c, Vec3(0.0, 0.0, cfg.orbit.height)));
  }
  return poses;
}

inline std::vector<double> frame_timestamps(const SimConfig& cfg) {
  std::vector<double> t;
  for (int k = 0; k < cfg.orbit.n_frames; ++k) t.push_back(k * cfg.orbit.frame_interval);
  return t;
}

/// Projects every landmark into the left and right cameras of every pose and
/// adds i.i.d. Gaussian pixel noise to point pixels and line endpoints.
inline std::vector<FrameObservations> render_observations(const SimScene& scene,
                                                          const std::vector<Pose>& poses,
                                                          const SimConfig& cfg) {
  cfg.validate();
  const auto& k = cfg.intrinsics;
  const double w = cfg.image_width;
  const double h = cfg.image_height;
  const Rect image{0.0, 0.0, w, h};
  const Pose right_offset{Mat3::Identity(), Vec3(-k.baseline, 0.0, 0.0)};
  CounterRng rng(cfg.seed, streams::kPixelNoise);
  const auto noisy = [&](const Vec2& p) {
    const double du = rng.gaussian(cfg.noise_sigma);
    const double dv = rng.gaussian(cfg.noise_sigma);
    return Vec2(p.x() + du, p.y() + dv);
  };
  const auto timestamps = frame_timestamps(cfg);

  std::vector<FrameObservations> frames;
  for (std::size_t f = 0; f < poses.size(); ++f) {
    FrameObservations obs;
    obs.frame = static_cast<int>(f);
    obs.timestamp = f < timestamps.size() ? timestamps[f] : f * cfg.orbit.frame_interval;
    obs.true_pose = poses[f];
    const Pose right_pose = right_offset * poses[f];
    for (const auto& p : scene.points) {
      const Vec3 xl = poses[f] * p.position;
      if (!(xl.z() > kNearPlane)) continue;
      const Vec2 pl = k.project(xl);
      if (!image.contains(pl)) continue;
      PointSighting s{p.id, noisy(pl), std::nullopt};
      const Vec3 xr = right_pose * p.position;
      const Vec2 pr = k.project(xr);
      if (image.contains(pr)) s.right = noisy(pr);
      obs.points.push_back(s);
    }
    for (const auto& l : scene.lines) {
      LineSighting s{l.id, std::nullopt, std::nullopt};
      if (auto seg = cull_line(l.start, l.end, poses[f], k, w, h)) {
        seg->start = noisy(seg->start);
        seg->end = noisy(seg->end);
        if (seg->length() > 0.0) s.left = *seg;
      }
      if (auto seg = cull_line(l.start, l.end, right_pose, k, w, h)) {
        seg->start = noisy(seg->start);
        seg->end = noisy(seg->end);
        if (seg->length() > 0.0) s.right = *seg;
      }
      if (s.left || s.right) obs.lines.push_back(s);
    }
    frames.push_back(std::move(obs));
  }
  return frames;
}

// ---------------------------------------------------------------------------
// Text formats.
//
// Scene file:
//   LINE  id x1 y1 z1 x2 y2 z2
//   POINT id x y z
//
// Observation file:
//   CAMERA fu fv cu cv baseline width height
//   FRAME  frame timestamp r00 r01 r02 r10 r11 r12 r20 r21 r22 t0 t1 t2
//   PT     frame id u_left v_left u_right v_right   (right pair "- -" if absent)
//   LN     frame id side u1 v1 u2 v2                (side is L or R)
//
// FRAME carries the true world-to-camera pose of the left camera. PT and LN
// records belong to the most recent FRAME with the same frame number.
// ---------------------------------------------------------------------------

inline void write_scene(std::ostream& os, const SimScene& scene) {
  os << "# plslam scene v1\n";
  for (const auto& l : scene.lines) {
    os << "LINE " << l.id;
    for (int i = 0; i < 3; ++i) os << ' ' << format_double(l.start[i]);
    for (int i = 0; i < 3; ++i) os << ' ' << format_double(l.end[i]);
    os << '\n';
  }
  for (const auto& p : scene.points) {
    os << "POINT " << p.id;
    for (int i = 0; i < 3; ++i) os << ' ' << format_double(p.position[i]);
    os << '\n';
  }
}

inline SimScene read_scene(std::istream& is) {
  SimScene scene;
  std::string line;
  std::size_t no = 0;
  while (std::getline(is, line)) {
    ++no;
    const auto f = split_fields(line);
    if (f.empty()) continue;
    if (f[0] == "LINE" && f.size() == 8) {
      SceneLine l;
      l.id = static_cast<int>(parse_int(f[1], no));
      for (int i = 0; i < 3; ++i) l.start[i] = parse_double(f[2 + i], no);
      for (int i = 0; i < 3; ++i) l.end[i] = parse_double(f[5 + i], no);
      scene.lines.push_back(l);
    } else if (f[0] == "POINT" && f.size() == 5) {
      ScenePoint p;
      p.id = static_cast<int>(parse_int(f[1], no));
      for (int i = 0; i < 3; ++i) p.position[i] = parse_double(f[2 + i], no);
      scene.points.push_back(p);
    } else {
      throw ParseError("unrecognized scene record '" + std::string(f[0]) + "'", no);
    }
  }
  return scene;
}

struct ObservationSet {
  CameraIntrinsics intrinsics;
  int image_width = 640;
  int image_height = 480;
  std::vector<FrameObservations> frames;
};

inline void write_observations(std::ostream& os, const ObservationSet& set) {
  const auto& k = set.intrinsics;
  os << "# plslam observations v1\n";
  os << "CAMERA " << format_double(k.fu) << ' ' << format_double(k.fv) << ' '
     << format_double(k.cu) << ' ' << format_double(k.cv) << ' ' << format_double(k.baseline)
     << ' ' << set.image_width << ' ' << set.image_height << '\n';
  for (const auto& fr : set.frames) {
    os << "FRAME " << fr.frame << ' ' << format_double(fr.timestamp);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) os << ' ' << format_double(fr.true_pose.rotation(r, c));
    }
    for (int i = 0; i < 3; ++i) os << ' ' << format_double(fr.true_pose.translation[i]);
    os << '\n';
    for (const auto& p : fr.points) {
      os << "PT " << fr.frame << ' ' << p.id << ' ' << format_double(p.left.x()) << ' '
         << format_double(p.left.y());
      if (p.right) {
        os << ' ' << format_double(p.right->x()) << ' ' << format_double(p.right->y());
      } else {
        os << " - -";
      }
      os << '\n';
    }
    for (const auto& l : fr.lines) {
      for (const auto& [side, seg] : {std::pair{'L', l.left}, std::pair{'R', l.right}}) {
        if (!seg) continue;
        os << "LN " << fr.frame << ' ' << l.id << ' ' << side << ' '
           << format_double(seg->start.x()) << ' ' << format_double(seg->start.y()) << ' '
           << format_double(seg->end.x()) << ' ' << format_double(seg->end.y()) << '\n';
      }
    }
  }
}

inline ObservationSet read_observations(std::istream& is) {
  ObservationSet set;
  std::string line;
  std::size_t no = 0;
  bool have_camera = false;
  const auto current = [&](std::string_view frame_field) -> FrameObservations& {
    const int frame = static_cast<int>(parse_int(frame_field, no));
    if (set.frames.empty() || set.frames.back().frame != frame) {
      throw ParseError("record refers to a frame that is not the current FRAME", no);
    }
    return set.frames.back();
  };
  while (std::getline(is, line)) {
    ++no;
    const auto f = split_fields(line);
    if (f.empty()) continue;
    if (f[0] == "CAMERA" && f.size() == 8) {
      auto& k = set.intrinsics;
      k.fu = parse_double(f[1], no);
      k.fv = parse_double(f[2], no);
      k.cu = parse_double(f[3], no);
      k.cv = parse_double(f[4], no);
      k.baseline = parse_double(f[5], no);
      set.image_width = static_cast<int>(parse_int(f[6], no));
      set.image_height = static_cast<int>(parse_int(f[7], no));
      have_camera = true;
    } else if (f[0] == "FRAME" && f.size() == 15) {
      FrameObservations fr;
      fr.frame = static_cast<int>(parse_int(f[1], no));
      fr.timestamp = parse_double(f[2], no);
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) fr.true_pose.rotation(r, c) = parse_double(f[3 + 3 * r + c], no);
      }
      for (int i = 0; i < 3; ++i) fr.true_pose.translation[i] = parse_double(f[12 + i], no);
      set.frames.push_back(std::move(fr));
    } else if (f[0] == "PT" && f.size() == 7) {
      auto& fr = current(f[1]);
      PointSighting p;
      p.id = static_cast<int>(parse_int(f[2], no));
      p.left = Vec2(parse_double(f[3], no), parse_double(f[4], no));
      if (f[5] != "-") p.right = Vec2(parse_double(f[5], no), parse_double(f[6], no));
      fr.points.push_back(p);
    } else if (f[0] == "LN" && f.size() == 8) {
      auto& fr = current(f[1]);
      const int id = static_cast<int>(parse_int(f[2], no));
      if (f[3] != "L" && f[3] != "R") throw ParseError("line side must be L or R", no);
      Segment2D seg{Vec2(parse_double(f[4], no), parse_double(f[5], no)),
                    Vec2(parse_double(f[6], no), parse_double(f[7], no)), std::nullopt};
      if (fr.lines.empty() || fr.lines.back().id != id) fr.lines.push_back({id, std::nullopt, std::nullopt});
      (f[3] == "L" ? fr.lines.back().left : fr.lines.back().right) = seg;
    } else {
      throw ParseError("unrecognized observation record '" + std::string(f[0]) + "'", no);
    }
  }
  if (!have_camera && !set.frames.empty()) throw ParseError("missing CAMERA record", 0);
  return set;
}

inline void write_scene(const std::string& path, const SimScene& scene) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_scene(os, scene);
}

inline SimScene read_scene(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  return read_scene(is);
}

inline void write_observations(const std::string& path, const ObservationSet& set) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_observations(os, set);
}

inline ObservationSet read_observations(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  return read_observations(is);
}

}  // namespace plslam
