#pragma once

#include <cstdint>
#include <optional>

#include "plslam/experiment.hpp"
#include "plslam/frontend.hpp"
#include "plslam/geometry.hpp"
#include "plslam/random.hpp"

namespace plslam::testing {

inline Vec3 random_vec3(CounterRng& rng, double lo = -1.0, double hi = 1.0) {
  return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

inline Mat3 random_rotation(CounterRng& rng) {
  return so3_exp(random_vec3(rng, -3.0, 3.0));
}

inline Pose random_pose(CounterRng& rng, double max_translation = 3.0) {
  return {random_rotation(rng), random_vec3(rng, -max_translation, max_translation)};
}

inline PlueckerLine random_line(CounterRng& rng) {
  for (;;) {
    const Vec3 a = random_vec3(rng, -5.0, 5.0);
    const Vec3 b = random_vec3(rng, -5.0, 5.0);
    if ((a - b).norm() > 0.1) return plucker_from_points(a, b);
  }
}

/// Largest |a - s b| over the best positive s, with both at unit norm.
inline double positive_scale_distance(const PlueckerLine& a, const PlueckerLine& b) {
  return projective_distance(a, b, false);
}

/// Simulated house graph with |frames| frames on the default orbit.
inline SimGraph small_sim_graph(int frames, int points, double noise, InitMode mode,
                                FeatureMode features = FeatureMode::kPointsAndLines,
                                std::uint64_t seed = 5, double landmark_sigma = 0.05) {
  SimConfig cfg;
  cfg.n_points = points;
  cfg.noise_sigma = noise;
  cfg.orbit.n_frames = frames;
  cfg.seed = seed;
  const SimScene scene = generate_house_scene(points, seed);
  const auto obs = render_observations(scene, generate_trajectory(cfg), cfg);
  GraphInit init;
  init.mode = mode;
  init.features = features;
  init.seed = seed;
  init.pose_sigma = 0.02;
  init.landmark_sigma = landmark_sigma;
  return build_graph_from_sim(scene, obs, cfg.intrinsics, init);
}

// Independent oracle: dense sampling finds the inside span, then bisection
// refines both boundaries.
inline std::optional<Segment2D> clip_oracle(const Segment2D& s, const Rect& r) {
  const auto at = [&](double t) -> Vec2 { return s.start + t * (s.end - s.start); };
  const auto inside = [&](double t) { return r.contains(at(t)); };
  constexpr int kSamples = 10000;
  int first = -1;
  int last = -1;
  for (int i = 0; i <= kSamples; ++i) {
    if (inside(static_cast<double>(i) / kSamples)) {
      if (first < 0) first = i;
      last = i;
    }
  }
  if (first < 0) return std::nullopt;
  const auto refine = [&](double in, double out) {
    for (int k = 0; k < 80; ++k) {
      const double mid = 0.5 * (in + out);
      (inside(mid) ? in : out) = mid;
    }
    return in;
  };
  const double t0 = first == 0 ? 0.0 : refine(first / double(kSamples), (first - 1) / double(kSamples));
  const double t1 = last == kSamples ? 1.0 : refine(last / double(kSamples), (last + 1) / double(kSamples));
  return Segment2D{at(t0), at(t1), std::nullopt};
}

}  // namespace plslam::testing
