#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "plslam/error.hpp"
#include "plslam/jacobian_check.hpp"
#include "plslam/optimizer.hpp"
#include "test_support.hpp"

namespace plslam {
namespace {

using testing::small_sim_graph;

// Applies a stacked update laid out like the normal equations.
FactorGraph perturbed_copy(const FactorGraph& g, const ParameterLayout& layout, const Eigen::VectorXd& dx) {
  FactorGraph out = g;
  for (const auto& [id, off] : layout.pose_offset) {
    out.poses.at(id).pose = pose_update(out.poses.at(id).pose, dx.segment<6>(off));
  }
  for (const auto& [id, off] : layout.point_offset) out.points.at(id).position += dx.segment<3>(off);
  for (const auto& [id, off] : layout.line_offset) {
    out.lines.at(id).line = update_orthonormal(out.lines.at(id).line, dx.segment<4>(off));
  }
  return out;
}

// Whitened residuals of every edge, stacked in edge order.
Eigen::VectorXd whitened_residuals(const FactorGraph& g) {
  std::vector<double> r;
  const auto& k = g.intrinsics;
  for (const auto& e : g.point_edges) {
    const PointResidual res = point_residual(e.observation, g.poses.at(e.pose_id).pose,
                                             g.points.at(e.point_id).position, k);
    const Eigen::MatrixXd l = Eigen::LLT<Eigen::MatrixXd>(e.information).matrixU();
    const Eigen::VectorXd w = l * res;
    r.insert(r.end(), w.data(), w.data() + w.size());
  }
  for (const auto& e : g.line_edges) {
    const Pose p = edge_camera_pose(g.poses.at(e.pose_id).pose, e.camera, k);
    const Vec3 l = project_line(k, transform_line(p, plucker_from_orthonormal(g.lines.at(e.line_id).line)));
    const Mat2 u = Eigen::LLT<Mat2>(e.information).matrixU();
    const Vec2 w = u * line_residual(e.observation, l);
    r.push_back(w[0]);
    r.push_back(w[1]);
  }
  return Eigen::Map<Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
}

// Three poses and a few landmarks, with non-identity information and a mix of
// left and right line edges.
FactorGraph tiny_graph() {
  SimGraph sg = small_sim_graph(3, 8, 1.0, InitMode::kPerturbed);
  FactorGraph& g = sg.graph;
  int i = 0;
  for (auto& e : g.point_edges) {
    if (i++ % 2 == 0) {
      Eigen::MatrixXd a = Eigen::MatrixXd::Identity(e.information.rows(), e.information.cols());
      a(0, 1) = a(1, 0) = 0.2;
      e.information = 1.5 * a;
    }
  }
  for (auto& e : g.line_edges) {
    if (i++ % 2 == 0) e.information << 2.0, 0.3, 0.3, 0.7;
  }
  // Keep the problem small: drop all but the first 10 landmarks.
  while (g.points.size() + g.lines.size() > 10) {
    if (g.lines.size() > 4) {
      const int id = std::prev(g.lines.end())->first;
      g.lines.erase(id);
      std::erase_if(g.line_edges, [id](const auto& e) { return e.line_id == id; });
    } else {
      const int id = std::prev(g.points.end())->first;
      g.points.erase(id);
      std::erase_if(g.point_edges, [id](const auto& e) { return e.point_id == id; });
    }
  }
  return g;
}

TEST(NormalEquations, MatchFiniteDifferenceJacobian) {
  const FactorGraph g = tiny_graph();
  ASSERT_LE(g.poses.size(), 3u);
  ASSERT_LE(g.points.size() + g.lines.size(), 10u);
  ASSERT_FALSE(g.line_edges.empty());
  const NormalEquations ne = build_normal_equations(g, false);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(ne.layout.dimension);
  const Eigen::MatrixXd j = numeric_jacobian(
      [&](const Eigen::VectorXd& dx) -> Eigen::VectorXd {
        return whitened_residuals(perturbed_copy(g, ne.layout, dx));
      },
      zero, 1e-6);
  const Eigen::VectorXd r = whitened_residuals(g);
  EXPECT_LT(relative_error(ne.hessian, j.transpose() * j), 1e-5);
  EXPECT_LT(relative_error(ne.gradient, j.transpose() * r), 1e-5);
}

TEST(NormalEquations, RobustGradientIsHalfCostGradient) {
  FactorGraph g = tiny_graph();
  for (auto& e : g.point_edges) e.kernel.delta = 1.0;
  for (auto& e : g.line_edges) e.kernel.delta = 1.0;
  const NormalEquations ne = build_normal_equations(g, true);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(ne.layout.dimension);
  const Eigen::MatrixXd dc = numeric_jacobian(
      [&](const Eigen::VectorXd& dx) -> Eigen::VectorXd {
        return Eigen::VectorXd::Constant(1, total_cost(perturbed_copy(g, ne.layout, dx)));
      },
      zero, 1e-6);
  EXPECT_LT(relative_error(2.0 * ne.gradient.transpose(), dc), 1e-5);
}

TEST(NormalEquations, LineEdgesDoNotTouchPointBlocks) {
  const FactorGraph full = small_sim_graph(4, 20, 1.0, InitMode::kPerturbed).graph;
  FactorGraph points_only = full;
  points_only.line_edges.clear();
  points_only.lines.clear();
  const NormalEquations a = build_normal_equations(full);
  const NormalEquations b = build_normal_equations(points_only);
  ASSERT_EQ(a.layout.pose_offset, b.layout.pose_offset);
  ASSERT_EQ(a.layout.point_offset, b.layout.point_offset);
  const int pb = 6 * static_cast<int>(a.layout.pose_offset.size());
  const int np = 3 * static_cast<int>(a.layout.point_offset.size());
  ASSERT_GT(np, 0);
  // Point rows: point-point and pose-point entries, plus the point gradient.
  const Eigen::MatrixXd ra = a.hessian.block(pb, 0, np, pb + np);
  const Eigen::MatrixXd rb = b.hessian.block(pb, 0, np, pb + np);
  EXPECT_TRUE((ra.array() == rb.array()).all());
  EXPECT_TRUE((a.gradient.segment(pb, np).array() == b.gradient.segment(pb, np).array()).all());
}

TEST(SolveLm, GroundTruthIsAFixedPoint) {
  FactorGraph g = small_sim_graph(5, 30, 0.0, InitMode::kGroundTruth, FeatureMode::kPointsAndLines, 5, 0.0).graph;
  const SolveReport r = solve_lm(g);
  EXPECT_LE(r.iterations, 1);
  EXPECT_LT(r.final_cost, 1e-18);
}

TEST(SolveLm, RecoversPerturbedPosesWithoutNoise) {
  SimGraph sg = small_sim_graph(8, 40, 0.0, InitMode::kPerturbed, FeatureMode::kPointsAndLines, 6, 0.02);
  std::vector<Pose> truth;
  SimConfig cfg;
  cfg.orbit.n_frames = 8;
  truth = generate_trajectory(cfg);
  const SolveReport r = solve_lm(sg.graph);
  EXPECT_LT(r.final_cost, 1e-12);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const Pose& est = sg.graph.poses.at(sg.pose_ids[i]).pose;
    EXPECT_LT((est.center() - truth[i].center()).norm(), 1e-6);
  }
}

TEST(SolveLm, AcceptedStepsNeverIncreaseCost) {
  FactorGraph g = small_sim_graph(10, 60, 1.0, InitMode::kPerturbed, FeatureMode::kPointsAndLines, 7, 0.1).graph;
  const SolveReport r = solve_lm(g);
  ASSERT_GE(r.cost_trace.size(), 2u);
  EXPECT_EQ(r.cost_trace.front(), r.initial_cost);
  EXPECT_EQ(r.cost_trace.back(), r.final_cost);
  for (std::size_t i = 1; i < r.cost_trace.size(); ++i) {
    EXPECT_LT(r.cost_trace[i], r.cost_trace[i - 1]) << "step " << i;
  }
  EXPECT_EQ(r.final_cost, total_cost(g));
  EXPECT_LT(r.final_cost, 0.05 * r.initial_cost);
}

TEST(SolveLm, SchurAndDenseAgree) {
  const FactorGraph g = small_sim_graph(6, 40, 1.0, InitMode::kPerturbed, FeatureMode::kPointsAndLines, 8).graph;
  FactorGraph dense = g;
  FactorGraph schur = g;
  SolverOptions d;
  d.schur_threshold = 1 << 30;
  SolverOptions s;
  s.schur_threshold = 0;
  const SolveReport rd = solve_lm(dense, d);
  const SolveReport rs = solve_lm(schur, s);
  EXPECT_NEAR(rd.final_cost, rs.final_cost, 1e-8 * rd.final_cost);
  for (const auto& [id, v] : dense.poses) {
    EXPECT_LT((v.pose.translation - schur.poses.at(id).pose.translation).norm(), 1e-6);
  }
}

TEST(SolveLm, FinalCostIndependentOfInitialRigidOffset) {
  const FactorGraph g = small_sim_graph(6, 40, 1.0, InitMode::kPerturbed, FeatureMode::kPointsAndLines, 9).graph;
  FactorGraph moved = g;
  PoseUpdate xi;
  xi << 0.05, -0.03, 0.02, 0.01, -0.02, 0.015;
  const Pose t = se3_exp(xi);
  const Pose t_inv = t.inverse();
  for (auto& [id, v] : moved.poses) {
    if (!v.fixed) v.pose = v.pose * t_inv;
  }
  for (auto& [id, v] : moved.points) v.position = t * v.position;
  for (auto& [id, v] : moved.lines) {
    v.line = orthonormal_from_plucker(transform_line(t, plucker_from_orthonormal(v.line)));
  }
  FactorGraph base = g;
  // Noisy line problems are poorly conditioned, so run to convergence.
  SolverOptions opts;
  opts.rel_cost_tol = 1e-15;
  opts.max_iters = 1000;
  const SolveReport a = solve_lm(base, opts);
  const SolveReport b = solve_lm(moved, opts);
  EXPECT_NEAR(a.final_cost, b.final_cost, 1e-9 * (1.0 + a.final_cost));
}

TEST(SolveLm, Deterministic) {
  const FactorGraph g = small_sim_graph(6, 40, 1.0, InitMode::kPerturbed).graph;
  FactorGraph a = g;
  FactorGraph b = g;
  const SolveReport ra = solve_lm(a);
  const SolveReport rb = solve_lm(b);
  EXPECT_EQ(ra.cost_trace, rb.cost_trace);
  for (const auto& [id, v] : a.poses) {
    EXPECT_TRUE((v.pose.rotation.array() == b.poses.at(id).pose.rotation.array()).all());
    EXPECT_TRUE((v.pose.translation.array() == b.poses.at(id).pose.translation.array()).all());
  }
}

TEST(SolveLm, GaugeMustBeFixed) {
  FactorGraph g = small_sim_graph(3, 10, 0.0, InitMode::kGroundTruth).graph;
  for (auto& [id, v] : g.poses) v.fixed = false;
  EXPECT_THROW(solve_lm(g), InvalidGraphError);
}

TEST(SolveLm, InvalidGraphThrows) {
  FactorGraph g = small_sim_graph(3, 10, 0.0, InitMode::kGroundTruth).graph;
  g.add_point_edge(0, 12345, {Vec2::Zero(), std::nullopt});
  EXPECT_THROW(solve_lm(g), InvalidGraphError);
}

TEST(SolveLm, NothingFreeTerminatesImmediately) {
  FactorGraph g = small_sim_graph(3, 10, 1.0, InitMode::kGroundTruth).graph;
  for (auto& [id, v] : g.poses) v.fixed = true;
  for (auto& [id, v] : g.points) v.fixed = true;
  for (auto& [id, v] : g.lines) v.fixed = true;
  const SolveReport r = solve_lm(g);
  EXPECT_EQ(r.termination, Termination::kNoFreeVariables);
  EXPECT_EQ(r.iterations, 0);
  EXPECT_EQ(r.initial_cost, r.final_cost);
}

TEST(SolveLm, RespectsMaxIterations) {
  FactorGraph g = small_sim_graph(6, 40, 1.0, InitMode::kPerturbed).graph;
  SolverOptions opts;
  opts.max_iters = 2;
  const SolveReport r = solve_lm(g, opts);
  EXPECT_EQ(r.iterations, 2);
  EXPECT_EQ(r.termination, Termination::kMaxIterations);
}

TEST(MotionOnlyBa, RecoversSinglePose) {
  SimGraph sg = small_sim_graph(4, 40, 0.0, InitMode::kGroundTruth, FeatureMode::kPointsAndLines, 10, 0.0);
  FactorGraph& g = sg.graph;
  const int id = sg.pose_ids[2];
  const Pose truth = g.poses.at(id).pose;
  PoseUpdate d;
  d << 0.03, -0.02, 0.04, 0.01, 0.02, -0.015;
  g.poses.at(id).pose = pose_update(truth, d);
  const Vec3 landmark = g.points.begin()->second.position;
  const SolveReport r = motion_only_ba(g, id);
  EXPECT_LT(r.final_cost, 1e-12);
  EXPECT_LT((g.poses.at(id).pose.translation - truth.translation).norm(), 1e-8);
  EXPECT_EQ(g.points.begin()->second.position, landmark);
}

TEST(MotionOnlyBa, UnknownOrUnobservedPoseThrows) {
  FactorGraph g = small_sim_graph(3, 10, 0.0, InitMode::kGroundTruth).graph;
  EXPECT_THROW(motion_only_ba(g, 999), InvalidGraphError);
  g.add_pose(999, Pose{});
  EXPECT_THROW(motion_only_ba(g, 999), InvalidGraphError);
}

TEST(LocalBa, FullWindowEqualsFullBa) {
  const FactorGraph g = small_sim_graph(5, 30, 1.0, InitMode::kPerturbed).graph;
  FactorGraph a = g;
  FactorGraph b = g;
  std::set<int> all;
  for (const auto& [id, v] : g.poses) all.insert(id);
  const SolveReport ra = solve_lm(a);
  const SolveReport rb = local_ba(b, all);
  EXPECT_EQ(ra.cost_trace, rb.cost_trace);
}

TEST(LocalBa, EmptyWindowIsANoOp) {
  FactorGraph g = small_sim_graph(5, 30, 1.0, InitMode::kPerturbed).graph;
  const double before = total_cost(g);
  const SolveReport r = local_ba(g, {});
  EXPECT_EQ(r.termination, Termination::kNoFreeVariables);
  EXPECT_EQ(total_cost(g), before);
}

TEST(LocalBa, PartialWindowReducesCostAndFreezesTheRest) {
  SimGraph sg = small_sim_graph(8, 60, 1.0, InitMode::kPerturbed);
  FactorGraph& g = sg.graph;
  const std::set<int> window{sg.pose_ids[3], sg.pose_ids[4], sg.pose_ids[5]};
  const Pose outside = g.poses.at(sg.pose_ids[7]).pose;
  const double before = total_cost(g);
  local_ba(g, window);
  EXPECT_LT(total_cost(g), before);
  EXPECT_EQ(g.poses.at(sg.pose_ids[7]).pose.translation, outside.translation);
}

}  // namespace
}  // namespace plslam
