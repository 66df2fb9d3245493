#pragma once

// Levenberg-Marquardt bundle adjustment over a FactorGraph.
//
// Poses are updated with pose_update() (left increment), points additively
// and lines with update_orthonormal(). Edges whose landmark is behind the
// camera or projects to the line at infinity are deactivated for the current
// evaluation and contribute neither cost nor Jacobian.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "plslam/error.hpp"
#include "plslam/factor_graph.hpp"
#include "plslam/geometry.hpp"
#include "plslam/measurement.hpp"

namespace plslam {

struct SolverOptions {
  int max_iters = 100;
  double gradient_tol = 1e-10;
  double rel_cost_tol = 1e-12;
  /// Initial damping; non-positive selects 1e-4 * max diag(J' J).
  double initial_lambda = -1.0;
  /// Use the Schur complement on landmarks above this many free landmarks.
  int schur_threshold = 64;
  /// Rejected steps tolerated per iteration before giving up.
  int max_rejections = 12;
  /// Run FactorGraph::validate() before solving.
  bool validate_graph = true;
};

enum class Termination {
  kGradientTolerance,
  kCostTolerance,
  kMaxIterations,
  kNoProgress,
  kSingular,
  kNoFreeVariables,
};

inline std::string to_string(Termination t) {
  switch (t) {
    case Termination::kGradientTolerance: return "gradient_tolerance";
    case Termination::kCostTolerance: return "cost_tolerance";
    case Termination::kMaxIterations: return "max_iterations";
    case Termination::kNoProgress: return "no_progress";
    case Termination::kSingular: return "singular";
    case Termination::kNoFreeVariables: return "no_free_variables";
  }
  return "unknown";
}

struct SolveReport {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  /// Cost before the first iteration followed by the cost after every
  /// accepted step.
  std::vector<double> cost_trace;
  int rejected_steps = 0;
  Termination termination = Termination::kMaxIterations;
};

/// Variable ordering of an assembled linear system.
struct ParameterLayout {
  std::map<int, int> pose_offset;
  std::map<int, int> point_offset;
  std::map<int, int> line_offset;
  int dimension = 0;
};

/// Dense normal equations H dx = -g of the robustified cost.
struct NormalEquations {
  ParameterLayout layout;
  Eigen::MatrixXd hessian;
  Eigen::VectorXd gradient;
};

namespace detail {

// Which vertices are optimized in a given solve.
struct FreeSet {
  std::function<bool(int)> pose;
  std::function<bool(int)> point;
  std::function<bool(int)> line;
  // Edges whose pose fails this test are left out; empty keeps every edge.
  std::function<bool(int)> edge_pose;
};

inline FreeSet graph_flags(const FactorGraph& g) {
  return {[&g](int id) { return !g.poses.at(id).fixed; },
          [&g](int id) { return !g.points.at(id).fixed; },
          [&g](int id) { return !g.lines.at(id).fixed; },
          {}};
}

// Free variables plus the edges that touch at least one of them. Fixed
// vertex values are read from the graph.
class Problem {
 public:
  struct State {
    std::vector<Pose> poses;
    std::vector<Vec3> points;
    std::vector<OrthonormalLine> lines;
  };

  Problem(const FactorGraph& g, const FreeSet& free) : g_(g) {
    for (const auto& [id, v] : g.poses) {
      if (free.pose(id)) {
        pose_index_[id] = static_cast<int>(pose_ids_.size());
        pose_ids_.push_back(id);
      }
    }
    for (const auto& [id, v] : g.points) {
      if (free.point(id)) {
        point_index_[id] = static_cast<int>(point_ids_.size());
        point_ids_.push_back(id);
      }
    }
    for (const auto& [id, v] : g.lines) {
      if (free.line(id)) {
        line_index_[id] = static_cast<int>(line_ids_.size());
        line_ids_.push_back(id);
      }
    }
    for (std::size_t i = 0; i < g.point_edges.size(); ++i) {
      const auto& e = g.point_edges[i];
      if (free.edge_pose && !free.edge_pose(e.pose_id)) continue;
      if (pose_index_.count(e.pose_id) || point_index_.count(e.point_id)) point_edges_.push_back(i);
    }
    for (std::size_t i = 0; i < g.line_edges.size(); ++i) {
      const auto& e = g.line_edges[i];
      if (free.edge_pose && !free.edge_pose(e.pose_id)) continue;
      if (pose_index_.count(e.pose_id) || line_index_.count(e.line_id)) line_edges_.push_back(i);
    }
  }

  int num_poses() const { return static_cast<int>(pose_ids_.size()); }
  int num_points() const { return static_cast<int>(point_ids_.size()); }
  int num_lines() const { return static_cast<int>(line_ids_.size()); }
  int num_landmarks() const { return num_points() + num_lines(); }
  bool empty() const { return pose_ids_.empty() && point_ids_.empty() && line_ids_.empty(); }
  bool has_edges() const { return !point_edges_.empty() || !line_edges_.empty(); }

  State initial_state() const {
    State s;
    for (int id : pose_ids_) s.poses.push_back(g_.poses.at(id).pose);
    for (int id : point_ids_) s.points.push_back(g_.points.at(id).position);
    for (int id : line_ids_) s.lines.push_back(g_.lines.at(id).line);
    return s;
  }

  void write_back(const State& s, FactorGraph& g) const {
    for (std::size_t i = 0; i < pose_ids_.size(); ++i) g.poses.at(pose_ids_[i]).pose = s.poses[i];
    for (std::size_t i = 0; i < point_ids_.size(); ++i) {
      g.points.at(point_ids_[i]).position = s.points[i];
    }
    for (std::size_t i = 0; i < line_ids_.size(); ++i) g.lines.at(line_ids_[i]).line = s.lines[i];
  }

  // Robust cost over the edges of this problem.
  double cost(const State& s) const {
    double c = 0.0;
    const auto& k = g_.intrinsics;
    for (std::size_t i : point_edges_) {
      const auto& e = g_.point_edges[i];
      const auto chi2 = point_edge_chi2(e, pose(s, e.pose_id), point(s, e.point_id), k);
      if (chi2) c += e.kernel.rho(*chi2);
    }
    for (std::size_t i : line_edges_) {
      const auto& e = g_.line_edges[i];
      const auto chi2 = line_edge_chi2(e, pose(s, e.pose_id), line(s, e.line_id), k);
      if (chi2) c += e.kernel.rho(*chi2);
    }
    return c;
  }

  // Block-sparse normal equations. Pose-pose coupling is block diagonal
  // because every edge touches a single pose.
  struct Blocks {
    std::vector<Mat6> hpp;
    std::vector<Vec6> gp;
    std::vector<Eigen::Matrix3d> hpoint;
    std::vector<Vec3> gpoint;
    std::vector<Eigen::Matrix4d> hline;
    std::vector<Vec4> gline;
    // Cross blocks per landmark, keyed by free pose index.
    std::vector<std::map<int, Eigen::Matrix<double, 6, 3>>> hpose_point;
    std::vector<std::map<int, Eigen::Matrix<double, 6, 4>>> hpose_line;
  };

  Blocks linearize(const State& s, bool robust = true) const {
    Blocks b;
    b.hpp.assign(num_poses(), Mat6::Zero());
    b.gp.assign(num_poses(), Vec6::Zero());
    b.hpoint.assign(num_points(), Eigen::Matrix3d::Zero());
    b.gpoint.assign(num_points(), Vec3::Zero());
    b.hline.assign(num_lines(), Eigen::Matrix4d::Zero());
    b.gline.assign(num_lines(), Vec4::Zero());
    b.hpose_point.resize(num_points());
    b.hpose_line.resize(num_lines());
    const auto& k = g_.intrinsics;

    for (std::size_t i : point_edges_) {
      const auto& e = g_.point_edges[i];
      const Pose& t = pose(s, e.pose_id);
      const Vec3& x = point(s, e.point_id);
      if (!((t * x).z() > kMinDepth)) continue;
      const PointJacobians j = point_jacobians(e.observation, t, x, k);
      const Eigen::VectorXd wr = e.information * j.residual;
      const double chi2 = j.residual.dot(wr);
      if (!std::isfinite(chi2)) continue;
      const double w = robust ? e.kernel.weight(chi2) : 1.0;
      const Eigen::MatrixXd info = w * e.information;
      const auto pi = find(pose_index_, e.pose_id);
      const auto li = find(point_index_, e.point_id);
      if (pi) {
        b.hpp[*pi] += j.d_pose.transpose() * info * j.d_pose;
        b.gp[*pi] += j.d_pose.transpose() * (w * wr);
      }
      if (li) {
        b.hpoint[*li] += j.d_point.transpose() * info * j.d_point;
        b.gpoint[*li] += j.d_point.transpose() * (w * wr);
      }
      if (pi && li) {
        auto [it, inserted] = b.hpose_point[*li].try_emplace(*pi, Eigen::Matrix<double, 6, 3>::Zero());
        it->second += j.d_pose.transpose() * info * j.d_point;
      }
    }

    for (std::size_t i : line_edges_) {
      const auto& e = g_.line_edges[i];
      const Pose& left = pose(s, e.pose_id);
      const OrthonormalLine& o = line(s, e.line_id);
      const auto chi2_opt = line_edge_chi2(e, left, o, k);
      if (!chi2_opt) continue;
      LineJacobians j = line_jacobians(e.observation, edge_camera_pose(left, e.camera, k), o, k);
      if (e.camera == CameraSide::kRight) {
        j.d_pose = j.d_pose * right_camera_offset(k).adjoint();
      }
      const Vec2 wr = e.information * j.residual;
      const double w = robust ? e.kernel.weight(*chi2_opt) : 1.0;
      const Mat2 info = w * e.information;
      const auto pi = find(pose_index_, e.pose_id);
      const auto li = find(line_index_, e.line_id);
      if (pi) {
        b.hpp[*pi] += j.d_pose.transpose() * info * j.d_pose;
        b.gp[*pi] += j.d_pose.transpose() * (w * wr);
      }
      if (li) {
        b.hline[*li] += j.d_line.transpose() * info * j.d_line;
        b.gline[*li] += j.d_line.transpose() * (w * wr);
      }
      if (pi && li) {
        auto [it, inserted] = b.hpose_line[*li].try_emplace(*pi, Eigen::Matrix<double, 6, 4>::Zero());
        it->second += j.d_pose.transpose() * info * j.d_line;
      }
    }
    return b;
  }

  ParameterLayout layout() const {
    ParameterLayout l;
    int off = 0;
    for (int id : pose_ids_) { l.pose_offset[id] = off; off += 6; }
    for (int id : point_ids_) { l.point_offset[id] = off; off += 3; }
    for (int id : line_ids_) { l.line_offset[id] = off; off += 4; }
    l.dimension = off;
    return l;
  }

  NormalEquations to_dense(const Blocks& b) const {
    NormalEquations ne;
    ne.layout = layout();
    const int n = ne.layout.dimension;
    const int pb = 6 * num_poses();
    const int lb = pb + 3 * num_points();
    ne.hessian = Eigen::MatrixXd::Zero(n, n);
    ne.gradient = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < num_poses(); ++i) {
      ne.hessian.block<6, 6>(6 * i, 6 * i) = b.hpp[i];
      ne.gradient.segment<6>(6 * i) = b.gp[i];
    }
    for (int i = 0; i < num_points(); ++i) {
      const int o = pb + 3 * i;
      ne.hessian.block<3, 3>(o, o) = b.hpoint[i];
      ne.gradient.segment<3>(o) = b.gpoint[i];
      for (const auto& [p, blk] : b.hpose_point[i]) {
        ne.hessian.block<6, 3>(6 * p, o) = blk;
        ne.hessian.block<3, 6>(o, 6 * p) = blk.transpose();
      }
    }
    for (int i = 0; i < num_lines(); ++i) {
      const int o = lb + 4 * i;
      ne.hessian.block<4, 4>(o, o) = b.hline[i];
      ne.gradient.segment<4>(o) = b.gline[i];
      for (const auto& [p, blk] : b.hpose_line[i]) {
        ne.hessian.block<6, 4>(6 * p, o) = blk;
        ne.hessian.block<4, 6>(o, 6 * p) = blk.transpose();
      }
    }
    return ne;
  }

  static double max_diagonal(const Blocks& b) {
    double m = 0.0;
    for (const auto& h : b.hpp) m = std::max(m, h.diagonal().maxCoeff());
    for (const auto& h : b.hpoint) m = std::max(m, h.diagonal().maxCoeff());
    for (const auto& h : b.hline) m = std::max(m, h.diagonal().maxCoeff());
    return m;
  }

  static double max_abs_gradient(const Blocks& b) {
    double m = 0.0;
    for (const auto& g : b.gp) m = std::max(m, g.cwiseAbs().maxCoeff());
    for (const auto& g : b.gpoint) m = std::max(m, g.cwiseAbs().maxCoeff());
    for (const auto& g : b.gline) m = std::max(m, g.cwiseAbs().maxCoeff());
    return m;
  }

  // Solves (H + lambda I) dx = -g. Returns nullopt when the damped system is
  // not positive definite.
  std::optional<Eigen::VectorXd> solve(const Blocks& b, double lambda, bool use_schur) const {
    if (use_schur && num_landmarks() > 0) return solve_schur(b, lambda);
    NormalEquations ne = to_dense(b);
    ne.hessian.diagonal().array() += lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(ne.hessian);
    if (llt.info() != Eigen::Success) return std::nullopt;
    Eigen::VectorXd dx = llt.solve(-ne.gradient);
    if (!dx.allFinite()) return std::nullopt;
    return dx;
  }

  State apply(const State& s, const Eigen::VectorXd& dx) const {
    State out = s;
    const int pb = 6 * num_poses();
    const int lb = pb + 3 * num_points();
    for (int i = 0; i < num_poses(); ++i) out.poses[i] = pose_update(s.poses[i], dx.segment<6>(6 * i));
    for (int i = 0; i < num_points(); ++i) out.points[i] = s.points[i] + dx.segment<3>(pb + 3 * i);
    for (int i = 0; i < num_lines(); ++i) {
      out.lines[i] = update_orthonormal(s.lines[i], dx.segment<4>(lb + 4 * i));
    }
    return out;
  }

 private:
  template <int K>
  static bool accumulate_schur(const Eigen::Matrix<double, K, K>& hll, const Eigen::Matrix<double, K, 1>& gl,
                               const std::map<int, Eigen::Matrix<double, 6, K>>& cross, double lambda,
                               Eigen::MatrixXd& s, Eigen::VectorXd& rhs) {
    Eigen::Matrix<double, K, K> damped = hll;
    damped.diagonal().array() += lambda;
    Eigen::LLT<Eigen::Matrix<double, K, K>> llt(damped);
    if (llt.info() != Eigen::Success) return false;
    const Eigen::Matrix<double, K, 1> inv_g = llt.solve(gl);
    std::vector<std::pair<int, Eigen::Matrix<double, K, 6>>> inv_cross;
    inv_cross.reserve(cross.size());
    for (const auto& [p, blk] : cross) inv_cross.emplace_back(p, llt.solve(blk.transpose()));
    for (const auto& [a, blk_a] : cross) {
      rhs.segment<6>(6 * a) += blk_a * inv_g;
      for (const auto& [b, inv_b] : inv_cross) {
        s.block<6, 6>(6 * a, 6 * b) -= blk_a * inv_b;
      }
    }
    return true;
  }

  template <int K>
  static std::optional<Eigen::Matrix<double, K, 1>> back_substitute(
      const Eigen::Matrix<double, K, K>& hll, const Eigen::Matrix<double, K, 1>& gl,
      const std::map<int, Eigen::Matrix<double, 6, K>>& cross, double lambda,
      const Eigen::VectorXd& dp) {
    Eigen::Matrix<double, K, K> damped = hll;
    damped.diagonal().array() += lambda;
    Eigen::LLT<Eigen::Matrix<double, K, K>> llt(damped);
    if (llt.info() != Eigen::Success) return std::nullopt;
    Eigen::Matrix<double, K, 1> rhs = -gl;
    for (const auto& [p, blk] : cross) rhs -= blk.transpose() * dp.segment<6>(6 * p);
    return llt.solve(rhs);
  }

  std::optional<Eigen::VectorXd> solve_schur(const Blocks& b, double lambda) const {
    const int np = num_poses();
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(6 * np, 6 * np);
    Eigen::VectorXd rhs(6 * np);
    for (int i = 0; i < np; ++i) {
      s.block<6, 6>(6 * i, 6 * i) = b.hpp[i];
      s.diagonal().segment<6>(6 * i).array() += lambda;
      rhs.segment<6>(6 * i) = -b.gp[i];
    }
    for (int i = 0; i < num_points(); ++i) {
      if (!accumulate_schur<3>(b.hpoint[i], b.gpoint[i], b.hpose_point[i], lambda, s, rhs)) {
        return std::nullopt;
      }
    }
    for (int i = 0; i < num_lines(); ++i) {
      if (!accumulate_schur<4>(b.hline[i], b.gline[i], b.hpose_line[i], lambda, s, rhs)) {
        return std::nullopt;
      }
    }
    Eigen::VectorXd dp = Eigen::VectorXd::Zero(6 * np);
    if (np > 0) {
      Eigen::LLT<Eigen::MatrixXd> llt(s);
      if (llt.info() != Eigen::Success) return std::nullopt;
      dp = llt.solve(rhs);
    }
    Eigen::VectorXd dx(6 * np + 3 * num_points() + 4 * num_lines());
    dx.head(6 * np) = dp;
    int off = 6 * np;
    for (int i = 0; i < num_points(); ++i, off += 3) {
      const auto d = back_substitute<3>(b.hpoint[i], b.gpoint[i], b.hpose_point[i], lambda, dp);
      if (!d) return std::nullopt;
      dx.segment<3>(off) = *d;
    }
    for (int i = 0; i < num_lines(); ++i, off += 4) {
      const auto d = back_substitute<4>(b.hline[i], b.gline[i], b.hpose_line[i], lambda, dp);
      if (!d) return std::nullopt;
      dx.segment<4>(off) = *d;
    }
    if (!dx.allFinite()) return std::nullopt;
    return dx;
  }

  static std::optional<int> find(const std::map<int, int>& m, int id) {
    const auto it = m.find(id);
    if (it == m.end()) return std::nullopt;
    return it->second;
  }

  const Pose& pose(const State& s, int id) const {
    const auto it = pose_index_.find(id);
    return it == pose_index_.end() ? g_.poses.at(id).pose : s.poses[it->second];
  }
  const Vec3& point(const State& s, int id) const {
    const auto it = point_index_.find(id);
    return it == point_index_.end() ? g_.points.at(id).position : s.points[it->second];
  }
  const OrthonormalLine& line(const State& s, int id) const {
    const auto it = line_index_.find(id);
    return it == line_index_.end() ? g_.lines.at(id).line : s.lines[it->second];
  }

  const FactorGraph& g_;
  std::vector<int> pose_ids_, point_ids_, line_ids_;
  std::map<int, int> pose_index_, point_index_, line_index_;
  std::vector<std::size_t> point_edges_, line_edges_;
};

inline SolveReport run_lm(FactorGraph& g, const FreeSet& free, const SolverOptions& opts) {
  const Problem problem(g, free);
  SolveReport report;
  Problem::State state = problem.initial_state();
  double cost = problem.cost(state);
  report.initial_cost = cost;
  report.final_cost = cost;
  report.cost_trace.push_back(cost);
  if (problem.empty() || !problem.has_edges()) {
    report.termination = Termination::kNoFreeVariables;
    return report;
  }
  const bool use_schur = problem.num_landmarks() > opts.schur_threshold;

  double lambda = opts.initial_lambda;
  report.termination = Termination::kMaxIterations;
  for (int iter = 0; iter < opts.max_iters; ++iter) {
    const Problem::Blocks blocks = problem.linearize(state);
    if (Problem::max_abs_gradient(blocks) < opts.gradient_tol) {
      report.termination = Termination::kGradientTolerance;
      break;
    }
    if (!(lambda > 0.0)) lambda = 1e-4 * std::max(Problem::max_diagonal(blocks), 1e-12);

    bool accepted = false;
    bool any_solved = false;
    double new_cost = cost;
    for (int attempt = 0; attempt < opts.max_rejections; ++attempt) {
      const auto dx = problem.solve(blocks, lambda, use_schur);
      if (dx) {
        any_solved = true;
        Problem::State candidate = problem.apply(state, *dx);
        new_cost = problem.cost(candidate);
        if (new_cost < cost) {
          state = std::move(candidate);
          accepted = true;
          lambda /= 3.0;
          break;
        }
      }
      ++report.rejected_steps;
      lambda *= 2.0;
    }
    if (!accepted) {
      report.termination = any_solved ? Termination::kNoProgress : Termination::kSingular;
      break;
    }
    ++report.iterations;
    report.cost_trace.push_back(new_cost);
    const double decrease = cost - new_cost;
    cost = new_cost;
    if (decrease <= opts.rel_cost_tol * cost) {
      report.termination = Termination::kCostTolerance;
      break;
    }
  }
  problem.write_back(state, g);
  report.final_cost = cost;
  return report;
}

}  // namespace detail

/// Normal equations of the graph at its current estimate, over the vertices
/// not flagged fixed.
inline NormalEquations build_normal_equations(const FactorGraph& g, bool robust = true) {
  g.validate();
  const detail::Problem problem(g, detail::graph_flags(g));
  return problem.to_dense(problem.linearize(problem.initial_state(), robust));
}

/// Full bundle adjustment over every non-fixed vertex.
inline SolveReport solve_lm(FactorGraph& g, const SolverOptions& opts = {}) {
  if (opts.validate_graph) g.validate();
  if (!g.has_fixed_pose() && g.has_free_landmark()) {
    throw InvalidGraphError("gauge freedom: fix at least one pose or all landmarks");
  }
  return detail::run_lm(g, detail::graph_flags(g), opts);
}

/// Optimizes a single pose with every landmark held fixed.
inline SolveReport motion_only_ba(FactorGraph& g, int pose_id, const SolverOptions& opts = {}) {
  if (opts.validate_graph) g.validate();
  if (!g.poses.count(pose_id)) {
    throw InvalidGraphError("motion_only_ba: unknown pose " + std::to_string(pose_id));
  }
  const bool has_edge =
      std::any_of(g.point_edges.begin(), g.point_edges.end(), [&](const auto& e) { return e.pose_id == pose_id; }) ||
      std::any_of(g.line_edges.begin(), g.line_edges.end(), [&](const auto& e) { return e.pose_id == pose_id; });
  if (!has_edge) {
    throw InvalidGraphError("motion_only_ba: pose " + std::to_string(pose_id) + " has no edges");
  }
  const detail::FreeSet free{[pose_id](int id) { return id == pose_id; },
                             [](int) { return false; }, [](int) { return false; }, {}};
  return detail::run_lm(g, free, opts);
}

/// Optimizes the poses in |active_pose_ids| and the landmarks they observe.
/// Everything else stays fixed; vertices already flagged fixed stay fixed.
/// With |context_pose_ids| only edges from active or context poses enter the
/// problem; otherwise every edge of an optimized landmark does.
inline SolveReport local_ba(FactorGraph& g, const std::set<int>& active_pose_ids,
                            const SolverOptions& opts = {},
                            const std::set<int>* context_pose_ids = nullptr) {
  if (opts.validate_graph) g.validate();
  std::set<int> points;
  std::set<int> lines;
  for (const auto& e : g.point_edges) {
    if (active_pose_ids.count(e.pose_id)) points.insert(e.point_id);
  }
  for (const auto& e : g.line_edges) {
    if (active_pose_ids.count(e.pose_id)) lines.insert(e.line_id);
  }
  detail::FreeSet free{
      [&](int id) { return active_pose_ids.count(id) > 0 && !g.poses.at(id).fixed; },
      [&](int id) { return points.count(id) > 0 && !g.points.at(id).fixed; },
      [&](int id) { return lines.count(id) > 0 && !g.lines.at(id).fixed; },
      {}};
  if (context_pose_ids) {
    free.edge_pose = [&](int id) {
      return active_pose_ids.count(id) > 0 || context_pose_ids->count(id) > 0;
    };
  }
  return detail::run_lm(g, free, opts);
}

}  // namespace plslam
