// plslam command-line driver: simulate, solve, check-jacobians, evaluate, export.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "plslam/error.hpp"
#include "plslam/evaluation.hpp"
#include "plslam/experiment.hpp"
#include "plslam/graph_io.hpp"
#include "plslam/jacobian_check.hpp"
#include "plslam/optimizer.hpp"
#include "plslam/simulator.hpp"
#include "plslam/text_io.hpp"

namespace fs = std::filesystem;
using namespace plslam;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitVerification = 4;

struct GlobalFlags {
  std::uint64_t seed = 1;
  int points = 200;
  double noise_sigma = 1.0;
  int frames = 100;
  std::string out_dir = ".";
  std::string format = "csv";
};

struct SolveFlags {
  int runs = 1;
  std::string feature_mode = "points+lines";
  std::string init_mode = "odometry";
  int max_iters = 100;
  int threads = 1;
  std::string graph_path;
};

struct JacobianFlags {
  int trials = 1000;
  double tolerance = 1e-5;
  bool inject_fault = false;
};

struct EvaluateFlags {
  std::string estimate;
  std::string truth;
  int delta = 1;
};

struct ExportFlags {
  std::string graph_path;
};

SimConfig sim_config(const GlobalFlags& g, std::uint64_t seed) {
  SimConfig cfg;
  cfg.seed = seed;
  cfg.n_points = g.points;
  cfg.noise_sigma = g.noise_sigma;
  cfg.orbit.n_frames = g.frames;
  cfg.validate();
  return cfg;
}

fs::path output_dir(const GlobalFlags& g) {
  const fs::path dir(g.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + g.out_dir);
  return dir;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw IoError("cannot open " + p.string() + " for writing");
  return os;
}

// ---------------------------------------------------------------- simulate

int cmd_simulate(const GlobalFlags& g) {
  const SimConfig cfg = sim_config(g, g.seed);
  const SimScene scene = generate_house_scene(cfg.n_points, cfg.seed);
  ObservationSet set;
  set.intrinsics = cfg.intrinsics;
  set.image_width = cfg.image_width;
  set.image_height = cfg.image_height;
  set.frames = render_observations(scene, generate_trajectory(cfg), cfg);
  const fs::path dir = output_dir(g);
  write_scene((dir / "scene.txt").string(), scene);
  write_observations((dir / "observations.txt").string(), set);
  write_trajectory((dir / "groundtruth.txt").string(), true_trajectory(set.frames));
  std::cout << "scene: " << scene.lines.size() << " lines, " << scene.points.size() << " points\n"
            << "frames: " << set.frames.size() << '\n';
  return 0;
}

// ---------------------------------------------------------------- solve

struct RunRow {
  std::uint64_t seed = 0;
  std::optional<SolveReport> report;
  std::optional<RpeResult> rpe;
  std::optional<double> ate;
  Trajectory estimate;
  FactorGraph graph;
};

RunRow solve_simulated(const GlobalFlags& g, const SolveFlags& s, FeatureMode features,
                       std::uint64_t seed) {
  const SimConfig cfg = sim_config(g, seed);
  const SimScene scene = generate_house_scene(cfg.n_points, cfg.seed);
  const auto frames = render_observations(scene, generate_trajectory(cfg), cfg);
  RunRow row;
  row.seed = seed;
  const Trajectory truth = true_trajectory(frames);
  if (s.init_mode == "odometry") {
    OdometryOptions opts;
    opts.features = features;
    OdometryResult odo = run_odometry(frames, cfg.intrinsics, opts);
    row.estimate = trajectory_from_world_to_camera(odo.timestamps, odo.poses);
    row.graph = std::move(odo.graph);
  } else {
    GraphInit init;
    init.features = features;
    init.seed = seed;
    if (s.init_mode == "ground-truth") {
      init.mode = InitMode::kGroundTruth;
    } else {
      init.mode = s.init_mode == "perturbed" ? InitMode::kPerturbed : InitMode::kOdometryChain;
      init.triangulate = true;
    }
    SimGraph sg = build_graph_from_sim(scene, frames, cfg.intrinsics, init);
    SolverOptions opts;
    opts.max_iters = s.max_iters;
    row.report = solve_lm(sg.graph, opts);
    row.estimate = graph_trajectory(sg);
    row.graph = std::move(sg.graph);
  }
  row.rpe = rpe_rmse(row.estimate, truth, 1);
  row.ate = ate(row.estimate, truth, false);
  return row;
}

RunRow solve_loaded(const SolveFlags& s) {
  RunRow row;
  row.graph = read_graph(s.graph_path);
  SolverOptions opts;
  opts.max_iters = s.max_iters;
  row.report = solve_lm(row.graph, opts);
  std::vector<double> stamps;
  std::vector<Pose> poses;
  for (const auto& [id, v] : row.graph.poses) {
    stamps.push_back(static_cast<double>(id));
    poses.push_back(v.pose);
  }
  row.estimate = trajectory_from_world_to_camera(stamps, poses);
  return row;
}

std::string opt_field(const std::optional<double>& v) { return v ? format_double(*v) : "-"; }

void write_report(std::ostream& os, const std::vector<RunRow>& rows, const SolveFlags& s) {
  os << "run,seed,feature_mode,init_mode,iterations,initial_cost,final_cost,termination,"
        "rpe_trans,rpe_rot,ate\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const RunRow& r = rows[i];
    os << i << ',' << r.seed << ',' << s.feature_mode << ',' << (s.graph_path.empty() ? s.init_mode : "graph")
       << ',';
    if (r.report) {
      os << r.report->iterations << ',' << format_double(r.report->initial_cost) << ','
         << format_double(r.report->final_cost) << ',' << to_string(r.report->termination);
    } else {
      os << "-,-,-,-";
    }
    os << ',' << opt_field(r.rpe ? std::optional(r.rpe->trans) : std::nullopt) << ','
       << opt_field(r.rpe ? std::optional(r.rpe->rot) : std::nullopt) << ',' << opt_field(r.ate) << '\n';
  }
  // Aggregate in run order so the result does not depend on thread scheduling.
  std::vector<const RunRow*> scored;
  for (const auto& r : rows) {
    if (r.rpe && r.ate) scored.push_back(&r);
  }
  if (scored.empty()) return;
  const double n = static_cast<double>(scored.size());
  double mean[3] = {0.0, 0.0, 0.0};
  for (const RunRow* r : scored) {
    mean[0] += r->rpe->trans / n;
    mean[1] += r->rpe->rot / n;
    mean[2] += *r->ate / n;
  }
  double var[3] = {0.0, 0.0, 0.0};
  for (const RunRow* r : scored) {
    const double d[3] = {r->rpe->trans - mean[0], r->rpe->rot - mean[1], *r->ate - mean[2]};
    for (int k = 0; k < 3; ++k) var[k] += d[k] * d[k] / n;
  }
  const std::string init = s.graph_path.empty() ? s.init_mode : "graph";
  os << "mean,-," << s.feature_mode << ',' << init << ",-,-,-,-," << format_double(mean[0]) << ','
     << format_double(mean[1]) << ',' << format_double(mean[2]) << '\n';
  os << "std,-," << s.feature_mode << ',' << init << ",-,-,-,-," << format_double(std::sqrt(var[0]))
     << ',' << format_double(std::sqrt(var[1])) << ',' << format_double(std::sqrt(var[2])) << '\n';
}

int cmd_solve(const GlobalFlags& g, const SolveFlags& s) {
  if (s.runs < 1) throw Error("--runs must be at least 1");
  const FeatureMode features = parse_feature_mode(s.feature_mode);
  const fs::path dir = output_dir(g);

  std::vector<RunRow> rows(s.graph_path.empty() ? static_cast<std::size_t>(s.runs) : 1);
  if (!s.graph_path.empty()) {
    rows[0] = solve_loaded(s);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(rows.size());
    const auto worker = [&] {
      for (std::size_t i = next++; i < rows.size(); i = next++) {
        try {
          rows[i] = solve_simulated(g, s, features, g.seed + i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    const int n_threads = std::clamp(s.threads, 1, static_cast<int>(rows.size()));
    std::vector<std::thread> pool;
    for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  if (rows.size() == 1) {
    write_trajectory((dir / "trajectory.txt").string(), rows[0].estimate);
  } else {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      write_trajectory((dir / ("trajectory_" + std::to_string(i) + ".txt")).string(), rows[i].estimate);
    }
  }
  write_graph((dir / "graph.txt").string(), rows[0].graph);
  std::ofstream report = open_out(dir / "report.csv");
  write_report(report, rows, s);
  write_report(std::cout, rows, s);
  if (!report) throw IoError("failed writing report");
  return 0;
}

// ---------------------------------------------------------------- check-jacobians

int cmd_check_jacobians(const GlobalFlags& g, const JacobianFlags& f) {
  if (f.trials < 0) throw Error("--trials must be nonnegative");
  if (f.trials == 0) std::cerr << "warning: 0 trials requested, nothing was checked\n";
  JacobianCheckOptions opts;
  opts.trials = f.trials;
  opts.tolerance = f.tolerance;
  opts.seed = g.seed;
  opts.inject_sign_error = f.inject_fault;
  const JacobianCheckReport rep = check_jacobians(opts);
  std::cout << "block,max_relative_error,failures\n";
  for (const auto& b : rep.blocks) {
    std::cout << b.name << ',' << format_double(b.max_relative_error) << ',' << b.failures << '\n';
  }
  std::cout << "# trials=" << rep.trials << " rejected_samples=" << rep.rejected_samples
            << " result=" << (rep.passed() ? "pass" : "fail") << '\n';
  return rep.passed() ? 0 : kExitVerification;
}

// ---------------------------------------------------------------- evaluate

int cmd_evaluate(const GlobalFlags& g, const EvaluateFlags& f) {
  if (f.delta < 1) throw Error("--delta must be positive");
  const Trajectory est = read_trajectory(f.estimate);
  const Trajectory gt = read_trajectory(f.truth);
  const RpeResult rpe = rpe_rmse(est, gt, static_cast<std::size_t>(f.delta));
  const double ate_raw = ate(est, gt, false);
  const double ate_aligned = ate(est, gt, true);
  std::ostringstream os;
  os << "pairs,rpe_trans,rpe_rot,ate,ate_aligned\n"
     << rpe.pairs << ',' << format_double(rpe.trans) << ',' << format_double(rpe.rot) << ','
     << format_double(ate_raw) << ',' << format_double(ate_aligned) << '\n';
  std::cout << os.str();
  std::ofstream out = open_out(output_dir(g) / "metrics.csv");
  out << os.str();
  if (!out) throw IoError("failed writing metrics.csv");
  return 0;
}

// ---------------------------------------------------------------- export

struct ExportedLine {
  int id;
  Vec3 a;
  Vec3 b;
};

std::vector<ExportedLine> line_segments(const FactorGraph& g) {
  std::vector<ExportedLine> out;
  for (const auto& [id, v] : g.lines) {
    // Endpoints come from the longest observation of the line.
    const LineEdge* best = nullptr;
    for (const auto& e : g.line_edges) {
      if (e.line_id != id || !g.poses.count(e.pose_id)) continue;
      if (!best || (e.observation.xe - e.observation.xs).norm() >
                       (best->observation.xe - best->observation.xs).norm()) {
        best = &e;
      }
    }
    if (!best) continue;
    const Pose cam = edge_camera_pose(g.poses.at(best->pose_id).pose, best->camera, g.intrinsics);
    try {
      const auto [a, b] = trim_endpoints(plucker_from_orthonormal(v.line), best->observation.start(),
                                         best->observation.end(), cam, g.intrinsics);
      out.push_back({id, a, b});
    } catch (const DegenerateError&) {
      // A line parallel to the viewing rays has no finite endpoints.
    }
  }
  return out;
}

int cmd_export(const GlobalFlags& g, const ExportFlags& f) {
  const fs::path dir = output_dir(g);
  const std::string graph_path = f.graph_path.empty() ? (dir / "graph.txt").string() : f.graph_path;
  const FactorGraph graph = read_graph(graph_path);
  const auto lines = line_segments(graph);

  std::ofstream traj = open_out(dir / "trajectory.csv");
  traj << "pose_id,tx,ty,tz,qx,qy,qz,qw\n";
  for (const auto& [id, v] : graph.poses) {
    const Pose c2w = v.pose.inverse();
    const Eigen::Quaterniond q(c2w.rotation);
    traj << id << ',' << format_double(c2w.translation.x()) << ',' << format_double(c2w.translation.y())
         << ',' << format_double(c2w.translation.z()) << ',' << format_double(q.x()) << ','
         << format_double(q.y()) << ',' << format_double(q.z()) << ',' << format_double(q.w()) << '\n';
  }

  if (g.format == "ply") {
    std::ofstream ply = open_out(dir / "map.ply");
    ply << "ply\nformat ascii 1.0\n"
        << "element vertex " << graph.points.size() + 2 * lines.size() << '\n'
        << "property double x\nproperty double y\nproperty double z\n"
        << "element edge " << lines.size() << '\n'
        << "property int vertex1\nproperty int vertex2\nend_header\n";
    for (const auto& [id, v] : graph.points) {
      ply << format_double(v.position.x()) << ' ' << format_double(v.position.y()) << ' '
          << format_double(v.position.z()) << '\n';
    }
    for (const auto& l : lines) {
      for (const Vec3& p : {l.a, l.b}) {
        ply << format_double(p.x()) << ' ' << format_double(p.y()) << ' ' << format_double(p.z()) << '\n';
      }
    }
    const std::size_t base = graph.points.size();
    for (std::size_t i = 0; i < lines.size(); ++i) ply << base + 2 * i << ' ' << base + 2 * i + 1 << '\n';
    if (!ply) throw IoError("failed writing map.ply");
  } else {
    std::ofstream pts = open_out(dir / "map_points.csv");
    pts << "point_id,x,y,z\n";
    for (const auto& [id, v] : graph.points) {
      pts << id << ',' << format_double(v.position.x()) << ',' << format_double(v.position.y()) << ','
          << format_double(v.position.z()) << '\n';
    }
    std::ofstream ls = open_out(dir / "map_lines.csv");
    ls << "line_id,x1,y1,z1,x2,y2,z2\n";
    for (const auto& l : lines) {
      ls << l.id << ',' << format_double(l.a.x()) << ',' << format_double(l.a.y()) << ','
         << format_double(l.a.z()) << ',' << format_double(l.b.x()) << ',' << format_double(l.b.y())
         << ',' << format_double(l.b.z()) << '\n';
    }
    if (!pts || !ls) throw IoError("failed writing map files");
  }
  if (!traj) throw IoError("failed writing trajectory.csv");
  std::cout << "exported " << graph.poses.size() << " poses, " << graph.points.size() << " points, "
            << lines.size() << " lines\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point and line stereo SLAM back-end: simulation, bundle adjustment, evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--seed", g.seed, "Base random seed")->capture_default_str();
  app.add_option("--points", g.points, "Number of simulated points")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  app.add_option("--noise-sigma", g.noise_sigma, "Pixel noise standard deviation")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  app.add_option("--frames", g.frames, "Frames on the simulated orbit")
      ->check(CLI::Range(2, 100000))
      ->capture_default_str();
  app.add_option("--out-dir", g.out_dir, "Output directory")->capture_default_str();
  app.add_option("--format", g.format, "Map export format")
      ->check(CLI::IsMember({"csv", "ply"}))
      ->capture_default_str();

  auto* simulate = app.add_subcommand("simulate", "Write scene, observations and ground truth");

  SolveFlags sf;
  auto* solve = app.add_subcommand("solve", "Optimize simulated or loaded graphs and report errors");
  solve->add_option("--runs", sf.runs, "Monte-Carlo runs (seed, seed+1, ...)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  solve->add_option("--feature-mode", sf.feature_mode, "Landmarks used")
      ->check(CLI::IsMember({"points", "lines", "points+lines"}))
      ->capture_default_str();
  solve->add_option("--init-mode", sf.init_mode,
                    "odometry: sequential stereo odometry; ground-truth, perturbed, chain: full BA "
                    "from the given initialization")
      ->check(CLI::IsMember({"odometry", "ground-truth", "perturbed", "chain"}))
      ->capture_default_str();
  solve->add_option("--max-iters", sf.max_iters, "LM iteration limit for full BA")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  solve->add_option("--threads", sf.threads, "Worker threads across runs")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  solve->add_option("--graph", sf.graph_path, "Solve a saved graph snapshot instead of simulating");

  JacobianFlags jf;
  auto* check = app.add_subcommand("check-jacobians", "Compare analytic and numeric Jacobians");
  check->add_option("--trials", jf.trials, "Random samples")->capture_default_str();
  check->add_option("--tolerance", jf.tolerance, "Relative error threshold")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  check->add_flag("--inject-fault", jf.inject_fault)->group("");

  EvaluateFlags ef;
  auto* evaluate = app.add_subcommand("evaluate", "RPE and ATE of a TUM trajectory against ground truth");
  evaluate->add_option("estimate", ef.estimate, "Estimated trajectory (TUM)")->required();
  evaluate->add_option("groundtruth", ef.truth, "Ground-truth trajectory (TUM)")->required();
  evaluate->add_option("--delta", ef.delta, "RPE frame offset")->capture_default_str();

  ExportFlags xf;
  auto* exp = app.add_subcommand("export", "Write map and trajectory for plotting");
  exp->add_option("--graph", xf.graph_path, "Graph snapshot (default: <out-dir>/graph.txt)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*simulate) return cmd_simulate(g);
    if (*solve) return cmd_solve(g, sf);
    if (*check) return cmd_check_jacobians(g, jf);
    if (*evaluate) return cmd_evaluate(g, ef);
    if (*exp) return cmd_export(g, xf);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
