#pragma once

// Graph snapshot format, one record per line, '#' starts a comment:
//
//   CAMERA fu fv cu cv baseline
//   POSE   id fixed r00 r01 r02 r10 r11 r12 r20 r21 r22 t0 t1 t2
//   POINT  id fixed x y z
//   LINE   id fixed u00 u01 u02 u10 u11 u12 u20 u21 u22 w1 w2
//   EPT    pose point u v u_right delta i00 ... i(d-1)(d-1)
//   ELN    pose line side u1 v1 u2 v2 delta i00 i01 i10 i11
//
// fixed is 0 or 1. POSE rotations are world-to-camera. u_right is "-" for a
// 2-row point edge, and the information matrix of EPT then has 4 entries
// (9 otherwise), row-major. side is L or R. delta is the Huber width and may
// be "inf". Doubles are written in shortest round-trip form, so a dump/load
// cycle reproduces the graph exactly.

#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "plslam/error.hpp"
#include "plslam/factor_graph.hpp"
#include "plslam/text_io.hpp"

namespace plslam {

namespace detail {

inline void write_matrix(std::ostream& os, const Eigen::Ref<const Eigen::MatrixXd>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) os << ' ' << format_double(m(r, c));
  }
}

inline bool parse_flag(std::string_view s, std::size_t no) {
  if (s == "0") return false;
  if (s == "1") return true;
  throw ParseError("fixed flag must be 0 or 1", no);
}

}  // namespace detail

inline void write_graph(std::ostream& os, const FactorGraph& g) {
  const auto& k = g.intrinsics;
  os << "# plslam graph v1\n";
  os << "CAMERA " << format_double(k.fu) << ' ' << format_double(k.fv) << ' '
     << format_double(k.cu) << ' ' << format_double(k.cv) << ' ' << format_double(k.baseline)
     << '\n';
  for (const auto& [id, v] : g.poses) {
    os << "POSE " << id << ' ' << (v.fixed ? 1 : 0);
    detail::write_matrix(os, v.pose.rotation);
    detail::write_matrix(os, v.pose.translation.transpose());
    os << '\n';
  }
  for (const auto& [id, v] : g.points) {
    os << "POINT " << id << ' ' << (v.fixed ? 1 : 0);
    detail::write_matrix(os, v.position.transpose());
    os << '\n';
  }
  for (const auto& [id, v] : g.lines) {
    os << "LINE " << id << ' ' << (v.fixed ? 1 : 0);
    detail::write_matrix(os, v.line.u);
    os << ' ' << format_double(v.line.w[0]) << ' ' << format_double(v.line.w[1]) << '\n';
  }
  for (const auto& e : g.point_edges) {
    const auto& o = e.observation;
    os << "EPT " << e.pose_id << ' ' << e.point_id << ' ' << format_double(o.pixel.x()) << ' '
       << format_double(o.pixel.y()) << ' ' << (o.right_u ? format_double(*o.right_u) : "-") << ' '
       << format_double(e.kernel.delta);
    detail::write_matrix(os, e.information);
    os << '\n';
  }
  for (const auto& e : g.line_edges) {
    const auto& o = e.observation;
    os << "ELN " << e.pose_id << ' ' << e.line_id << ' '
       << (e.camera == CameraSide::kLeft ? 'L' : 'R') << ' ' << format_double(o.xs.x()) << ' '
       << format_double(o.xs.y()) << ' ' << format_double(o.xe.x()) << ' '
       << format_double(o.xe.y()) << ' ' << format_double(e.kernel.delta);
    detail::write_matrix(os, e.information);
    os << '\n';
  }
}

/// Parses a snapshot. Structural checks (dangling ids, SPD information) are
/// left to FactorGraph::validate().
inline FactorGraph read_graph(std::istream& is) {
  FactorGraph g;
  std::string line;
  std::size_t no = 0;
  const auto dbl = [&](std::string_view s) { return parse_double(s, no); };
  const auto id = [&](std::string_view s) { return static_cast<int>(parse_int(s, no)); };
  while (std::getline(is, line)) {
    ++no;
    const auto f = split_fields(line);
    if (f.empty()) continue;
    try {
      if (f[0] == "CAMERA" && f.size() == 6) {
        g.intrinsics = {dbl(f[1]), dbl(f[2]), dbl(f[3]), dbl(f[4]), dbl(f[5])};
      } else if (f[0] == "POSE" && f.size() == 15) {
        Pose p;
        for (int i = 0; i < 9; ++i) p.rotation(i / 3, i % 3) = dbl(f[3 + i]);
        for (int i = 0; i < 3; ++i) p.translation[i] = dbl(f[12 + i]);
        g.add_pose(id(f[1]), p, detail::parse_flag(f[2], no));
      } else if (f[0] == "POINT" && f.size() == 6) {
        g.add_point(id(f[1]), Vec3(dbl(f[3]), dbl(f[4]), dbl(f[5])), detail::parse_flag(f[2], no));
      } else if (f[0] == "LINE" && f.size() == 14) {
        OrthonormalLine o;
        for (int i = 0; i < 9; ++i) o.u(i / 3, i % 3) = dbl(f[3 + i]);
        o.w = Vec2(dbl(f[12]), dbl(f[13]));
        g.add_line(id(f[1]), o, detail::parse_flag(f[2], no));
      } else if (f[0] == "EPT" && (f.size() == 11 || f.size() == 16)) {
        PointObservation obs{Vec2(dbl(f[3]), dbl(f[4])), std::nullopt};
        if (f[5] != "-") obs.right_u = dbl(f[5]);
        const int d = obs.dimension();
        if (f.size() != 7 + static_cast<std::size_t>(d * d)) {
          throw ParseError("information size does not match the observation", no);
        }
        PointEdge& e = g.add_point_edge(id(f[1]), id(f[2]), obs);
        e.kernel.delta = dbl(f[6]);
        for (int i = 0; i < d * d; ++i) e.information(i / d, i % d) = dbl(f[7 + i]);
      } else if (f[0] == "ELN" && f.size() == 13) {
        if (f[3] != "L" && f[3] != "R") throw ParseError("line side must be L or R", no);
        LineEdge& e = g.add_line_edge(id(f[1]), id(f[2]), {Vec2(dbl(f[4]), dbl(f[5])), Vec2(dbl(f[6]), dbl(f[7]))},
                                      f[3] == "L" ? CameraSide::kLeft : CameraSide::kRight);
        e.kernel.delta = dbl(f[8]);
        for (int i = 0; i < 4; ++i) e.information(i / 2, i % 2) = dbl(f[9 + i]);
      } else {
        throw ParseError("unrecognized graph record '" + std::string(f[0]) + "' with " +
                             std::to_string(f.size()) + " fields",
                         no);
      }
    } catch (const InvalidGraphError& err) {
      throw ParseError(err.what(), no);
    }
  }
  return g;
}

inline void write_graph(const std::string& path, const FactorGraph& g) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_graph(os, g);
  if (!os) throw IoError("failed writing " + path);
}

inline FactorGraph read_graph(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  return read_graph(is);
}

}  // namespace plslam
