#pragma once

// Segment lists, one record per line:
//
//   SEG u1 v1 u2 v2 [descriptor]
//
// where descriptor is 64 hex digits, bit 255 first.

#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "plslam/error.hpp"
#include "plslam/frontend.hpp"
#include "plslam/text_io.hpp"

namespace plslam {

inline void write_segments(std::ostream& os, const std::vector<Segment2D>& segments) {
  for (const auto& s : segments) {
    os << "SEG " << format_double(s.start.x()) << ' ' << format_double(s.start.y()) << ' '
       << format_double(s.end.x()) << ' ' << format_double(s.end.y());
    if (s.descriptor) os << ' ' << descriptor_to_hex(*s.descriptor);
    os << '\n';
  }
}

inline std::vector<Segment2D> read_segments(std::istream& is) {
  std::vector<Segment2D> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(is, line)) {
    ++no;
    const auto f = split_fields(line);
    if (f.empty()) continue;
    if (f[0] != "SEG" || (f.size() != 5 && f.size() != 6)) {
      throw ParseError("expected 'SEG u1 v1 u2 v2 [descriptor]'", no);
    }
    Segment2D s{Vec2(parse_double(f[1], no), parse_double(f[2], no)),
                Vec2(parse_double(f[3], no), parse_double(f[4], no)), std::nullopt};
    if (f.size() == 6) s.descriptor = descriptor_from_hex(f[5], no);
    out.push_back(s);
  }
  return out;
}

inline void write_segments(const std::string& path, const std::vector<Segment2D>& segments) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_segments(os, segments);
}

inline std::vector<Segment2D> read_segments(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  return read_segments(is);
}

}  // namespace plslam
