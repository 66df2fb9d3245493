#pragma once

// Helpers shared by the line-oriented text formats.

#include <array>
#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "plslam/error.hpp"
#include "plslam/measurement.hpp"

namespace plslam {

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double x) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  return std::string(buf.data(), res.ptr);
}

/// Whitespace-separated fields; everything after '#' is a comment.
inline std::vector<std::string_view> split_fields(std::string_view line) {
  if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline double parse_double(std::string_view s, std::size_t line_no) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError("invalid number '" + std::string(s) + "'", line_no);
  }
  return v;
}

inline long long parse_int(std::string_view s, std::size_t line_no) {
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError("invalid integer '" + std::string(s) + "'", line_no);
  }
  return v;
}

/// 64 hex digits, most significant bit (bit 255) first.
inline std::string descriptor_to_hex(const Descriptor& d) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(64, '0');
  for (int nibble = 0; nibble < 64; ++nibble) {
    int v = 0;
    for (int b = 0; b < 4; ++b) {
      v = (v << 1) | static_cast<int>(d[255 - (4 * nibble + b)]);
    }
    out[nibble] = kDigits[v];
  }
  return out;
}

inline Descriptor descriptor_from_hex(std::string_view hex, std::size_t line_no) {
  if (hex.size() != 64) throw ParseError("descriptor must have 64 hex digits", line_no);
  Descriptor d;
  for (int nibble = 0; nibble < 64; ++nibble) {
    const char c = hex[nibble];
    int v = 0;
    if (c >= '0' && c <= '9') {
      v = c - '0';
    } else if (c >= 'a' && c <= 'f') {
      v = c - 'a' + 10;
    } else if (c >= 'A' && c <= 'F') {
      v = c - 'A' + 10;
    } else {
      throw ParseError("invalid hex digit in descriptor", line_no);
    }
    for (int b = 0; b < 4; ++b) d[255 - (4 * nibble + b)] = (v >> (3 - b)) & 1;
  }
  return d;
}

}  // namespace plslam
