// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "genreg/geometry.hpp"

namespace genreg {

namespace io_detail {

inline std::string format_coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

[[noreturn]] inline void parse_fail(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  throw ParseError(path.string() + ":" + std::to_string(line) + ": " + what);
}

}  // namespace io_detail

/// Whitespace-separated XYZ rows, one point per line, 9 significant digits.
template <typename S>
void write_xyz(const std::filesystem::path& path, const PointCloud<S>& pc) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("write_xyz: cannot open " + path.string());
  for (Eigen::Index i = 0; i < pc.size(); ++i)
    out << io_detail::format_coord(double(pc.points(i, 0))) << ' '
        << io_detail::format_coord(double(pc.points(i, 1))) << ' '
        << io_detail::format_coord(double(pc.points(i, 2))) << '\n';
}

template <typename S>
PointCloud<S> read_xyz(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("read_xyz: cannot open " + path.string());
  std::vector<Vec3<S>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream is(line);
    double x, y, z;
    if (!(is >> x >> y >> z)) io_detail::parse_fail(path, line_no, "expected three coordinates");
    rows.push_back(Vec3<S>(S(x), S(y), S(z)));
  }
  if (rows.empty()) io_detail::parse_fail(path, line_no, "file holds no points");
  PointMatrix<S> pts(Eigen::Index(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) pts.row(Eigen::Index(i)) = rows[i];
  return PointCloud<S>(std::move(pts));
}

/// ASCII PLY with an element vertex carrying float x, y, z properties.
template <typename S>
void write_ply(const std::filesystem::path& path, const PointCloud<S>& pc) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("write_ply: cannot open " + path.string());
  out << "ply\nformat ascii 1.0\nelement vertex " << pc.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  for (Eigen::Index i = 0; i < pc.size(); ++i)
    out << io_detail::format_coord(double(pc.points(i, 0))) << ' '
        << io_detail::format_coord(double(pc.points(i, 1))) << ' '
        << io_detail::format_coord(double(pc.points(i, 2))) << '\n';
}

template <typename S>
PointCloud<S> read_ply(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("read_ply: cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;

  auto next_line = [&]() {
    if (!std::getline(in, line)) io_detail::parse_fail(path, line_no, "unexpected end of file");
    ++line_no;
  };

  next_line();
  if (line != "ply") io_detail::parse_fail(path, line_no, "missing 'ply' magic");
  next_line();
  if (line.rfind("format ascii", 0) != 0)
    io_detail::parse_fail(path, line_no, "only 'format ascii 1.0' is supported");

  Eigen::Index count = -1;
  std::vector<std::string> properties;
  for (;;) {
    next_line();
    if (line.rfind("comment", 0) == 0) continue;
    if (line == "end_header") break;
    std::istringstream is(line);
    std::string token;
    is >> token;
    if (token == "element") {
      std::string name;
      long n = 0;
      if (!(is >> name >> n)) io_detail::parse_fail(path, line_no, "malformed element line");
      if (name != "vertex") io_detail::parse_fail(path, line_no, "only vertex elements are supported");
      count = n;
    } else if (token == "property") {
      std::string type, name;
      if (!(is >> type >> name)) io_detail::parse_fail(path, line_no, "malformed property line");
      if (type != "float" && type != "double")
        io_detail::parse_fail(path, line_no, "unsupported property type '" + type + "'");
      properties.push_back(name);
    } else {
      io_detail::parse_fail(path, line_no, "unrecognized header line '" + line + "'");
    }
  }
  if (count < 1) io_detail::parse_fail(path, line_no, "vertex count missing or not positive");
  if (properties != std::vector<std::string>{"x", "y", "z"})
    io_detail::parse_fail(path, line_no, "vertex properties must be x, y, z in order");

  PointMatrix<S> pts(count, 3);
  for (Eigen::Index i = 0; i < count; ++i) {
    next_line();
    std::istringstream is(line);
    double x, y, z;
    if (!(is >> x >> y >> z)) io_detail::parse_fail(path, line_no, "expected three coordinates");
    pts(i, 0) = S(x);
    pts(i, 1) = S(y);
    pts(i, 2) = S(z);
  }
  return PointCloud<S>(std::move(pts));
}

/// Dispatch on extension: .ply or .xyz (default).
template <typename S>
PointCloud<S> read_point_cloud(const std::filesystem::path& path) {
  return path.extension() == ".ply" ? read_ply<S>(path) : read_xyz<S>(path);
}

template <typename S>
void write_point_cloud(const std::filesystem::path& path, const PointCloud<S>& pc) {
  if (path.extension() == ".ply")
    write_ply(path, pc);
  else
    write_xyz(path, pc);
}

}  // namespace genreg
