// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "genreg/core.hpp"
#include "genreg/geometry.hpp"

namespace genreg {

/// Procedural analytic surface: sphere, box, cylinder, torus, or a composite
/// of 2-4 posed children. Stands in for CAD model input at desk scale.
struct ShapeSpec {
  std::string kind = "sphere";  // sphere | box | cylinder | torus | composite
  double radius = 1.0;          // sphere, cylinder; torus minor radius
  double height = 1.0;          // cylinder
  double major_radius = 1.0;    // torus
  Eigen::Vector3d extents{1.0, 1.0, 1.0};  // box
  std::uint64_t seed = 0;

  // composite only: child shapes with per-child pose offsets (a vector of
  // the incomplete own type is valid; poses ride alongside by index)
  std::vector<ShapeSpec> children;
  std::vector<std::array<double, 6>> child_poses;  // angles_deg xyz, translation xyz

  void validate() const {
    if (kind == "sphere") {
      if (radius <= 0) throw InvalidArgument("ShapeSpec: sphere radius must be positive");
    } else if (kind == "box") {
      if ((extents.array() <= 0).any()) throw InvalidArgument("ShapeSpec: box extents must be positive");
    } else if (kind == "cylinder") {
      if (radius <= 0 || height <= 0) throw InvalidArgument("ShapeSpec: cylinder dimensions must be positive");
    } else if (kind == "torus") {
      if (radius <= 0 || major_radius <= 0) throw InvalidArgument("ShapeSpec: torus radii must be positive");
      if (radius >= major_radius) throw InvalidArgument("ShapeSpec: torus minor radius must be below the major radius");
    } else if (kind == "composite") {
      if (children.size() < 2 || children.size() > 4)
        throw InvalidArgument("ShapeSpec: composite needs 2-4 children");
      if (child_poses.size() != children.size())
        throw InvalidArgument("ShapeSpec: composite needs one pose per child");
      for (const auto& child : children) {
        if (child.kind == "composite") throw InvalidArgument("ShapeSpec: composites do not nest");
        child.validate();
      }
    } else {
      throw InvalidArgument("ShapeSpec: unknown kind '" + kind + "'");
    }
  }

  double surface_area() const {
    if (kind == "sphere") return 4.0 * pi<double>() * radius * radius;
    if (kind == "box")
      return 2.0 * (extents[0] * extents[1] + extents[1] * extents[2] + extents[0] * extents[2]);
    if (kind == "cylinder") return 2.0 * pi<double>() * radius * (height + radius);
    if (kind == "torus") return 4.0 * pi<double>() * pi<double>() * major_radius * radius;
    double total = 0.0;
    for (const auto& child : children) total += child.surface_area();
    return total;
  }

  /// Continuous rotational symmetry makes the drawn pose unidentifiable, so
  /// such pairs are excluded from rotation-error acceptance checks.
  bool rotationally_symmetric() const {
    return kind == "sphere" || kind == "cylinder" || kind == "torus";
  }

  /// The asymmetric three-part shape used by the toy training runs.
  static ShapeSpec canonical_composite() {
    ShapeSpec box;
    box.kind = "box";
    box.extents = {0.9, 0.5, 0.3};
    ShapeSpec cyl;
    cyl.kind = "cylinder";
    cyl.radius = 0.14;
    cyl.height = 0.75;
    ShapeSpec ball;
    ball.kind = "sphere";
    ball.radius = 0.2;

    ShapeSpec out;
    out.kind = "composite";
    out.children = {box, cyl, ball};
    out.child_poses = {{0, 0, 0, 0, 0, 0},
                       {35.0, 0.0, 20.0, 0.45, 0.3, 0.1},
                       {0, 0, 0, -0.4, 0.32, -0.2}};
    return out;
  }
};

namespace shape_detail {

inline Vec3<double> sample_sphere(Rng& rng, double r) {
  const double z = rng.uniform(-1.0, 1.0);
  const double phi = rng.uniform(0.0, 2.0 * pi<double>());
  const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * s * std::cos(phi), r * s * std::sin(phi), r * z};
}

inline Vec3<double> sample_box(Rng& rng, const Eigen::Vector3d& e) {
  // choose a face pair by area, then the sign, then uniform in the face
  const double ax = e[1] * e[2], ay = e[0] * e[2], az = e[0] * e[1];
  const double pick = rng.uniform(0.0, ax + ay + az);
  const double sign = rng.uniform01() < 0.5 ? -0.5 : 0.5;
  const double u = rng.uniform01() - 0.5, v = rng.uniform01() - 0.5;
  if (pick < ax) return {sign * e[0], u * e[1], v * e[2]};
  if (pick < ax + ay) return {u * e[0], sign * e[1], v * e[2]};
  return {u * e[0], v * e[1], sign * e[2]};
}

inline Vec3<double> sample_cylinder(Rng& rng, double r, double h) {
  const double side = 2.0 * pi<double>() * r * h;
  const double cap = pi<double>() * r * r;
  const double pick = rng.uniform(0.0, side + 2.0 * cap);
  const double theta = rng.uniform(0.0, 2.0 * pi<double>());
  if (pick < side) {
    return {r * std::cos(theta), r * std::sin(theta), rng.uniform(-0.5 * h, 0.5 * h)};
  }
  const double rr = r * std::sqrt(rng.uniform01());
  const double z = pick < side + cap ? 0.5 * h : -0.5 * h;
  return {rr * std::cos(theta), rr * std::sin(theta), z};
}

inline Vec3<double> sample_torus(Rng& rng, double big_r, double small_r) {
  const double u = rng.uniform(0.0, 2.0 * pi<double>());
  // minor angle density is proportional to (R + r cos v); rejection sample
  double v = 0.0;
  for (;;) {
    v = rng.uniform(0.0, 2.0 * pi<double>());
    const double accept = (big_r + small_r * std::cos(v)) / (big_r + small_r);
    if (rng.uniform01() < accept) break;
  }
  const double ring = big_r + small_r * std::cos(v);
  return {ring * std::cos(u), ring * std::sin(u), small_r * std::sin(v)};
}

}  // namespace shape_detail

/// n points uniform by surface area, deterministic under (spec, seed).
inline PointCloud<double> sample_shape(const ShapeSpec& spec, Eigen::Index n, std::uint64_t seed) {
  spec.validate();
  if (n < 1) throw InvalidArgument("sample_shape: need at least one point");
  Rng rng(mix_seed(seed, splitmix64(spec.seed)));

  std::vector<RigidTransform<double>> child_poses;
  std::vector<double> child_cumulative;
  if (spec.kind == "composite") {
    double acc = 0.0;
    for (std::size_t c = 0; c < spec.children.size(); ++c) {
      EulerPose<double> pose;
      pose.angles_deg << spec.child_poses[c][0], spec.child_poses[c][1], spec.child_poses[c][2];
      pose.translation << spec.child_poses[c][3], spec.child_poses[c][4], spec.child_poses[c][5];
      child_poses.push_back(euler_to_transform(pose));
      acc += spec.children[c].surface_area();
      child_cumulative.push_back(acc);
    }
  }

  PointMatrix<double> pts(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    Vec3<double> p;
    if (spec.kind == "sphere") {
      p = shape_detail::sample_sphere(rng, spec.radius);
    } else if (spec.kind == "box") {
      p = shape_detail::sample_box(rng, spec.extents);
    } else if (spec.kind == "cylinder") {
      p = shape_detail::sample_cylinder(rng, spec.radius, spec.height);
    } else if (spec.kind == "torus") {
      p = shape_detail::sample_torus(rng, spec.major_radius, spec.radius);
    } else {
      const double pick = rng.uniform(0.0, child_cumulative.back());
      std::size_t c = 0;
      while (pick >= child_cumulative[c] && c + 1 < child_cumulative.size()) ++c;
      const auto& child = spec.children[c];
      if (child.kind == "sphere") {
        p = shape_detail::sample_sphere(rng, child.radius);
      } else if (child.kind == "box") {
        p = shape_detail::sample_box(rng, child.extents);
      } else if (child.kind == "cylinder") {
        p = shape_detail::sample_cylinder(rng, child.radius, child.height);
      } else {
        p = shape_detail::sample_torus(rng, child.major_radius, child.radius);
      }
      p = p * child_poses[c].rotation() + child_poses[c].translation();
    }
    pts.row(i) = p;
  }
  return PointCloud<double>(std::move(pts), spec.kind);
}

}  // namespace genreg
