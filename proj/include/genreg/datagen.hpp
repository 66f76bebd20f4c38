// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "genreg/pointcloud_io.hpp"
#include "genreg/shapes.hpp"
#include "genreg/thread_pool.hpp"

namespace genreg {

/// Uniform scale plus translation mapping the axis-aligned bounding box into
/// [0,1]^3 with the longest extent spanning [0,1]; aspect ratio preserved.
template <typename S>
PointCloud<S> normalize_unit_box(const PointCloud<S>& pc) {
  pc.validate();
  const Vec3<S> lo = pc.points.colwise().minCoeff();
  const Vec3<S> hi = pc.points.colwise().maxCoeff();
  const S extent = (hi - lo).maxCoeff();
  const S scale = extent > S(0) ? S(1) / extent : S(1);
  PointCloud<S> out;
  out.id = pc.id;
  out.points = (pc.points.rowwise() - lo) * scale;
  return out;
}

/// Independent zero-mean Gaussian noise with standard deviation sigma per
/// coordinate, deterministic per seed.
template <typename S>
PointCloud<S> add_gaussian_noise(const PointCloud<S>& pc, S sigma, std::uint64_t seed) {
  if (sigma < S(0)) throw InvalidArgument("add_gaussian_noise: sigma must be non-negative");
  PointCloud<S> out = pc;
  if (sigma == S(0)) return out;
  Rng rng(mix_seed(seed, 0x9015EULL));
  for (Eigen::Index i = 0; i < out.size(); ++i)
    for (Eigen::Index j = 0; j < 3; ++j) out.points(i, j) += S(rng.normal(0.0, double(sigma)));
  return out;
}

/// Drops the floor(fraction*N) largest-X points; survivors keep their
/// original relative order.
template <typename S>
PointCloud<S> partial_crop(const PointCloud<S>& pc, double fraction) {
  if (fraction < 0.0 || fraction >= 1.0) throw InvalidArgument("partial_crop: fraction must lie in [0,1)");
  const Eigen::Index n = pc.size();
  const Eigen::Index drop = Eigen::Index(fraction * double(n));
  if (drop == 0) return pc;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index(0));
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return pc.points(a, 0) > pc.points(b, 0) || (pc.points(a, 0) == pc.points(b, 0) && a < b);
  });
  std::vector<char> removed(std::size_t(n), 0);
  for (Eigen::Index i = 0; i < drop; ++i) removed[std::size_t(order[std::size_t(i)])] = 1;
  PointCloud<S> out;
  out.id = pc.id;
  out.points.resize(n - drop, 3);
  Eigen::Index w = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (!removed[std::size_t(i)]) out.points.row(w++) = pc.points.row(i);
  return out;
}

struct PairMetadata {
  double noise_sigma = 0.0;
  double partial_fraction = 0.0;
  std::string shape_id;
  std::uint64_t seed = 0;
  bool symmetric_shape = false;
};

/// Two independent samplings of one shape: A is the source, B the target
/// carrying the drawn rigid transform (and optional noise/crop) on top of
/// its own sampling.
template <typename S>
struct PairSample {
  PointCloud<S> a;
  PointCloud<S> b;
  RigidTransform<S> t_gt;  // maps the source frame onto the target frame
  EulerPose<S> pose_gt;
  PairMetadata metadata;
};

/// The full pair protocol: sample the shape twice with distinct sub-seeds,
/// normalize each sampling to the unit box, optionally noise then crop the
/// target (re-padded to N from surviving points), and finally pose the
/// target with a transform drawn from the given ranges.
template <typename S>
PairSample<S> build_pair(const ShapeSpec& spec, Eigen::Index n, std::pair<S, S> rot_range_deg,
                         std::pair<S, S> trans_range, S noise_sigma, double partial_fraction,
                         std::uint64_t seed) {
  if (n < 1) throw InvalidArgument("build_pair: need at least one point");
  const auto a_raw = sample_shape(spec, n, mix_seed(seed, 1));
  const auto b_raw = sample_shape(spec, n, mix_seed(seed, 2));

  PairSample<S> pair;
  pair.a = normalize_unit_box(a_raw.template cast<S>());
  PointCloud<S> target = normalize_unit_box(b_raw.template cast<S>());

  if (noise_sigma > S(0)) target = add_gaussian_noise(target, noise_sigma, mix_seed(seed, 3));
  if (partial_fraction > 0.0) {
    target = partial_crop(target, partial_fraction);
    // re-pad to N by duplicating uniformly chosen survivors with a jitter
    // far below the sampling density, keeping the fixed-N contract
    Rng rng(mix_seed(seed, 4));
    const Eigen::Index missing = n - target.size();
    PointMatrix<S> padded(n, 3);
    padded.topRows(target.size()) = target.points;
    for (Eigen::Index i = 0; i < missing; ++i) {
      const Eigen::Index pick = Eigen::Index(rng.uniform_index(std::uint64_t(target.size())));
      Vec3<S> p = target.points.row(pick);
      for (Eigen::Index j = 0; j < 3; ++j) p[j] += S(rng.normal(0.0, 1e-4));
      padded.row(target.size() + i) = p;
    }
    target.points = std::move(padded);
  }

  const auto [t_gt, pose] = random_transform<S>(mix_seed(seed, 5), rot_range_deg, trans_range);
  pair.t_gt = t_gt;
  pair.pose_gt = pose;
  pair.b = apply(target, t_gt);
  pair.b.id = spec.kind;

  pair.metadata.noise_sigma = double(noise_sigma);
  pair.metadata.partial_fraction = partial_fraction;
  pair.metadata.shape_id = spec.kind;
  pair.metadata.seed = seed;
  pair.metadata.symmetric_shape = spec.rotationally_symmetric();
  return pair;
}

// ---------------------------------------------------------------------------
// dataset directory layout: pair_%04d_{a,b}.xyz plus manifest.json

template <typename S>
nlohmann::json transform_to_json(const RigidTransform<S>& t) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) out.push_back(double(t.matrix(i, j)));
  return out;
}

template <typename S>
RigidTransform<S> transform_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 16) throw ParseError("manifest: transform must be 16 numbers, row-major");
  RigidTransform<S> t;
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j2 = 0; j2 < 4; ++j2) t.matrix(i, j2) = S(j[std::size_t(i * 4 + j2)].get<double>());
  return t;
}

template <typename S>
void write_dataset(const std::filesystem::path& dir, const std::vector<PairSample<S>>& pairs) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = nlohmann::json::array();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    char name_a[32], name_b[32];
    std::snprintf(name_a, sizeof(name_a), "pair_%04zu_a.xyz", i);
    std::snprintf(name_b, sizeof(name_b), "pair_%04zu_b.xyz", i);
    write_xyz(dir / name_a, pairs[i].a);
    write_xyz(dir / name_b, pairs[i].b);
    nlohmann::json rec;
    rec["id"] = i;
    rec["source"] = name_a;
    rec["target"] = name_b;
    rec["t_gt"] = transform_to_json(pairs[i].t_gt);
    rec["metadata"] = {{"noise_sigma", pairs[i].metadata.noise_sigma},
                       {"partial_fraction", pairs[i].metadata.partial_fraction},
                       {"shape_id", pairs[i].metadata.shape_id},
                       {"seed", pairs[i].metadata.seed},
                       {"symmetric_shape", pairs[i].metadata.symmetric_shape}};
    manifest.push_back(rec);
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw ConfigError("write_dataset: cannot write manifest in " + dir.string());
  out << manifest.dump(2) << "\n";
}

template <typename S>
std::vector<PairSample<S>> load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ConfigError("load_dataset: manifest.json not found in " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("load_dataset: manifest is not valid JSON: ") + e.what());
  }
  std::vector<PairSample<S>> pairs;
  for (const auto& rec : manifest) {
    PairSample<S> pair;
    pair.a = read_xyz<S>(dir / rec.at("source").get<std::string>());
    pair.b = read_xyz<S>(dir / rec.at("target").get<std::string>());
    pair.t_gt = transform_from_json<S>(rec.at("t_gt"));
    const auto& meta = rec.at("metadata");
    pair.metadata.noise_sigma = meta.value("noise_sigma", 0.0);
    pair.metadata.partial_fraction = meta.value("partial_fraction", 0.0);
    pair.metadata.shape_id = meta.value("shape_id", "");
    pair.metadata.seed = meta.value("seed", std::uint64_t(0));
    pair.metadata.symmetric_shape = meta.value("symmetric_shape", false);
    pair.pose_gt = transform_to_euler(pair.t_gt);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

}  // namespace genreg
