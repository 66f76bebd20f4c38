// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>

#include "genreg/checkpoint.hpp"
#include "genreg/shapes.hpp"
#include "genreg/training.hpp"

namespace genreg {

namespace config_detail {

inline void require_keys(const nlohmann::json& j, const std::string& where,
                         const std::set<std::string>& required, const std::set<std::string>& optional) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (const auto& key : required)
    if (!j.contains(key)) throw ConfigError("config: missing key '" + where + "." + key + "'");
  for (const auto& [key, value] : j.items())
    if (!required.count(key) && !optional.count(key))
      throw ConfigError("config: unknown key '" + where + "." + key + "'");
}

template <typename T>
T get_as(const nlohmann::json& j, const std::string& where, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config: key '" + where + "." + key + "' has the wrong type");
  }
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& where, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  return get_as<T>(j, where, key);
}

}  // namespace config_detail

inline ShapeSpec shape_from_json(const nlohmann::json& j, const std::string& where) {
  using config_detail::get_or;
  if (j.is_string() && j.get<std::string>() == "canonical_composite")
    return ShapeSpec::canonical_composite();
  config_detail::require_keys(j, where, {"kind"},
                              {"radius", "height", "major_radius", "extents", "seed", "children", "child_poses"});
  ShapeSpec spec;
  spec.kind = j.at("kind").get<std::string>();
  spec.radius = get_or(j, where, "radius", spec.radius);
  spec.height = get_or(j, where, "height", spec.height);
  spec.major_radius = get_or(j, where, "major_radius", spec.major_radius);
  spec.seed = get_or(j, where, "seed", spec.seed);
  if (j.contains("extents")) {
    const auto e = config_detail::get_as<std::vector<double>>(j, where, "extents");
    if (e.size() != 3) throw ConfigError("config: key '" + where + ".extents' needs three numbers");
    spec.extents = {e[0], e[1], e[2]};
  }
  if (j.contains("children")) {
    for (std::size_t i = 0; i < j.at("children").size(); ++i)
      spec.children.push_back(shape_from_json(j.at("children")[i], where + ".children[" + std::to_string(i) + "]"));
    const auto poses =
        config_detail::get_as<std::vector<std::vector<double>>>(j, where, "child_poses");
    for (const auto& pose : poses) {
      if (pose.size() != 6) throw ConfigError("config: key '" + where + ".child_poses' entries need six numbers");
      spec.child_poses.push_back({pose[0], pose[1], pose[2], pose[3], pose[4], pose[5]});
    }
  }
  spec.validate();
  return spec;
}

struct DataConfig {
  ShapeSpec shape;
  Eigen::Index n_points = 1024;
  Eigen::Index n_pairs = 8;
  std::pair<double, double> rot_range_deg{0.0, 45.0};
  std::pair<double, double> trans_range{0.0, 0.8};
  double noise_sigma = 0.0;
  double partial_fraction = 0.0;
};

struct EvalConfig {
  PdsacOptions pdsac{.m = 512, .k = 4, .seed = 0};
  RansacOptions ransac{.m = 512, .k = 4, .inlier_threshold = 0.02, .seed = 0};
  int icp_max_iter = 50;
  double icp_tol = 1e-6;
};

struct Config {
  std::uint64_t seed = 0;
  DataConfig data;
  TrainConfig<double> train;
  EvalConfig eval;
  std::string config_hash;  // hash of the canonical serialized form
};

inline Config load_config(const std::filesystem::path& path) {
  using config_detail::get_as;
  using config_detail::get_or;
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  config_detail::require_keys(j, "", {"seed", "data"}, {"train", "eval"});

  Config config;
  config.seed = get_as<std::uint64_t>(j, "", "seed");

  const auto& d = j.at("data");
  config_detail::require_keys(d, "data", {"shape", "n_points", "n_pairs"},
                              {"rot_range_deg", "trans_range", "noise_sigma", "partial_fraction"});
  config.data.shape = shape_from_json(d.at("shape"), "data.shape");
  config.data.n_points = get_as<Eigen::Index>(d, "data", "n_points");
  config.data.n_pairs = get_as<Eigen::Index>(d, "data", "n_pairs");
  if (config.data.n_points < 1 || config.data.n_pairs < 0)
    throw ConfigError("config: key 'data.n_points' and 'data.n_pairs' must be positive");
  if (d.contains("rot_range_deg")) {
    const auto r = get_as<std::vector<double>>(d, "data", "rot_range_deg");
    if (r.size() != 2 || r[0] > r[1]) throw ConfigError("config: key 'data.rot_range_deg' must be [lo, hi]");
    config.data.rot_range_deg = {r[0], r[1]};
  }
  if (d.contains("trans_range")) {
    const auto r = get_as<std::vector<double>>(d, "data", "trans_range");
    if (r.size() != 2 || r[0] > r[1]) throw ConfigError("config: key 'data.trans_range' must be [lo, hi]");
    config.data.trans_range = {r[0], r[1]};
  }
  config.data.noise_sigma = get_or(d, "data", "noise_sigma", 0.0);
  config.data.partial_fraction = get_or(d, "data", "partial_fraction", 0.0);
  if (config.data.noise_sigma < 0.0) throw ConfigError("config: key 'data.noise_sigma' must be non-negative");
  if (config.data.partial_fraction < 0.0 || config.data.partial_fraction >= 1.0)
    throw ConfigError("config: key 'data.partial_fraction' must lie in [0,1)");

  if (j.contains("train")) {
    const auto& t = j.at("train");
    config_detail::require_keys(t, "train", {},
                                {"epochs", "batch_size", "n_points", "learning_rate", "seed", "gan_schedule",
                                 "pdsac", "knn_k", "mixer_residual", "non_saturating_gan", "checkpoint_every"});
    config.train.epochs = get_or(t, "train", "epochs", config.train.epochs);
    config.train.batch_size = get_or(t, "train", "batch_size", config.train.batch_size);
    config.train.n_points = get_or(t, "train", "n_points", config.data.n_points);
    config.train.learning_rate = get_or(t, "train", "learning_rate", config.train.learning_rate);
    config.train.seed = get_or(t, "train", "seed", config.seed);
    if (t.contains("gan_schedule")) {
      const auto& g = t.at("gan_schedule");
      config_detail::require_keys(g, "train.gan_schedule", {}, {"generator_every", "discriminator_every"});
      config.train.schedule.generator_every =
          get_or(g, "train.gan_schedule", "generator_every", config.train.schedule.generator_every);
      config.train.schedule.discriminator_every =
          get_or(g, "train.gan_schedule", "discriminator_every", config.train.schedule.discriminator_every);
    }
    if (t.contains("pdsac")) {
      const auto& p = t.at("pdsac");
      config_detail::require_keys(p, "train.pdsac", {}, {"m", "k", "seed"});
      config.train.pdsac.m = get_or(p, "train.pdsac", "m", config.train.pdsac.m);
      config.train.pdsac.k = get_or(p, "train.pdsac", "k", config.train.pdsac.k);
      config.train.pdsac.seed = get_or(p, "train.pdsac", "seed", config.train.pdsac.seed);
    }
    config.train.knn_k = get_or(t, "train", "knn_k", config.train.knn_k);
    config.train.mixer_residual = get_or(t, "train", "mixer_residual", config.train.mixer_residual);
    config.train.non_saturating_gan = get_or(t, "train", "non_saturating_gan", config.train.non_saturating_gan);
    config.train.checkpoint_every = get_or(t, "train", "checkpoint_every", config.train.checkpoint_every);
  } else {
    config.train.n_points = config.data.n_points;
    config.train.seed = config.seed;
  }

  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    config_detail::require_keys(e, "eval", {}, {"pdsac", "ransac", "icp"});
    if (e.contains("pdsac")) {
      const auto& p = e.at("pdsac");
      config_detail::require_keys(p, "eval.pdsac", {}, {"m", "k"});
      config.eval.pdsac.m = get_or(p, "eval.pdsac", "m", config.eval.pdsac.m);
      config.eval.pdsac.k = get_or(p, "eval.pdsac", "k", config.eval.pdsac.k);
    }
    if (e.contains("ransac")) {
      const auto& r = e.at("ransac");
      config_detail::require_keys(r, "eval.ransac", {}, {"m", "k", "inlier_threshold"});
      config.eval.ransac.m = get_or(r, "eval.ransac", "m", config.eval.ransac.m);
      config.eval.ransac.k = get_or(r, "eval.ransac", "k", config.eval.ransac.k);
      config.eval.ransac.inlier_threshold =
          get_or(r, "eval.ransac", "inlier_threshold", config.eval.ransac.inlier_threshold);
    }
    if (e.contains("icp")) {
      const auto& i = e.at("icp");
      config_detail::require_keys(i, "eval.icp", {}, {"max_iter", "tol"});
      config.eval.icp_max_iter = get_or(i, "eval.icp", "max_iter", config.eval.icp_max_iter);
      config.eval.icp_tol = get_or(i, "eval.icp", "tol", config.eval.icp_tol);
    }
  }

  config.config_hash = fnv1a_hex(j.dump());
  config.train.config_hash = config.config_hash;
  config.train.validate();
  return config;
}

}  // namespace genreg
