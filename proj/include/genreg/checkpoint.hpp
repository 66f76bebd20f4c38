// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "genreg/networks.hpp"

namespace genreg {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; byte-swapped platforms are unsupported");

inline std::string fnv1a_hex(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Parameter snapshot: named sections of tensors plus the training step and
/// a hash of the config that produced them. Stored as a JSON manifest next
/// to a flat little-endian binary blob of f64 values.
template <typename S>
struct Checkpoint {
  std::uint64_t step = 0;
  std::string config_hash;
  Eigen::Index n_points = 0;
  std::vector<std::pair<std::string, ParamSet<S>>> sections;

  ParamSet<S>& section(const std::string& name) {
    for (auto& [n, p] : sections)
      if (n == name) return p;
    throw CompatibilityError("checkpoint: missing section '" + name + "'");
  }
};

template <typename S>
void save_checkpoint(const std::filesystem::path& prefix, const Checkpoint<S>& ckpt) {
  nlohmann::json manifest;
  manifest["format"] = "genreg-checkpoint";
  manifest["version"] = 1;
  manifest["step"] = ckpt.step;
  manifest["config_hash"] = ckpt.config_hash;
  manifest["n_points"] = ckpt.n_points;
  manifest["precision"] = "f64";

  std::vector<double> blob;
  nlohmann::json sections = nlohmann::json::array();
  for (const auto& [sec_name, params] : ckpt.sections) {
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& [name, tensor] : params.items) {
      nlohmann::json entry;
      entry["name"] = name;
      entry["shape"] = tensor.shape();
      entry["offset"] = blob.size();
      entry["count"] = tensor.numel();
      tensors.push_back(entry);
      for (const S v : tensor.values()) blob.push_back(double(v));
    }
    sections.push_back({{"name", sec_name}, {"tensors", tensors}});
  }
  manifest["sections"] = sections;
  manifest["total_values"] = blob.size();

  std::ofstream mf(prefix.string() + ".json", std::ios::trunc);
  if (!mf) throw ConfigError("checkpoint: cannot write manifest at " + prefix.string() + ".json");
  mf << manifest.dump(2) << "\n";
  mf.close();

  std::ofstream bf(prefix.string() + ".bin", std::ios::trunc | std::ios::binary);
  if (!bf) throw ConfigError("checkpoint: cannot write blob at " + prefix.string() + ".bin");
  bf.write(reinterpret_cast<const char*>(blob.data()),
           std::streamsize(blob.size() * sizeof(double)));
}

template <typename S>
Checkpoint<S> load_checkpoint(const std::filesystem::path& prefix) {
  std::ifstream mf(prefix.string() + ".json");
  if (!mf) throw ConfigError("checkpoint: manifest not found at " + prefix.string() + ".json");
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: manifest is not valid JSON: ") + e.what());
  }
  if (manifest.value("format", "") != "genreg-checkpoint")
    throw CompatibilityError("checkpoint: unrecognized manifest format");

  std::ifstream bf(prefix.string() + ".bin", std::ios::binary);
  if (!bf) throw ConfigError("checkpoint: blob not found at " + prefix.string() + ".bin");
  std::vector<double> blob(manifest.at("total_values").get<std::size_t>());
  bf.read(reinterpret_cast<char*>(blob.data()), std::streamsize(blob.size() * sizeof(double)));
  if (std::size_t(bf.gcount()) != blob.size() * sizeof(double))
    throw CompatibilityError("checkpoint: blob shorter than manifest declares");

  Checkpoint<S> ckpt;
  ckpt.step = manifest.at("step").get<std::uint64_t>();
  ckpt.config_hash = manifest.value("config_hash", "");
  ckpt.n_points = manifest.at("n_points").get<Eigen::Index>();
  for (const auto& section : manifest.at("sections")) {
    ParamSet<S> params;
    for (const auto& entry : section.at("tensors")) {
      TensorShape shape;
      for (const auto& d : entry.at("shape")) shape.push_back(d.get<Eigen::Index>());
      const std::size_t offset = entry.at("offset").get<std::size_t>();
      const std::size_t count = entry.at("count").get<std::size_t>();
      if (Eigen::Index(count) != shape_numel(shape))
        throw CompatibilityError("checkpoint: tensor '" + entry.at("name").get<std::string>() +
                                 "' count does not match its shape " + shape_string(shape));
      if (offset + count > blob.size())
        throw CompatibilityError("checkpoint: tensor '" + entry.at("name").get<std::string>() +
                                 "' extends past the blob");
      std::vector<S> values(count);
      for (std::size_t i = 0; i < count; ++i) values[i] = S(blob[offset + i]);
      params.add(entry.at("name").get<std::string>(), std::move(shape), std::move(values));
    }
    ckpt.sections.emplace_back(section.at("name").get<std::string>(), std::move(params));
  }
  return ckpt;
}

/// Copy loaded values into an initialized parameter set, validating every
/// name and shape against the live network.
template <typename S>
void load_into(ParamSet<S>& target, const ParamSet<S>& loaded) {
  if (target.items.size() != loaded.items.size())
    throw CompatibilityError("checkpoint: parameter count mismatch (" +
                             std::to_string(loaded.items.size()) + " stored, " +
                             std::to_string(target.items.size()) + " expected)");
  for (std::size_t i = 0; i < target.items.size(); ++i) {
    auto& [tname, tt] = target.items[i];
    const auto& [lname, lt] = loaded.items[i];
    if (tname != lname)
      throw CompatibilityError("checkpoint: parameter '" + lname + "' where '" + tname + "' expected");
    if (tt.shape() != lt.shape())
      throw CompatibilityError("checkpoint: shape " + shape_string(lt.shape()) + " for '" + tname +
                               "' does not match expected " + shape_string(tt.shape()));
    tt.mutable_values() = lt.values();
  }
}

}  // namespace genreg
