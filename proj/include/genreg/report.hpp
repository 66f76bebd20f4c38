// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <thread>
#include <vector>

#include "genreg/core.hpp"

namespace genreg {

struct ReportRow {
  std::string pair_id;
  std::string method;
  double cd = 0.0;
  double re_deg = 0.0;
  double te = 0.0;
  double wall_ms = 0.0;
  double residual = 0.0;
  bool has_gt = true;  // re/te meaningful
};

struct ReportAggregate {
  std::string method;
  double mean_cd = 0.0;
  double mean_re_deg = 0.0;
  double mean_te = 0.0;
  double mean_wall_ms = 0.0;
  std::size_t pair_count = 0;
};

/// Per-pair and aggregate registration results. Aggregates are arithmetic
/// means of the per-pair rows per method.
struct RegistrationReport {
  std::vector<ReportRow> per_pair;
  std::vector<ReportAggregate> aggregates;
  std::string hardware;

  void compute_aggregates() {
    aggregates.clear();
    for (const auto& row : per_pair) {
      ReportAggregate* agg = nullptr;
      for (auto& a : aggregates)
        if (a.method == row.method) agg = &a;
      if (!agg) {
        aggregates.push_back(ReportAggregate{row.method});
        agg = &aggregates.back();
      }
      agg->mean_cd += row.cd;
      agg->mean_re_deg += row.re_deg;
      agg->mean_te += row.te;
      agg->mean_wall_ms += row.wall_ms;
      ++agg->pair_count;
    }
    for (auto& a : aggregates) {
      const double n = double(a.pair_count);
      a.mean_cd /= n;
      a.mean_re_deg /= n;
      a.mean_te /= n;
      a.mean_wall_ms /= n;
    }
  }

  void write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("report: cannot write " + path.string());
    out << "pair_id,method,cd,re_deg,te,wall_ms,residual\n";
    char buf[256];
    for (const auto& r : per_pair) {
      std::snprintf(buf, sizeof(buf), "%s,%s,%.9g,%.9g,%.9g,%.3f,%.9g\n", r.pair_id.c_str(),
                    r.method.c_str(), r.cd, r.has_gt ? r.re_deg : std::nan(""),
                    r.has_gt ? r.te : std::nan(""), r.wall_ms, r.residual);
      out << buf;
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["hardware"] = hardware;
    j["per_pair"] = nlohmann::json::array();
    for (const auto& r : per_pair) {
      nlohmann::json row;
      row["pair_id"] = r.pair_id;
      row["method"] = r.method;
      row["cd"] = r.cd;
      if (r.has_gt) {
        row["re_deg"] = r.re_deg;
        row["te"] = r.te;
      }
      row["wall_ms"] = r.wall_ms;
      row["residual"] = r.residual;
      j["per_pair"].push_back(row);
    }
    j["aggregate"] = nlohmann::json::array();
    for (const auto& a : aggregates) {
      nlohmann::json row;
      row["method"] = a.method;
      row["mean_cd"] = a.mean_cd;
      row["mean_re_deg"] = a.mean_re_deg;
      row["mean_te"] = a.mean_te;
      row["mean_wall_ms"] = a.mean_wall_ms;
      row["pair_count"] = a.pair_count;
      j["aggregate"].push_back(row);
    }
    return j;
  }

  void write_json(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("report: cannot write " + path.string());
    out << to_json().dump(2) << "\n";
  }
};

inline std::string hardware_summary() {
  return "threads=" + std::to_string(std::thread::hardware_concurrency());
}

}  // namespace genreg
