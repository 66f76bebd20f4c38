// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>

#include "genreg/config.hpp"
#include "genreg/estimation.hpp"
#include "genreg/metrics.hpp"
#include "genreg/networks.hpp"
#include "genreg/report.hpp"

namespace genreg {

namespace eval_detail {

inline double ms_since(const std::chrono::steady_clock::time_point& start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace eval_detail

/// One generator-based registration: a single forward pass, PDSAC on each
/// branch's index-aligned correspondences, and the branch combination. The
/// reported transform maps the source onto the target so it compares
/// directly against the drawn ground-truth pose.
template <typename S>
struct GenRegResult {
  PointCloud<S> a_generated;
  PointCloud<S> b_generated;
  RigidTransform<S> t_source_to_target;
  S residual = S(0);  // sum of the two branch projection errors
  double wall_ms = 0.0;
};

template <typename S>
GenRegResult<S> genreg_register(const PointCloud<S>& a, const PointCloud<S>& b,
                                const ParamSet<S>& params, const NetworkConfig& cfg,
                                const PdsacOptions& pdsac_opts) {
  if (a.size() != cfg.n_points || b.size() != cfg.n_points)
    throw CompatibilityError("register: cloud sizes " + std::to_string(a.size()) + "/" +
                             std::to_string(b.size()) + " do not match the checkpoint n_points=" +
                             std::to_string(cfg.n_points));
  const auto start = std::chrono::steady_clock::now();
  const auto gen = generator_forward(a, b, params, cfg);

  // one hypothesis stream for both branches keeps the estimator exactly
  // symmetric: identical inputs yield T_A == T_B and an identity combination
  CorrespondenceSet<S> ca{a.points, gen.a_generated.points};
  CorrespondenceSet<S> cb{b.points, gen.b_generated.points};
  const auto cons_a = pdsac(ca, pdsac_opts);
  const auto cons_b = pdsac(cb, pdsac_opts);

  GenRegResult<S> out;
  // combine gives the target-to-source map; report the inverse direction
  out.t_source_to_target = invert(combine_branch_transforms(cons_a.transform, cons_b.transform));
  out.wall_ms = eval_detail::ms_since(start);
  out.a_generated = gen.a_generated;
  out.b_generated = gen.b_generated;
  out.residual = cons_a.residual + cons_b.residual;
  return out;
}

struct EvalMethods {
  bool genreg = true;
  bool icp = true;
  bool ransac_on_genreg = true;

  static EvalMethods parse(const std::string& csv) {
    EvalMethods m{false, false, false};
    std::size_t begin = 0;
    while (begin <= csv.size()) {
      const std::size_t end = std::min(csv.find(',', begin), csv.size());
      const std::string name = csv.substr(begin, end - begin);
      if (name == "genreg") {
        m.genreg = true;
      } else if (name == "icp") {
        m.icp = true;
      } else if (name == "ransac-on-genreg") {
        m.ransac_on_genreg = true;
      } else if (!name.empty()) {
        throw ConfigError("eval: unknown method '" + name + "'");
      }
      begin = end + 1;
    }
    if (!m.genreg && !m.icp && !m.ransac_on_genreg) throw ConfigError("eval: no methods selected");
    return m;
  }
};

template <typename S>
struct PairArtifacts {
  std::string pair_id;
  PointCloud<S> a_generated;  // genreg branch outputs, when run
  PointCloud<S> b_generated;
  PointCloud<S> icp_aligned;          // source under the icp estimate
  PointCloud<S> ransac_aligned;       // source under the ransac estimate
  bool has_genreg = false, has_icp = false, has_ransac = false;
};

/// Evaluate the selected methods on one dataset pair. Timings wrap the
/// method call only. The RANSAC row reuses the generator's correspondences.
template <typename S>
std::vector<ReportRow> evaluate_pair(const PairSample<S>& pair, const std::string& pair_id,
                                     const ParamSet<S>& params, const NetworkConfig& cfg,
                                     const EvalConfig& eval_cfg, const EvalMethods& methods,
                                     std::uint64_t seed, PairArtifacts<S>* artifacts = nullptr) {
  std::vector<ReportRow> rows;
  if (artifacts) artifacts->pair_id = pair_id;

  GenRegResult<S> gen;
  bool have_gen = false;
  if (methods.genreg || methods.ransac_on_genreg) {
    PdsacOptions opts = eval_cfg.pdsac;
    opts.seed = mix_seed(seed, 0x6E);
    gen = genreg_register(pair.a, pair.b, params, cfg, opts);
    have_gen = true;
  }

  if (methods.genreg) {
    ReportRow row;
    row.pair_id = pair_id;
    row.method = "genreg";
    row.cd = double(chamfer(gen.a_generated, gen.b_generated));
    row.re_deg = double(rotation_error(gen.t_source_to_target, pair.t_gt));
    row.te = double(translation_error(gen.t_source_to_target, pair.t_gt));
    row.wall_ms = gen.wall_ms;
    row.residual = double(gen.residual);
    rows.push_back(row);
    if (artifacts) {
      artifacts->a_generated = gen.a_generated;
      artifacts->b_generated = gen.b_generated;
      artifacts->has_genreg = true;
    }
  }

  if (methods.icp) {
    const auto start = std::chrono::steady_clock::now();
    const auto result = icp(pair.a, pair.b, eval_cfg.icp_max_iter, S(eval_cfg.icp_tol));
    const double wall = eval_detail::ms_since(start);
    const auto aligned = apply(pair.a, result.transform);
    ReportRow row;
    row.pair_id = pair_id;
    row.method = "icp";
    row.cd = double(chamfer(aligned, pair.b));
    row.re_deg = double(rotation_error(result.transform, pair.t_gt));
    row.te = double(translation_error(result.transform, pair.t_gt));
    row.wall_ms = wall;
    row.residual = double(result.final_rmse);
    rows.push_back(row);
    if (artifacts) {
      artifacts->icp_aligned = aligned;
      artifacts->has_icp = true;
    }
  }

  if (methods.ransac_on_genreg) {
    CorrespondenceSet<S> ca{pair.a.points, gen.a_generated.points};
    CorrespondenceSet<S> cb{pair.b.points, gen.b_generated.points};
    RansacOptions opts = eval_cfg.ransac;
    opts.seed = mix_seed(seed, 0x4A);
    RansacOptions opts_b = opts;
    opts_b.seed = mix_seed(seed, 0x4B);
    const auto start = std::chrono::steady_clock::now();
    const auto cons_a = ransac(ca, opts);
    const auto cons_b = ransac(cb, opts_b);
    const auto t_est = invert(combine_branch_transforms(cons_a.transform, cons_b.transform));
    const double wall = eval_detail::ms_since(start);
    const auto aligned = apply(pair.a, t_est);
    ReportRow row;
    row.pair_id = pair_id;
    row.method = "ransac-on-genreg";
    row.cd = double(chamfer(aligned, pair.b));
    row.re_deg = double(rotation_error(t_est, pair.t_gt));
    row.te = double(translation_error(t_est, pair.t_gt));
    row.wall_ms = wall;
    row.residual = double(cons_a.residual + cons_b.residual);
    rows.push_back(row);
    if (artifacts) {
      artifacts->ransac_aligned = aligned;
      artifacts->has_ransac = true;
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// consensus benchmark (synthetic correspondences)

struct BenchConsensusRow {
  std::size_t trial = 0;
  std::string method;
  double re_deg = 0.0;
  double te = 0.0;
  double wall_ms = 0.0;
  double residual = 0.0;
};

struct BenchConsensusResult {
  std::vector<BenchConsensusRow> rows;
  double pdsac_mean_re = 0.0, pdsac_mean_te = 0.0, pdsac_mean_wall_ms = 0.0;
  double ransac_mean_re = 0.0, ransac_mean_te = 0.0, ransac_mean_wall_ms = 0.0;
  std::size_t trials = 0;
};

/// Head-to-head PDSAC vs sequential RANSAC on synthetic correspondences with
/// uniform unit-box outliers. Both consume the same per-trial data and
/// hypothesis budget m.
inline BenchConsensusResult bench_consensus(Eigen::Index n, std::size_t m, double outlier_fraction,
                                            std::size_t trials, std::uint64_t seed, int workers = 0) {
  if (n < 4 || m < 1 || trials < 1) throw InvalidArgument("bench-consensus: n, m and trials must be positive");
  if (outlier_fraction < 0.0 || outlier_fraction >= 1.0)
    throw InvalidArgument("bench-consensus: outlier fraction must lie in [0,1)");
  BenchConsensusResult result;
  result.trials = trials;
  result.rows.resize(trials * 2);

  for (std::size_t trial = 0; trial < trials; ++trial) {
    Rng rng(mix_seed(seed, trial * 2 + 1));
    PointMatrix<double> src(n, 3);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < 3; ++j) src(i, j) = rng.uniform(0.0, 1.0);
    const auto [t_true, pose] =
        random_transform<double>(mix_seed(seed, trial * 2 + 2), {0.0, 45.0}, {0.0, 0.8});
    CorrespondenceSet<double> c;
    c.src = src;
    c.dst = src * t_true.rotation();
    c.dst.rowwise() += t_true.translation();
    const Eigen::Index n_out = Eigen::Index(outlier_fraction * double(n));
    for (Eigen::Index i = 0; i < n_out; ++i) {
      const Eigen::Index row = Eigen::Index(rng.uniform_index(std::uint64_t(n)));
      for (Eigen::Index j = 0; j < 3; ++j) c.dst(row, j) = rng.uniform(0.0, 1.0);
    }

    {
      PdsacOptions opts{.m = m, .k = 4, .seed = mix_seed(seed, 0x9D00 + trial), .workers = workers};
      const auto start = std::chrono::steady_clock::now();
      const auto cons = pdsac(c, opts);
      const double wall = eval_detail::ms_since(start);
      result.rows[trial * 2] = {trial, "pdsac", rotation_error(cons.transform, t_true),
                                translation_error(cons.transform, t_true), wall, cons.residual};
    }
    {
      RansacOptions opts{.m = m, .k = 4, .inlier_threshold = 0.02, .seed = mix_seed(seed, 0x4A00 + trial)};
      const auto start = std::chrono::steady_clock::now();
      const auto cons = ransac(c, opts);
      const double wall = eval_detail::ms_since(start);
      result.rows[trial * 2 + 1] = {trial, "ransac", rotation_error(cons.transform, t_true),
                                    translation_error(cons.transform, t_true), wall, cons.residual};
    }
  }

  for (const auto& row : result.rows) {
    if (row.method == "pdsac") {
      result.pdsac_mean_re += row.re_deg;
      result.pdsac_mean_te += row.te;
      result.pdsac_mean_wall_ms += row.wall_ms;
    } else {
      result.ransac_mean_re += row.re_deg;
      result.ransac_mean_te += row.te;
      result.ransac_mean_wall_ms += row.wall_ms;
    }
  }
  const double nt = double(trials);
  result.pdsac_mean_re /= nt;
  result.pdsac_mean_te /= nt;
  result.pdsac_mean_wall_ms /= nt;
  result.ransac_mean_re /= nt;
  result.ransac_mean_te /= nt;
  result.ransac_mean_wall_ms /= nt;
  return result;
}

inline void write_bench_csv(const std::filesystem::path& path, const BenchConsensusResult& bench) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("bench-consensus: cannot write " + path.string());
  out << "trial,method,re_deg,te,wall_ms,residual\n";
  char buf[256];
  for (const auto& r : bench.rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%s,%.9g,%.9g,%.3f,%.9g\n", r.trial, r.method.c_str(), r.re_deg,
                  r.te, r.wall_ms, r.residual);
    out << buf;
  }
}

inline nlohmann::json bench_to_json(const BenchConsensusResult& bench) {
  nlohmann::json j;
  j["trials"] = bench.trials;
  j["pdsac"] = {{"mean_re_deg", bench.pdsac_mean_re},
                {"mean_te", bench.pdsac_mean_te},
                {"mean_wall_ms", bench.pdsac_mean_wall_ms}};
  j["ransac"] = {{"mean_re_deg", bench.ransac_mean_re},
                 {"mean_te", bench.ransac_mean_te},
                 {"mean_wall_ms", bench.ransac_mean_wall_ms}};
  return j;
}

}  // namespace genreg
