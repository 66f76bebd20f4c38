// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one pass/fail line per criterion. Exit code equals the
// number of failed criteria. An optional argv[1] substring filters which
// criteria run (e.g. "A3", or "A1,A2").

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <genreg/evaluate.hpp>
#include <genreg/training.hpp>
#include <iostream>
#include <sstream>

#include "fd_check.hpp"
#include "test_support.hpp"

using namespace genreg;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Criterion {
  std::string id;
  bool pass = false;
  std::string detail;
};

std::vector<double> random_values(std::uint64_t seed, std::size_t n, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// ---------------------------------------------------------------------------
// A1: per-operation and full-graph gradient checks

double op_suite_max_rel_error() {
  using test::FdProblem;
  double worst = 0.0;
  auto run = [&worst](const test::FdBuilder& build, std::vector<std::vector<double>> inputs) {
    worst = std::max(worst, test::fd_check(build, std::move(inputs)).max_rel_error);
  };

  run([](const auto& in) {
    auto a = Tensor<double>::leaf({4, 5}, in[0], true);
    auto b = Tensor<double>::leaf({5}, in[1], true);
    return FdProblem{reduce_sum_all(mul(add(a, b), sub(a, b))), {a, b}};
  }, {random_values(1, 20), random_values(2, 5)});
  run([](const auto& in) {
    auto a = Tensor<double>::leaf({2, 3, 4}, in[0], true);
    auto b = Tensor<double>::leaf({3, 1}, in[1], true);
    return FdProblem{reduce_sum_all(mul(mul(a, b), a)), {a, b}};
  }, {random_values(3, 24), random_values(4, 3)});
  run([](const auto& in) {
    auto x = Tensor<double>::leaf({4, 5}, in[0], true);
    auto y = add(gelu(x), leaky_relu(x, 0.01));
    return FdProblem{reduce_sum_all(mul(y, sigmoid(x))), {x}};
  }, {random_values(5, 20)});
  run([](const auto& in) {
    auto x = Tensor<double>::leaf({3, 4}, in[0], true);
    return FdProblem{reduce_sum_all(log(add_scalar(mul(x, x), 0.5))), {x}};
  }, {random_values(6, 12)});
  run([](const auto& in) {
    auto x = Tensor<double>::leaf({3, 4}, in[0], true);
    return FdProblem{reduce_sum_all(sqrt(add_scalar(abs(x), 0.3))), {x}};
  }, {random_values(7, 12)});
  run([](const auto& in) {
    auto x = Tensor<double>::leaf({3, 4}, in[0], true);
    return FdProblem{reduce_sum_all(mul(sin(x), cos(clamp(x, -0.6, 0.6)))), {x}};
  }, {random_values(8, 12)});
  run([](const auto& in) {
    auto a = Tensor<double>::leaf({4, 5}, in[0], true);
    auto b = Tensor<double>::leaf({5, 6}, in[1], true);
    auto c = Tensor<double>::leaf({6}, in[2], true);
    return FdProblem{reduce_sum_all(gelu(affine(matmul(a, b), Tensor<double>::leaf({6, 6}, random_values(9, 36)), c))), {a, b, c}};
  }, {random_values(10, 20), random_values(11, 30), random_values(12, 6)});
  run([](const auto& in) {
    auto a = Tensor<double>::leaf({2, 3, 4}, in[0], true);
    auto b = Tensor<double>::leaf({2, 4, 5}, in[1], true);
    return FdProblem{reduce_sum_all(matmul(a, b)), {a, b}};
  }, {random_values(13, 24), random_values(14, 40)});
  run([](const auto& in) {
    auto x = Tensor<double>::leaf({4, 6}, in[0], true);
    auto cat = concat<double>({x, mul_scalar(x, -1.0)}, 1);
    auto t = transpose(slice(cat, 1, 2, 6), 0, 1);
    return FdProblem{reduce_sum_all(mul(reshape(t, {24}), reshape(t, {24}))), {x}};
  }, {random_values(15, 24)});
  run([](const auto& in) {
    auto x = Tensor<double>::leaf({5, 3}, in[0], true);
    auto g = gather_rows(x, {0, 4, 2, 2});
    return FdProblem{reduce_sum_all(mul(g, g)), {x}};
  }, {random_values(16, 15)});
  run([](const auto& in) {
    auto x = Tensor<double>::leaf({4, 5, 6}, in[0], true);
    auto y = add(reduce_sum(x, 1), mul(reduce_mean(x, 1), reduce_max(x, 1)));
    return FdProblem{reduce_sum_all(mul(y, y)), {x}};
  }, {random_values(17, 120)});
  run([](const auto& in) {
    auto src = Tensor<double>::leaf({6, 3}, in[0], true);
    auto dst = Tensor<double>::leaf({6, 3}, in[1], true);
    return FdProblem{frobenius_norm(rigid_fit(src, dst)), {src, dst}};
  }, {random_values(18, 18), random_values(19, 18, 0.2, 1.4)});
  run([](const auto& in) {
    auto six = Tensor<double>::leaf({6}, in[0], true);
    auto pts = Tensor<double>::leaf({5, 3}, in[1], true);
    auto t = pose_to_transform(six);
    return FdProblem{reduce_sum_all(mul(apply_transform(pts, rigid_inverse(t)), pts)), {six, pts}};
  }, {random_values(20, 6, -40.0, 40.0), random_values(21, 15)});
  return worst;
}

Criterion run_a1() {
  Criterion c{"A1"};
  const auto start = Clock::now();
  const double op_err = op_suite_max_rel_error();

  // full generator loss graph at N=16, frozen discrete structure
  const auto pair = build_pair<double>(ShapeSpec::canonical_composite(), 16, {0.0, 45.0}, {0.0, 0.8}, 0.0, 0.0, 31);
  NetworkConfig cfg;
  cfg.n_points = 16;
  cfg.knn_k = 4;
  auto params = init_generator_params<double>(cfg, 32);
  const auto da = init_discriminator_params<double>(33);
  const auto db = init_discriminator_params<double>(34);
  LossOptions<double> opts;
  opts.pdsac = {.m = 8, .k = 4, .seed = 35};
  const LossStructure frozen = build_pair_loss(pair, params, da, db, cfg, opts).structure;

  std::vector<std::vector<double>> inputs;
  for (const auto& [name, t] : params.items) inputs.push_back(t.values());
  auto build = [&](const std::vector<std::vector<double>>& in) {
    ParamSet<double> p;
    std::size_t i = 0;
    for (const auto& [name, t] : params.items) p.add(name, t.shape(), in[i++]);
    const auto graph = build_pair_loss(pair, p, da, db, cfg, opts, &frozen);
    test::FdProblem problem;
    problem.loss = graph.total;
    for (auto& [name, t] : p.items) problem.leaves.push_back(t);
    return problem;
  };
  double graph_err = 0.0;
  for (const std::uint64_t seed : {1, 2, 3, 4, 5})
    graph_err = std::max(graph_err, test::fd_directional(build, inputs, seed, 1e-6));
  // per-coordinate probes on a deterministic subsample of every tensor;
  // coordinates sitting on relu/max kinks are excluded (see fd_check)
  const auto coord = test::fd_check(build, inputs, 1e-5, 1501, 1e-4, true);
  graph_err = std::max(graph_err, coord.max_rel_error);

  const double elapsed = seconds_since(start);
  const bool coverage_ok = coord.checked >= 100 && coord.skipped_nonsmooth * 4 < coord.checked;
  c.pass = op_err < 1e-4 && graph_err < 1e-3 && elapsed < 120.0 && coverage_ok;
  std::ostringstream os;
  os << "op max rel err " << op_err << ", full-graph max rel err " << graph_err << " ("
     << coord.checked << " coords, " << coord.skipped_nonsmooth << " kink-skipped), runtime "
     << elapsed << " s";
  c.detail = os.str();
  return c;
}

// ---------------------------------------------------------------------------

Criterion run_a2() {
  Criterion c{"A2"};
  double worst = 0.0;
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index n = Eigen::Index(3 + rng.uniform_index(5));
    const auto x = test::random_cloud(std::uint64_t(trial) * 2 + 400, n);
    const auto y = test::random_cloud(std::uint64_t(trial) * 2 + 401, n);
    const auto fast = emd(x, y);

    std::vector<std::size_t> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), std::size_t(0));
    double best = std::numeric_limits<double>::infinity();
    do {
      double total = 0.0;
      for (Eigen::Index i = 0; i < n; ++i)
        total += (x.points.row(i) - y.points.row(Eigen::Index(perm[std::size_t(i)]))).norm();
      best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    worst = std::max(worst, std::abs(double(fast.cost) - best / double(n)));
  }
  c.pass = worst < 1e-9;
  c.detail = "max |emd - factorial oracle| = " + std::to_string(worst);
  return c;
}

Criterion run_a3() {
  Criterion c{"A3"};
  double worst_re = 0.0, worst_te = 0.0;
  const auto src = test::random_points(50, 200);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto [t, pose] = random_transform<double>(seed + 500, {0.0, 45.0}, {0.0, 0.8});
    PointMatrix<double> dst = src * t.rotation();
    dst.rowwise() += t.translation();
    const auto est = kabsch<double>(src, dst);
    worst_re = std::max(worst_re, rotation_error(est, t));
    worst_te = std::max(worst_te, translation_error(est, t));
  }
  c.pass = worst_re < 1e-6 && worst_te < 1e-9;
  std::ostringstream os;
  os << "worst RE " << worst_re << " deg, worst TE " << worst_te;
  c.detail = os.str();
  return c;
}

Criterion run_a4() {
  Criterion c{"A4"};
  int success = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    Rng rng(mix_seed(60, trial));
    PointMatrix<double> src(1024, 3);
    for (Eigen::Index i = 0; i < 1024; ++i)
      for (Eigen::Index j = 0; j < 3; ++j) src(i, j) = rng.uniform(0.0, 1.0);
    const auto [t, pose] = random_transform<double>(mix_seed(61, trial), {0.0, 45.0}, {0.0, 0.8});
    CorrespondenceSet<double> corr;
    corr.src = src;
    corr.dst = src * t.rotation();
    corr.dst.rowwise() += t.translation();
    for (Eigen::Index i = 0; i < 307; ++i) {  // 30% outliers
      const Eigen::Index row = Eigen::Index(rng.uniform_index(1024));
      for (Eigen::Index j = 0; j < 3; ++j) corr.dst(row, j) = rng.uniform(0.0, 1.0);
    }
    const auto result = pdsac(corr, {.m = 512, .k = 4, .seed = trial});
    if (rotation_error(result.transform, t) < 0.5 && translation_error(result.transform, t) < 0.005)
      ++success;
  }
  c.pass = success >= 95;
  c.detail = "success rate " + std::to_string(success) + "/100";
  return c;
}

Criterion run_a5() {
  Criterion c{"A5"};
  const auto start = Clock::now();
  const auto bench = bench_consensus(1024, 512, 0.3, 100, 70);
  const double elapsed = seconds_since(start);
  c.pass = bench.pdsac_mean_wall_ms <= bench.ransac_mean_wall_ms &&
           bench.pdsac_mean_re <= bench.ransac_mean_re + 0.2 && elapsed < 300.0;
  std::ostringstream os;
  os << "pdsac " << bench.pdsac_mean_wall_ms << " ms / " << bench.pdsac_mean_re << " deg, ransac "
     << bench.ransac_mean_wall_ms << " ms / " << bench.ransac_mean_re << " deg, bench runtime "
     << elapsed << " s";
  c.detail = os.str();
  return c;
}

// ---------------------------------------------------------------------------
// A6: toy end-to-end training

Criterion run_a6() {
  Criterion c{"A6"};
  const auto start = Clock::now();

  const auto pair = build_pair<double>(ShapeSpec::canonical_composite(), 256, {0.0, 45.0}, {0.0, 0.8},
                                       0.0, 0.0, 97);
  const double initial_cd = chamfer(pair.a, pair.b);

  TrainConfig<double> config;
  config.epochs = 10000;  // one pair per batch draw: 10000 global steps
  config.batch_size = 4;
  config.n_points = 256;
  config.learning_rate = 1e-4;
  config.seed = 1;
  config.schedule = {.generator_every = 5, .discriminator_every = 1};
  config.pdsac = {.m = 128, .k = 4, .seed = 0};
  config.knn_k = 20;
  config.checkpoint_every = 2000;
  config.workers = 0;

  const fs::path out_dir = fs::temp_directory_path() / "genreg_acceptance_a6";
  fs::remove_all(out_dir);
  const auto result = train(config, {pair}, out_dir);

  const NetworkConfig net = config.network();
  const auto gen = generator_forward(pair.a, pair.b, result.generator, net);
  const double cd_gen = chamfer(gen.a_generated, gen.b_generated);
  const double cd_a_to_b = chamfer(gen.a_generated, pair.b);

  double lt_at_100 = 0.0, lt_final = result.history.back().loss.transform;
  for (const auto& row : result.history)
    if (row.step == 100) lt_at_100 = row.loss.transform;

  PdsacOptions reg_opts{.m = 512, .k = 4, .seed = 7};
  const auto reg = genreg_register(pair.a, pair.b, result.generator, net, reg_opts);
  const double re = rotation_error(reg.t_source_to_target, pair.t_gt);

  const double elapsed = seconds_since(start);
  const bool cd_ok = cd_gen < 0.05;
  const bool closer_ok = cd_a_to_b < initial_cd;
  const bool lt_ok = lt_final < 0.25 * lt_at_100;
  const bool re_ok = re < 5.0;
  c.pass = cd_ok && closer_ok && lt_ok && re_ok && elapsed < 7200.0;
  std::ostringstream os;
  os << "CD(A_g,B_g) " << cd_gen << " (<0.05 " << (cd_ok ? "ok" : "FAIL") << "), CD(A_g,B) " << cd_a_to_b
     << " vs initial " << initial_cd << " (" << (closer_ok ? "ok" : "FAIL") << "), l_T " << lt_final
     << " vs step-100 " << lt_at_100 << " (" << (lt_ok ? "ok" : "FAIL") << "), RE " << re << " deg ("
     << (re_ok ? "ok" : "FAIL") << "), runtime " << elapsed << " s";
  c.detail = os.str();
  return c;
}

// ---------------------------------------------------------------------------

Criterion run_a7() {
  Criterion c{"A7"};
  // rigid generations zero the relative loss
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = test::random_cloud(seed + 700, 64);
    const auto b = test::random_cloud(seed + 800, 64);
    const auto a_gen = apply(a, test::random_pose(seed + 900));
    const auto b_gen = apply(b, test::random_pose(seed + 1000));
    const double val = loss_relative_graph(Tensor<double>::from_points(a.points),
                                           Tensor<double>::from_points(a_gen.points),
                                           Tensor<double>::from_points(b.points),
                                           Tensor<double>::from_points(b_gen.points))
                           .value();
    worst = std::max(worst, val);
  }

  // decomposition identity over the logged steps of a short real run
  const auto pair = build_pair<double>(ShapeSpec::canonical_composite(), 32, {0.0, 45.0}, {0.0, 0.8}, 0.0, 0.0, 71);
  TrainConfig<double> config;
  config.epochs = 100;
  config.batch_size = 2;
  config.n_points = 32;
  config.seed = 5;
  config.pdsac = {.m = 16, .k = 4, .seed = 0};
  config.knn_k = 6;
  config.checkpoint_every = 0;
  const fs::path out_dir = fs::temp_directory_path() / "genreg_acceptance_a7";
  fs::remove_all(out_dir);
  const auto result = train(config, {pair}, out_dir);
  double worst_identity = 0.0;
  for (const auto& row : result.history)
    worst_identity = std::max(worst_identity,
                              std::abs(row.loss.total - (row.loss.abs + row.loss.relative + row.loss.cyc +
                                                         0.01 * row.loss.adv + row.loss.transform)));
  c.pass = worst < 1e-9 && worst_identity < 1e-9 && result.history.size() == 20;
  std::ostringstream os;
  os << "max relative-loss on rigid generations " << worst << ", max decomposition deviation "
     << worst_identity << " over " << result.history.size() << " logged steps";
  c.detail = os.str();
  return c;
}

struct CliRun {
  int exit_code = -1;
  std::string output;
};

CliRun run_cli(const std::string& args) {
  const fs::path dir = fs::temp_directory_path() / "genreg_acceptance_cli";
  fs::create_directories(dir);
  const std::string out_file = (dir / "out.txt").string();
  const int raw = std::system((std::string(GENREG_CLI_PATH) + " " + args + " > " + out_file + " 2>&1").c_str());
  CliRun r;
  r.exit_code = raw < 0 ? raw : WEXITSTATUS(raw);
  std::ifstream f(out_file);
  r.output.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  return r;
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

std::string mask_wall_column(const std::string& csv, std::size_t column) {
  std::istringstream in(csv);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cols;
    std::istringstream ls(line);
    std::string col;
    while (std::getline(ls, col, ',')) cols.push_back(col);
    if (cols.size() > column) cols[column] = "-";
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << "\n";
  }
  return out.str();
}

Criterion run_a8() {
  Criterion c{"A8"};
  const fs::path work = fs::temp_directory_path() / "genreg_acceptance_a8";
  fs::remove_all(work);
  fs::create_directories(work);
  const fs::path config = work / "config.json";
  {
    std::ofstream out(config);
    out << R"({
  "seed": 9,
  "data": {"shape": "canonical_composite", "n_points": 32, "n_pairs": 2,
           "rot_range_deg": [0, 45], "trans_range": [0, 0.8]},
  "train": {"epochs": 2, "batch_size": 1, "n_points": 32, "seed": 3,
            "pdsac": {"m": 16, "k": 4}, "knn_k": 6, "checkpoint_every": 0},
  "eval": {"pdsac": {"m": 64, "k": 4}, "ransac": {"m": 64, "k": 4, "inlier_threshold": 0.02}}
})";
  }
  bool ok = true;
  std::string why;

  auto expect = [&](bool cond, const std::string& msg) {
    if (!cond && ok) {
      ok = false;
      why = msg;
    }
  };

  expect(run_cli("gen-data --config " + config.string() + " --out " + (work / "d1").string()).exit_code == 0,
         "gen-data failed");
  expect(run_cli("gen-data --config " + config.string() + " --out " + (work / "d2").string()).exit_code == 0,
         "gen-data rerun failed");
  expect(read_file(work / "d1" / "manifest.json") == read_file(work / "d2" / "manifest.json"),
         "gen-data manifests differ");
  expect(read_file(work / "d1" / "pair_0001_b.xyz") == read_file(work / "d2" / "pair_0001_b.xyz"),
         "gen-data clouds differ");

  expect(run_cli("train --config " + config.string() + " --data " + (work / "d1").string() + " --out " +
                 (work / "t1").string())
                 .exit_code == 0,
         "train failed");
  const std::string ckpt = (work / "t1" / "checkpoint_latest").string();
  expect(run_cli("eval --checkpoint " + ckpt + " --data " + (work / "d1").string() + " --out " +
                 (work / "e1").string() + " --seed 4 --workers 2")
                 .exit_code == 0,
         "eval failed");
  expect(run_cli("eval --checkpoint " + ckpt + " --data " + (work / "d1").string() + " --out " +
                 (work / "e2").string() + " --seed 4 --workers 1")
                 .exit_code == 0,
         "eval rerun failed");
  expect(mask_wall_column(read_file(work / "e1" / "report.csv"), 5) ==
             mask_wall_column(read_file(work / "e2" / "report.csv"), 5),
         "eval reports differ beyond timing");

  expect(run_cli("bench-consensus --n 128 --m 32 --trials 5 --seed 6 --out " + (work / "b1").string()).exit_code == 0,
         "bench failed");
  expect(run_cli("bench-consensus --n 128 --m 32 --trials 5 --seed 6 --out " + (work / "b2").string()).exit_code == 0,
         "bench rerun failed");
  expect(mask_wall_column(read_file(work / "b1" / "bench_consensus.csv"), 4) ==
             mask_wall_column(read_file(work / "b2" / "bench_consensus.csv"), 4),
         "bench tables differ beyond timing");

  c.pass = ok;
  c.detail = ok ? "gen-data, eval, bench-consensus byte-identical (timing masked)" : why;
  return c;
}

Criterion run_a9() {
  Criterion c{"A9"};
  int success = 0;
  bool monotone = true;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const auto cloud = sample_shape(ShapeSpec::canonical_composite(), 1024, mix_seed(90, trial));
    const auto normed = normalize_unit_box(cloud.cast<double>());
    const auto [t, pose] = random_transform<double>(mix_seed(91, trial), {0.0, 5.0}, {0.0, 0.05});
    const auto moved = apply(normed, t);
    const auto result = icp(normed, moved, 50, 1e-9);
    if (rotation_error(result.transform, t) < 0.1) ++success;
    for (std::size_t i = 1; i < result.rmse_history.size(); ++i)
      if (result.rmse_history[i] > result.rmse_history[i - 1] + 1e-12) monotone = false;
  }
  c.pass = success >= 95 && monotone;
  c.detail = "recovery " + std::to_string(success) + "/100, rmse monotone " + (monotone ? "yes" : "no");
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string filter = argc > 1 ? argv[1] : "";
  auto selected = [&](const std::string& id) {
    return filter.empty() || filter.find(id) != std::string::npos;
  };

  std::vector<std::pair<std::string, Criterion (*)()>> criteria = {
      {"A1", run_a1}, {"A2", run_a2}, {"A3", run_a3}, {"A4", run_a4}, {"A5", run_a5},
      {"A6", run_a6}, {"A7", run_a7}, {"A8", run_a8}, {"A9", run_a9}};

  int failures = 0;
  for (const auto& [id, fn] : criteria) {
    if (!selected(id)) continue;
    Criterion result;
    try {
      result = fn();
    } catch (const std::exception& e) {
      result.id = id;
      result.pass = false;
      result.detail = std::string("exception: ") + e.what();
    }
    std::cout << id << (result.pass ? " PASS " : " FAIL ") << result.detail << std::endl;
    if (!result.pass) ++failures;
  }
  return failures;
}
