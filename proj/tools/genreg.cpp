// SPDX-License-Identifier: Apache-2.0
//
// genreg command-line harness: dataset generation, training, registration,
// evaluation, and the consensus benchmark.

#include <CLI11.hpp>
#include <filesystem>
#include <genreg/config.hpp>
#include <genreg/datagen.hpp>
#include <genreg/evaluate.hpp>
#include <genreg/pointcloud_io.hpp>
#include <genreg/training.hpp>
#include <iostream>

namespace fs = std::filesystem;
using namespace genreg;

namespace {

struct CommonFlags {
  std::uint64_t seed = 0;
  bool seed_set = false;
  int workers = 0;
  std::string precision = "f64";
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--seed", flags.seed, "Root seed for all randomness")->each([&flags](const std::string&) {
    flags.seed_set = true;
  });
  cmd->add_option("--workers", flags.workers, "Worker threads (0 = hardware; GENREG_WORKERS overrides)");
  cmd->add_option("--precision", flags.precision, "Numeric precision for inference paths")
      ->check(CLI::IsMember({"f32", "f64"}));
}

std::vector<PairSample<double>> generate_pairs(const Config& config, std::uint64_t seed) {
  std::vector<PairSample<double>> pairs(std::size_t(config.data.n_pairs));
  for (std::size_t i = 0; i < pairs.size(); ++i)
    pairs[i] = build_pair<double>(config.data.shape, config.data.n_points, config.data.rot_range_deg,
                                  config.data.trans_range, config.data.noise_sigma,
                                  config.data.partial_fraction, mix_seed(seed, 0xDA7A + i));
  return pairs;
}

void check_hash(const std::string& checkpoint_hash, const std::string& config_hash) {
  if (!checkpoint_hash.empty() && !config_hash.empty() && checkpoint_hash != config_hash)
    throw CompatibilityError("checkpoint was trained under config hash " + checkpoint_hash +
                             " but --config hashes to " + config_hash);
}

template <typename S>
int run_register(const fs::path& checkpoint_path, const fs::path& source_path, const fs::path& target_path,
                 const fs::path& out_dir, const CommonFlags& flags, const std::string& config_path) {
  auto ckpt = load_checkpoint<S>(checkpoint_path);
  if (!config_path.empty()) check_hash(ckpt.config_hash, load_config(config_path).config_hash);
  NetworkConfig cfg;
  cfg.n_points = ckpt.n_points;
  const auto a = read_point_cloud<S>(source_path);
  const auto b = read_point_cloud<S>(target_path);

  PdsacOptions opts{.m = 512, .k = 4, .seed = mix_seed(flags.seed, 0x6E), .workers = flags.workers};
  const auto result = genreg_register(a, b, ckpt.section("generator"), cfg, opts);

  fs::create_directories(out_dir);
  write_xyz(out_dir / "a_generated.xyz", result.a_generated);
  write_xyz(out_dir / "b_generated.xyz", result.b_generated);
  {
    std::ofstream tf(out_dir / "t_est.txt", std::ios::trunc);
    char buf[64];
    for (Eigen::Index i = 0; i < 4; ++i) {
      for (Eigen::Index j = 0; j < 4; ++j) {
        std::snprintf(buf, sizeof(buf), "%.17g", double(result.t_source_to_target.matrix(i, j)));
        tf << buf << (j == 3 ? "" : " ");
      }
      tf << "\n";
    }
  }
  RegistrationReport report;
  ReportRow row;
  row.pair_id = "0";
  row.method = "genreg";
  row.cd = double(chamfer(result.a_generated, result.b_generated));
  row.has_gt = false;
  row.wall_ms = result.wall_ms;
  row.residual = double(result.residual);
  report.per_pair.push_back(row);
  report.hardware = hardware_summary();
  report.compute_aggregates();
  report.write_csv(out_dir / "metrics.csv");
  report.write_json(out_dir / "metrics.json");
  return 0;
}

template <typename S>
int run_eval(const fs::path& checkpoint_path, const fs::path& data_dir, const fs::path& out_dir,
             const EvalMethods& methods, const CommonFlags& flags, const std::string& config_path) {
  auto ckpt = load_checkpoint<S>(checkpoint_path);
  Config config;
  if (!config_path.empty()) {
    config = load_config(config_path);
    check_hash(ckpt.config_hash, config.config_hash);
  }
  NetworkConfig cfg;
  cfg.n_points = ckpt.n_points;

  const auto pairs = load_dataset<S>(data_dir);
  for (const auto& pair : pairs)
    if (pair.a.size() != ckpt.n_points || pair.b.size() != ckpt.n_points)
      throw CompatibilityError("eval: dataset pair size does not match checkpoint n_points=" +
                               std::to_string(ckpt.n_points));

  fs::create_directories(out_dir);
  const auto& params = ckpt.section("generator");
  std::vector<std::vector<ReportRow>> rows(pairs.size());
  std::vector<PairArtifacts<S>> artifacts(pairs.size());
  parallel_for(pairs.size(), flags.workers, [&](std::size_t i) {
    rows[i] = evaluate_pair(pairs[i], std::to_string(i), params, cfg, config.eval, methods,
                            mix_seed(flags.seed, i), &artifacts[i]);
  });

  RegistrationReport report;
  report.hardware = hardware_summary();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    for (const auto& row : rows[i]) report.per_pair.push_back(row);
    const auto& art = artifacts[i];
    char prefix[32];
    std::snprintf(prefix, sizeof(prefix), "pair_%04zu", i);
    if (art.has_genreg) {
      write_xyz(out_dir / (std::string(prefix) + "_a_generated.xyz"), art.a_generated);
      write_xyz(out_dir / (std::string(prefix) + "_b_generated.xyz"), art.b_generated);
    }
    if (art.has_icp) write_xyz(out_dir / (std::string(prefix) + "_icp_aligned.xyz"), art.icp_aligned);
    if (art.has_ransac)
      write_xyz(out_dir / (std::string(prefix) + "_ransac_aligned.xyz"), art.ransac_aligned);
  }
  report.compute_aggregates();
  report.write_csv(out_dir / "report.csv");
  report.write_json(out_dir / "report.json");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"genreg: generative point cloud registration laboratory"};
  app.require_subcommand(1);

  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a pair dataset from a config");
  std::string gen_config, gen_out;
  CommonFlags gen_flags;
  gen_cmd->add_option("--config", gen_config, "Config JSON path")->required();
  gen_cmd->add_option("--out", gen_out, "Output dataset directory")->required();
  add_common(gen_cmd, gen_flags);

  auto* train_cmd = app.add_subcommand("train", "Train the generator and discriminators");
  std::string train_config, train_data, train_out;
  CommonFlags train_flags;
  train_cmd->add_option("--config", train_config, "Config JSON path")->required();
  train_cmd->add_option("--data", train_data, "Dataset directory from gen-data")->required();
  train_cmd->add_option("--out", train_out, "Output directory for checkpoints and loss history")->required();
  add_common(train_cmd, train_flags);

  auto* reg_cmd = app.add_subcommand("register", "Register one cloud pair with a trained checkpoint");
  std::string reg_ckpt, reg_a, reg_b, reg_out, reg_config;
  CommonFlags reg_flags;
  reg_cmd->add_option("--checkpoint", reg_ckpt, "Checkpoint prefix (without .json/.bin)")->required();
  reg_cmd->add_option("--source", reg_a, "Source cloud path (.xyz or .ply)")->required();
  reg_cmd->add_option("--target", reg_b, "Target cloud path (.xyz or .ply)")->required();
  reg_cmd->add_option("--out", reg_out, "Output directory")->required();
  reg_cmd->add_option("--config", reg_config, "Optional config JSON; its hash must match the checkpoint");
  add_common(reg_cmd, reg_flags);

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate methods over a dataset");
  std::string eval_ckpt, eval_data, eval_out, eval_methods = "genreg,icp,ransac-on-genreg", eval_config;
  CommonFlags eval_flags;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint prefix")->required();
  eval_cmd->add_option("--data", eval_data, "Dataset directory")->required();
  eval_cmd->add_option("--out", eval_out, "Output directory for report.csv/report.json")->required();
  eval_cmd->add_option("--methods", eval_methods, "Comma list: genreg,icp,ransac-on-genreg");
  eval_cmd->add_option("--config", eval_config, "Optional config JSON; its hash must match the checkpoint");
  add_common(eval_cmd, eval_flags);

  auto* bench_cmd = app.add_subcommand("bench-consensus", "PDSAC vs RANSAC accuracy/timing table");
  Eigen::Index bench_n = 1024;
  std::size_t bench_m = 512, bench_trials = 100;
  double bench_outliers = 0.3;
  std::string bench_out;
  CommonFlags bench_flags;
  bench_cmd->add_option("--n", bench_n, "Correspondences per trial");
  bench_cmd->add_option("--m", bench_m, "Hypothesis budget for both methods");
  bench_cmd->add_option("--outlier-fraction", bench_outliers, "Fraction of dst rows replaced by outliers");
  bench_cmd->add_option("--trials", bench_trials, "Trial count");
  bench_cmd->add_option("--out", bench_out, "Output directory")->required();
  add_common(bench_cmd, bench_flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_cmd->parsed()) {
      auto config = load_config(gen_config);
      const std::uint64_t seed = gen_flags.seed_set ? gen_flags.seed : config.seed;
      const auto pairs = generate_pairs(config, seed);
      write_dataset(fs::path(gen_out), pairs);
      std::cout << "wrote " << pairs.size() << " pairs to " << gen_out << "\n";
      return 0;
    }
    if (train_cmd->parsed()) {
      auto config = load_config(train_config);
      if (train_flags.seed_set) config.train.seed = train_flags.seed;
      config.train.workers = train_flags.workers;
      const auto dataset = load_dataset<double>(train_data);
      const auto result = train(config.train, dataset, fs::path(train_out));
      std::cout << "trained " << result.total_steps << " steps; history rows " << result.history.size()
                << "; final total "
                << (result.history.empty() ? 0.0 : double(result.history.back().loss.total)) << "\n";
      return 0;
    }
    if (reg_cmd->parsed()) {
      if (reg_flags.precision == "f32")
        return run_register<float>(reg_ckpt, reg_a, reg_b, reg_out, reg_flags, reg_config);
      return run_register<double>(reg_ckpt, reg_a, reg_b, reg_out, reg_flags, reg_config);
    }
    if (eval_cmd->parsed()) {
      const auto methods = EvalMethods::parse(eval_methods);
      if (eval_flags.precision == "f32")
        return run_eval<float>(eval_ckpt, eval_data, eval_out, methods, eval_flags, eval_config);
      return run_eval<double>(eval_ckpt, eval_data, eval_out, methods, eval_flags, eval_config);
    }
    if (bench_cmd->parsed()) {
      const auto bench = bench_consensus(bench_n, bench_m, bench_outliers, bench_trials,
                                         bench_flags.seed, bench_flags.workers);
      fs::create_directories(bench_out);
      write_bench_csv(fs::path(bench_out) / "bench_consensus.csv", bench);
      {
        std::ofstream jf(fs::path(bench_out) / "bench_consensus.json", std::ios::trunc);
        jf << bench_to_json(bench).dump(2) << "\n";
      }
      std::cout << "pdsac: re=" << bench.pdsac_mean_re << " te=" << bench.pdsac_mean_te
                << " wall_ms=" << bench.pdsac_mean_wall_ms << "\n"
                << "ransac: re=" << bench.ransac_mean_re << " te=" << bench.ransac_mean_te
                << " wall_ms=" << bench.ransac_mean_wall_ms << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: parse: " << e.what() << "\n";
    return 1;
  } catch (const CompatibilityError& e) {
    std::cerr << "error: compatibility: " << e.what() << "\n";
    return 1;
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: training-diverged: " << e.what() << "\n";
    return 1;
  } catch (const SizeMismatch& e) {
    std::cerr << "error: size-mismatch: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "error: shape: " << e.what() << "\n";
    return 1;
  } catch (const DegenerateConfiguration& e) {
    std::cerr << "error: degenerate: " << e.what() << "\n";
    return 1;
  } catch (const EstimationFailure& e) {
    std::cerr << "error: estimation: " << e.what() << "\n";
    return 1;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: invalid-argument: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
