// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <genreg/metrics.hpp>
#include <genreg/pointcloud_io.hpp>
#include <sstream>

using namespace genreg;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

CliResult run_cli(const std::string& args) {
  const fs::path dir = fs::temp_directory_path() / "genreg_cli_out";
  fs::create_directories(dir);
  const std::string out_file = (dir / "last_output.txt").string();
  const std::string cmd = std::string(GENREG_CLI_PATH) + " " + args + " > " + out_file + " 2>&1";
  const int raw = std::system(cmd.c_str());
  CliResult result;
  result.exit_code = raw < 0 ? raw : WEXITSTATUS(raw);
  std::ifstream f(out_file);
  result.output.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  return result;
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

// blank the wall_ms column (index 5) so timing noise is excluded
std::string mask_timing_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cols;
    std::istringstream ls(line);
    std::string col;
    while (std::getline(ls, col, ',')) cols.push_back(col);
    if (cols.size() == 7) cols[5] = "-";
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << "\n";
  }
  return out.str();
}

fs::path write_config(const std::string& name, Eigen::Index n_points, Eigen::Index n_pairs,
                      int epochs) {
  const fs::path dir = fs::temp_directory_path() / "genreg_cli_cfg";
  fs::create_directories(dir);
  const fs::path path = dir / name;
  std::ofstream out(path, std::ios::trunc);
  out << R"({
  "seed": 7,
  "data": {
    "shape": "canonical_composite",
    "n_points": )"
      << n_points << R"(,
    "n_pairs": )"
      << n_pairs << R"(,
    "rot_range_deg": [0, 45],
    "trans_range": [0, 0.8]
  },
  "train": {
    "epochs": )"
      << epochs << R"(,
    "batch_size": 1,
    "n_points": )"
      << n_points << R"(,
    "learning_rate": 1e-4,
    "seed": 3,
    "pdsac": {"m": 16, "k": 4},
    "knn_k": 6,
    "checkpoint_every": 0
  },
  "eval": {
    "pdsac": {"m": 64, "k": 4},
    "ransac": {"m": 64, "k": 4, "inlier_threshold": 0.02}
  }
})";
  return path;
}

const fs::path kWork = fs::temp_directory_path() / "genreg_cli_work";

struct Fixture {
  Fixture() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
  }
};

}  // namespace

TEST_CASE("gen-data is byte-deterministic for a fixed seed") {
  Fixture fixture;
  const auto config = write_config("det.json", 32, 2, 1);
  CHECK(run_cli("gen-data --config " + config.string() + " --out " + (kWork / "d1").string()).exit_code == 0);
  CHECK(run_cli("gen-data --config " + config.string() + " --out " + (kWork / "d2").string()).exit_code == 0);
  for (const char* name : {"manifest.json", "pair_0000_a.xyz", "pair_0001_b.xyz"})
    CHECK(read_file(kWork / "d1" / name) == read_file(kWork / "d2" / name));
}

TEST_CASE("train, eval, and register round trip through the CLI") {
  Fixture fixture;
  const auto config = write_config("roundtrip.json", 32, 2, 2);
  const auto data = (kWork / "data").string();
  const auto ckpt = (kWork / "train" / "checkpoint_latest").string();
  REQUIRE(run_cli("gen-data --config " + config.string() + " --out " + data).exit_code == 0);
  REQUIRE(run_cli("train --config " + config.string() + " --data " + data + " --out " +
                  (kWork / "train").string() + " --workers 2")
              .exit_code == 0);

  // two identical eval invocations agree byte for byte once timing is masked
  REQUIRE(run_cli("eval --checkpoint " + ckpt + " --data " + data + " --out " + (kWork / "e1").string() +
                  " --seed 5 --workers 2")
              .exit_code == 0);
  REQUIRE(run_cli("eval --checkpoint " + ckpt + " --data " + data + " --out " + (kWork / "e2").string() +
                  " --seed 5 --workers 1")
              .exit_code == 0);
  CHECK(mask_timing_csv(read_file(kWork / "e1" / "report.csv")) ==
        mask_timing_csv(read_file(kWork / "e2" / "report.csv")));
  CHECK(read_file(kWork / "e1" / "pair_0000_a_generated.xyz") ==
        read_file(kWork / "e2" / "pair_0000_a_generated.xyz"));

  // every report row's CD recomputes from the emitted clouds
  {
    std::istringstream csv(read_file(kWork / "e1" / "report.csv"));
    std::string line;
    std::getline(csv, line);  // header
    CHECK(line == "pair_id,method,cd,re_deg,te,wall_ms,residual");
    while (std::getline(csv, line)) {
      std::vector<std::string> cols;
      std::istringstream ls(line);
      std::string col;
      while (std::getline(ls, col, ',')) cols.push_back(col);
      REQUIRE(cols.size() == 7);
      const double cd = std::stod(cols[2]);
      char prefix[32];
      std::snprintf(prefix, sizeof(prefix), "pair_%04d", std::stoi(cols[0]));
      const auto b = read_xyz<double>(kWork / "data" / (std::string(prefix) + "_b.xyz"));
      double recomputed = 0.0;
      if (cols[1] == "genreg") {
        const auto ag = read_xyz<double>(kWork / "e1" / (std::string(prefix) + "_a_generated.xyz"));
        const auto bg = read_xyz<double>(kWork / "e1" / (std::string(prefix) + "_b_generated.xyz"));
        recomputed = chamfer(ag, bg);
      } else if (cols[1] == "icp") {
        const auto aligned = read_xyz<double>(kWork / "e1" / (std::string(prefix) + "_icp_aligned.xyz"));
        recomputed = chamfer(aligned, b);
      } else {
        const auto aligned = read_xyz<double>(kWork / "e1" / (std::string(prefix) + "_ransac_aligned.xyz"));
        recomputed = chamfer(aligned, b);
      }
      CHECK(std::abs(recomputed - cd) < 1e-6);  // clouds stored at 9 significant digits
    }
  }

  // register emits the generated clouds, the 16-number estimate, and metrics
  REQUIRE(run_cli("register --checkpoint " + ckpt + " --source " + (kWork / "data" / "pair_0000_a.xyz").string() +
                  " --target " + (kWork / "data" / "pair_0000_b.xyz").string() + " --out " +
                  (kWork / "reg").string())
              .exit_code == 0);
  CHECK(fs::exists(kWork / "reg" / "a_generated.xyz"));
  CHECK(fs::exists(kWork / "reg" / "b_generated.xyz"));
  CHECK(fs::exists(kWork / "reg" / "metrics.csv"));
  {
    std::ifstream tf(kWork / "reg" / "t_est.txt");
    double v;
    int count = 0;
    while (tf >> v) ++count;
    CHECK(count == 16);
  }
}

TEST_CASE("eval on an empty dataset exits zero with an empty report") {
  Fixture fixture;
  const auto config = write_config("empty.json", 32, 0, 1);
  const auto data = (kWork / "data0").string();
  REQUIRE(run_cli("gen-data --config " + config.string() + " --out " + data).exit_code == 0);

  // a checkpoint is still required; train on a one-pair throwaway dataset
  const auto config1 = write_config("empty_train.json", 32, 1, 1);
  REQUIRE(run_cli("gen-data --config " + config1.string() + " --out " + (kWork / "data1").string()).exit_code == 0);
  REQUIRE(run_cli("train --config " + config1.string() + " --data " + (kWork / "data1").string() +
                  " --out " + (kWork / "train0").string())
              .exit_code == 0);

  const auto result = run_cli("eval --checkpoint " + (kWork / "train0" / "checkpoint_latest").string() +
                              " --data " + data + " --out " + (kWork / "e0").string());
  CHECK(result.exit_code == 0);
  CHECK(read_file(kWork / "e0" / "report.csv") == "pair_id,method,cd,re_deg,te,wall_ms,residual\n");
}

TEST_CASE("config errors name the offending key") {
  Fixture fixture;
  const fs::path bad = kWork / "bad.json";
  {
    std::ofstream out(bad);
    out << R"({"seed": 1, "data": {"shape": "canonical_composite", "n_points": 32}})";
  }
  auto result = run_cli("gen-data --config " + bad.string() + " --out " + (kWork / "x").string());
  CHECK(result.exit_code != 0);
  CHECK(result.output.find("error: config:") != std::string::npos);
  CHECK(result.output.find("data.n_pairs") != std::string::npos);

  {
    std::ofstream out(bad);
    out << R"({"seed": 1, "data": {"shape": "canonical_composite", "n_points": 32, "n_pairs": 1, "typo_key": 3}})";
  }
  result = run_cli("gen-data --config " + bad.string() + " --out " + (kWork / "x").string());
  CHECK(result.exit_code != 0);
  CHECK(result.output.find("typo_key") != std::string::npos);
}

TEST_CASE("checkpoint compatibility failures are reported") {
  Fixture fixture;
  const auto config = write_config("compat.json", 32, 1, 1);
  const auto data = (kWork / "data").string();
  REQUIRE(run_cli("gen-data --config " + config.string() + " --out " + data).exit_code == 0);
  REQUIRE(run_cli("train --config " + config.string() + " --data " + data + " --out " +
                  (kWork / "train").string())
              .exit_code == 0);
  const auto ckpt = (kWork / "train" / "checkpoint_latest").string();

  // a config with a different hash is rejected
  const auto other = write_config("compat_other.json", 32, 3, 1);
  auto result = run_cli("eval --checkpoint " + ckpt + " --data " + data + " --out " +
                        (kWork / "e").string() + " --config " + other.string());
  CHECK(result.exit_code != 0);
  CHECK(result.output.find("error: compatibility:") != std::string::npos);

  // clouds of the wrong size are rejected by register
  {
    PointMatrix<double> pts(8, 3);
    for (Eigen::Index i = 0; i < 8; ++i) pts.row(i) = Vec3<double>(double(i), 0.5, 0.25);
    write_xyz(kWork / "small.xyz", PointCloud<double>(pts));
  }
  result = run_cli("register --checkpoint " + ckpt + " --source " + (kWork / "small.xyz").string() +
                   " --target " + (kWork / "small.xyz").string() + " --out " + (kWork / "r").string());
  CHECK(result.exit_code != 0);
  CHECK(result.output.find("error: compatibility:") != std::string::npos);
}

TEST_CASE("register near identity after training on identity pairs") {
  Fixture fixture;
  // identity pose ranges: both clouds sample the same surface in one frame
  const fs::path config = fs::temp_directory_path() / "genreg_cli_cfg" / "identity.json";
  fs::create_directories(config.parent_path());
  {
    std::ofstream out(config, std::ios::trunc);
    out << R"({
  "seed": 13,
  "data": {"shape": "canonical_composite", "n_points": 32, "n_pairs": 1,
           "rot_range_deg": [0, 0], "trans_range": [0, 0]},
  "train": {"epochs": 100, "batch_size": 2, "n_points": 32, "seed": 2,
            "pdsac": {"m": 16, "k": 4}, "knn_k": 6, "checkpoint_every": 0},
  "eval": {"pdsac": {"m": 128, "k": 4}}
})";
  }
  const auto data = (kWork / "data").string();
  REQUIRE(run_cli("gen-data --config " + config.string() + " --out " + data).exit_code == 0);
  REQUIRE(run_cli("train --config " + config.string() + " --data " + data + " --out " +
                  (kWork / "train").string() + " --workers 2")
              .exit_code == 0);
  // A = B input: both branches see the same pair, so the estimate sits at I
  REQUIRE(run_cli("register --checkpoint " + (kWork / "train" / "checkpoint_latest").string() +
                  " --source " + (kWork / "data" / "pair_0000_a.xyz").string() + " --target " +
                  (kWork / "data" / "pair_0000_a.xyz").string() + " --out " + (kWork / "reg").string() +
                  " --seed 3")
              .exit_code == 0);
  RigidTransform<double> t_est;
  {
    std::ifstream tf(kWork / "reg" / "t_est.txt");
    for (Eigen::Index i = 0; i < 4; ++i)
      for (Eigen::Index j = 0; j < 4; ++j) REQUIRE((tf >> t_est.matrix(i, j)));
  }
  CHECK(rotation_error(t_est, RigidTransform<double>::identity()) < 0.5);
  CHECK(translation_error(t_est, RigidTransform<double>::identity()) < 0.005);
}

TEST_CASE("f32 precision flag produces a close but distinct report") {
  Fixture fixture;
  const auto config = write_config("prec.json", 32, 1, 1);
  const auto data = (kWork / "data").string();
  REQUIRE(run_cli("gen-data --config " + config.string() + " --out " + data).exit_code == 0);
  REQUIRE(run_cli("train --config " + config.string() + " --data " + data + " --out " +
                  (kWork / "train").string())
              .exit_code == 0);
  const auto ckpt = (kWork / "train" / "checkpoint_latest").string();
  REQUIRE(run_cli("eval --checkpoint " + ckpt + " --data " + data + " --out " + (kWork / "f64").string() +
                  " --seed 3 --methods genreg")
              .exit_code == 0);
  REQUIRE(run_cli("eval --checkpoint " + ckpt + " --data " + data + " --out " + (kWork / "f32").string() +
                  " --seed 3 --methods genreg --precision f32")
              .exit_code == 0);
  auto parse_cd = [](const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    std::getline(in, line);
    const auto first = line.find(',', line.find(',') + 1);
    return std::stod(line.substr(first + 1));
  };
  const double cd64 = parse_cd(read_file(kWork / "f64" / "report.csv"));
  const double cd32 = parse_cd(read_file(kWork / "f32" / "report.csv"));
  CHECK(std::abs(cd64 - cd32) < 1e-4);
}
