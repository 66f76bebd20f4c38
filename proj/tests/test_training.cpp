// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <genreg/training.hpp>

#include "fd_check.hpp"
#include "test_support.hpp"

using namespace genreg;
namespace fs = std::filesystem;

namespace {

PairSample<double> toy_pair(Eigen::Index n, std::uint64_t seed) {
  return build_pair<double>(ShapeSpec::canonical_composite(), n, {0.0, 45.0}, {0.0, 0.8}, 0.0, 0.0, seed);
}

double emd_mean(const PointCloud<double>& x, const PointCloud<double>& y) {
  return emd(x, y).cost;
}

}  // namespace

TEST_CASE("loss_absolute matches the EMD oracle and its trivial cases") {
  const auto a = test::random_cloud(1, 5);
  const auto b = test::random_cloud(2, 5);
  LossOptions<double> opts;

  // perfectly swapped generations zero the loss
  const auto zero = loss_absolute_graph(Tensor<double>::from_points(a.points),
                                        Tensor<double>::from_points(b.points),
                                        Tensor<double>::from_points(b.points),
                                        Tensor<double>::from_points(a.points), opts);
  CHECK(zero.value() == doctest::Approx(0.0));

  const auto a_gen = test::random_cloud(3, 5);
  const auto b_gen = test::random_cloud(4, 5);
  const auto loss = loss_absolute_graph(Tensor<double>::from_points(a.points),
                                        Tensor<double>::from_points(b.points),
                                        Tensor<double>::from_points(a_gen.points),
                                        Tensor<double>::from_points(b_gen.points), opts);
  CHECK(loss.value() == doctest::Approx(emd_mean(a, b_gen) + emd_mean(b, a_gen)).epsilon(1e-12));

  // symmetric under the joint swap (A<->B, A_g<->B_g)
  const auto swapped = loss_absolute_graph(Tensor<double>::from_points(b.points),
                                           Tensor<double>::from_points(a.points),
                                           Tensor<double>::from_points(b_gen.points),
                                           Tensor<double>::from_points(a_gen.points), opts);
  CHECK(swapped.value() == doctest::Approx(loss.value()).epsilon(1e-12));
}

TEST_CASE("loss_relative trivial cases, isometry, and scale arithmetic") {
  const auto a = test::random_cloud(11, 24);
  const auto b = test::random_cloud(12, 24);
  auto t = [](const PointCloud<double>& pc) { return Tensor<double>::from_points(pc.points); };

  CHECK(loss_relative_graph(t(a), t(a), t(b), t(b)).value() == doctest::Approx(0.0));

  // rigid generations are invisible to the edge sets
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto moved_a = apply(a, test::random_pose(seed));
    const auto moved_b = apply(b, test::random_pose(seed + 100));
    CHECK(loss_relative_graph(t(a), t(moved_a), t(b), t(moved_b)).value() < 1e-9);
  }

  // doubling A_g doubles its edges: the A-term equals mean(E_A)
  PointCloud<double> doubled = a;
  doubled.points *= 2.0;
  const auto edges = edge_set(a);
  const double mean_edge =
      std::accumulate(edges.lengths.begin(), edges.lengths.end(), 0.0) / double(edges.lengths.size());
  const double val = loss_relative_graph(t(a), t(doubled), t(b), t(b)).value();
  CHECK(val == doctest::Approx(mean_edge).epsilon(1e-9));
}

TEST_CASE("adversarial losses at zero discriminator weights") {
  auto da = init_discriminator_params<double>(1);
  auto db = init_discriminator_params<double>(2);
  for (auto* d : {&da, &db})
    for (auto& [name, tensor] : d->items)
      std::fill(tensor.mutable_values().begin(), tensor.mutable_values().end(), 0.0);

  const auto a = test::random_cloud(21, 16);
  const auto b = test::random_cloud(22, 16);
  const auto a_gen = test::random_cloud(23, 16);
  const auto b_gen = test::random_cloud(24, 16);
  auto t = [](const PointCloud<double>& pc) { return Tensor<double>::from_points(pc.points); };

  LossOptions<double> opts;
  const double disc = loss_discriminator_graph(t(a), t(b), t(a_gen), t(b_gen), da, db, opts).value();
  CHECK(disc == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  const double gen = loss_adversarial_g_graph(t(a_gen), t(b_gen), da, db, opts).value();
  CHECK(gen == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // minimax form at D = 0.5: 0.5 * 2 * log(0.5) = -log 2
  opts.non_saturating = false;
  const double minimax = loss_adversarial_g_graph(t(a_gen), t(b_gen), da, db, opts).value();
  CHECK(minimax == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("raising the real-branch response lowers the real-only disc term") {
  auto da = init_discriminator_params<double>(3);
  const auto a = test::random_cloud(31, 32);
  const auto before = -std::log(discriminator_forward(a, da));
  da.at("fc3.b").mutable_values()[0] += 0.5;
  const auto after = -std::log(discriminator_forward(a, da));
  CHECK(after < before);
}

TEST_CASE("loss_transform values and right-composition invariance") {
  const auto t = test::random_pose(41);
  CHECK(loss_transform(t, t) == doctest::Approx(0.0));

  EulerPose<double> shift;
  shift.translation << 0.3, 0.0, 0.0;
  const auto t_shift = euler_to_transform(shift);
  CHECK(loss_transform(t_shift, RigidTransform<double>::identity()) == doctest::Approx(0.3));

  Rng rng(42);
  for (int i = 0; i < 100; ++i) {
    const auto t1 = test::random_pose(std::uint64_t(i) + 50);
    const auto t2 = test::random_pose(std::uint64_t(i) + 150);
    const auto c = test::random_pose(std::uint64_t(i) + 250);
    const double base = loss_transform(t1, t2);
    CHECK(loss_transform(compose(t1, c), compose(t2, c)) == doctest::Approx(base).epsilon(1e-9));
  }

  // graph version agrees with the scalar version
  const auto t_est = test::random_pose(401);
  const auto t_gt = test::random_pose(402);
  std::vector<double> vals(16);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) vals[std::size_t(i * 4 + j)] = t_est.matrix(i, j);
  CHECK(loss_transform_graph(Tensor<double>::leaf({4, 4}, vals), t_gt).value() ==
        doctest::Approx(loss_transform(t_est, t_gt)).epsilon(1e-12));
}

TEST_CASE("total_loss weighting") {
  const auto zero = total_loss(0.0, 0.0, 0.0, 0.0, 0.0);
  CHECK(zero.total == 0.0);
  const auto adv_only = total_loss(0.0, 0.0, 0.0, 1.0, 0.0);
  CHECK(adv_only.total == doctest::Approx(0.01));
  const auto mixed = total_loss(0.5, 0.25, 0.125, 2.0, 0.0625);
  CHECK(mixed.total == doctest::Approx(0.5 + 0.25 + 0.125 + 0.02 + 0.0625).epsilon(1e-15));
}

TEST_CASE("pair loss is finite and differentiable at init") {
  const auto pair = toy_pair(16, 7);
  NetworkConfig cfg;
  cfg.n_points = 16;
  cfg.knn_k = 4;
  const auto gen = init_generator_params<double>(cfg, 8);
  const auto da = init_discriminator_params<double>(9);
  const auto db = init_discriminator_params<double>(10);
  LossOptions<double> opts;
  opts.pdsac = {.m = 8, .k = 4, .seed = 3};
  const auto graph = build_pair_loss(pair, gen, da, db, cfg, opts);
  CHECK(std::isfinite(graph.breakdown.total));
  CHECK(graph.breakdown.abs >= 0.0);
  CHECK(graph.breakdown.relative >= 0.0);
  CHECK(graph.breakdown.cyc >= 0.0);
  CHECK(graph.breakdown.transform >= 0.0);
  CHECK(graph.breakdown.total ==
        doctest::Approx(graph.breakdown.abs + graph.breakdown.relative + graph.breakdown.cyc +
                        0.01 * graph.breakdown.adv + graph.breakdown.transform)
            .epsilon(1e-9));
  graph.total.backward();
  double grad_mass = 0.0;
  for (const auto& [name, tensor] : gen.items)
    for (const double g : tensor.grad()) grad_mass += std::abs(g);
  CHECK(grad_mass > 0.0);
}

TEST_CASE("full generator objective matches finite differences (frozen structure)") {
  const auto pair = toy_pair(16, 17);
  NetworkConfig cfg;
  cfg.n_points = 16;
  cfg.knn_k = 4;
  auto base_params = init_generator_params<double>(cfg, 18);
  const auto da = init_discriminator_params<double>(19);
  const auto db = init_discriminator_params<double>(20);
  LossOptions<double> opts;
  opts.pdsac = {.m = 8, .k = 4, .seed = 5};

  // capture the discrete structure once, then differentiate the frozen loss
  const auto first = build_pair_loss(pair, base_params, da, db, cfg, opts);
  const LossStructure frozen = first.structure;

  std::vector<std::vector<double>> inputs;
  for (const auto& [name, t] : base_params.items) inputs.push_back(t.values());

  auto build = [&](const std::vector<std::vector<double>>& in) {
    ParamSet<double> p;
    std::size_t i = 0;
    for (const auto& [name, t] : base_params.items) p.add(name, t.shape(), in[i++]);
    const auto graph = build_pair_loss(pair, p, da, db, cfg, opts, &frozen);
    test::FdProblem problem;
    problem.loss = graph.total;
    for (auto& [name, t] : p.items) problem.leaves.push_back(t);
    return problem;
  };

  for (const std::uint64_t seed : {1, 2, 3, 4})
    CHECK(test::fd_directional(build, inputs, seed, 1e-6) < 1e-3);
}

TEST_CASE("short training run: determinism, checkpoints, loss identity") {
  const fs::path dir1 = fs::temp_directory_path() / "genreg_train_t1";
  const fs::path dir2 = fs::temp_directory_path() / "genreg_train_t2";
  fs::remove_all(dir1);
  fs::remove_all(dir2);

  std::vector<PairSample<double>> dataset{toy_pair(16, 100)};
  TrainConfig<double> config;
  config.epochs = 10;  // 10 global steps at batch >= dataset size
  config.batch_size = 2;
  config.n_points = 16;
  config.knn_k = 4;
  config.learning_rate = 1e-4;
  config.seed = 11;
  config.pdsac = {.m = 8, .k = 4, .seed = 0};
  config.checkpoint_every = 5;
  config.workers = 2;

  const auto r1 = train(config, dataset, dir1);
  const auto r2 = train(config, dataset, dir2);
  CHECK(r1.total_steps == 10);
  REQUIRE(r1.history.size() == 2);  // generator steps at 0 and 5

  // fixed seed, two runs: identical loss curves and identical parameters
  for (std::size_t i = 0; i < r1.history.size(); ++i) {
    CHECK(r1.history[i].loss.total == r2.history[i].loss.total);
    CHECK(r1.history[i].disc_loss == r2.history[i].disc_loss);
  }
  for (std::size_t i = 0; i < r1.generator.items.size(); ++i)
    CHECK(r1.generator.items[i].second.values() == r2.generator.items[i].second.values());

  // decomposition identity at every logged step
  for (const auto& row : r1.history)
    CHECK(row.loss.total == doctest::Approx(row.loss.abs + row.loss.relative + row.loss.cyc +
                                            0.01 * row.loss.adv + row.loss.transform)
                                .epsilon(1e-9));

  // checkpoints land on schedule and load back bit-identically
  CHECK(fs::exists(dir1 / "checkpoint_000005.json"));
  CHECK(fs::exists(dir1 / "checkpoint_000010.bin"));
  const auto loaded = load_checkpoint<double>(dir1 / "checkpoint_000010");
  for (std::size_t i = 0; i < r1.generator.items.size(); ++i)
    CHECK(loaded.sections[0].second.items[i].second.values() == r1.generator.items[i].second.values());

  // loss csv exists with the documented header
  std::ifstream csv(dir1 / "loss_history.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "step,abs,relative,cyc,adv,transform,total,disc_loss,wall_ms");

  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("training rejects a dataset that disagrees with n_points") {
  std::vector<PairSample<double>> dataset{toy_pair(16, 200)};
  TrainConfig<double> config;
  config.n_points = 32;
  config.epochs = 1;
  CHECK_THROWS_AS(train(config, dataset, fs::temp_directory_path() / "genreg_train_bad"), ConfigError);
}
