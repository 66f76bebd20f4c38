// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>

#include "genreg/checkpoint.hpp"
#include "genreg/losses.hpp"
#include "genreg/optimizer.hpp"
#include "genreg/thread_pool.hpp"

namespace genreg {

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GanSchedule {
  int generator_every = 5;
  int discriminator_every = 1;
};

template <typename S>
struct TrainConfig {
  int epochs = 200;
  int batch_size = 16;
  Eigen::Index n_points = 1024;
  S learning_rate = S(1e-4);
  std::uint64_t seed = 0;
  GanSchedule schedule;
  PdsacOptions pdsac{.m = 128, .k = 4, .seed = 0};
  Eigen::Index knn_k = 20;
  bool mixer_residual = true;
  bool non_saturating_gan = true;
  int checkpoint_every = 500;  // global steps between checkpoints
  int workers = 0;
  std::string config_hash;  // recorded into checkpoints

  void validate() const {
    if (epochs < 1 || batch_size < 1 || n_points < 1) throw ConfigError("train config: counts must be positive");
    if (learning_rate <= S(0)) throw ConfigError("train config: learning_rate must be positive");
    if (schedule.generator_every < 1 || schedule.discriminator_every < 1)
      throw ConfigError("train config: schedule periods must be at least 1");
    if (pdsac.m < 1 || pdsac.k < 3) throw ConfigError("train config: pdsac needs m >= 1 and k >= 3");
  }

  NetworkConfig network() const {
    NetworkConfig net;
    net.n_points = n_points;
    net.knn_k = knn_k;
    net.mixer_residual = mixer_residual;
    return net;
  }
};

template <typename S>
struct LossRow {
  long step = 0;
  LossBreakdown<S> loss;
  S disc_loss = S(0);
  double wall_ms = 0.0;
};

template <typename S>
void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRow<S>>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("write_loss_csv: cannot open " + path.string());
  out << "step,abs,relative,cyc,adv,transform,total,disc_loss,wall_ms\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%ld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.3f\n", r.step,
                  double(r.loss.abs), double(r.loss.relative), double(r.loss.cyc), double(r.loss.adv),
                  double(r.loss.transform), double(r.loss.total), double(r.disc_loss), r.wall_ms);
    out << buf;
  }
}

template <typename S>
struct TrainResult {
  ParamSet<S> generator;
  ParamSet<S> disc_a;
  ParamSet<S> disc_b;
  std::vector<LossRow<S>> history;
  long total_steps = 0;
  long transform_grad_suppressed_steps = 0;
};

namespace train_detail {

template <typename S>
std::vector<std::vector<S>> zero_like(const ParamSet<S>& params) {
  std::vector<std::vector<S>> out(params.items.size());
  for (std::size_t i = 0; i < params.items.size(); ++i)
    out[i].assign(params.items[i].second.values().size(), S(0));
  return out;
}

template <typename S>
void add_scaled(std::vector<std::vector<S>>& acc, const ParamSet<S>& params, S scale) {
  for (std::size_t i = 0; i < params.items.size(); ++i) {
    const auto g = params.items[i].second.grad();
    for (std::size_t j = 0; j < g.size(); ++j) acc[i][j] += scale * g[j];
  }
}

}  // namespace train_detail

/// GAN training loop over a fixed pair dataset. Per global step the
/// discriminators update on the configured cadence (default: every step)
/// while the generator updates only on its cadence (default: every 5th
/// step), each from batch-mean gradients accumulated in pair order.
/// Deterministic for a fixed seed regardless of the worker count.
template <typename S>
TrainResult<S> train(const TrainConfig<S>& config, const std::vector<PairSample<S>>& dataset,
                     const std::filesystem::path& out_dir) {
  config.validate();
  if (dataset.empty()) throw InvalidArgument("train: dataset holds no pairs");
  for (const auto& pair : dataset)
    if (pair.a.size() != config.n_points || pair.b.size() != config.n_points)
      throw ConfigError("train: dataset pair size does not match n_points=" + std::to_string(config.n_points));
  std::filesystem::create_directories(out_dir);

  const NetworkConfig net = config.network();
  TrainResult<S> result;
  result.generator = init_generator_params<S>(net, mix_seed(config.seed, 0x6E6));
  result.disc_a = init_discriminator_params<S>(mix_seed(config.seed, 0xDA));
  result.disc_b = init_discriminator_params<S>(mix_seed(config.seed, 0xDB));

  AdamOptimizer<S> opt_gen(config.learning_rate);
  AdamOptimizer<S> opt_da(config.learning_rate);
  AdamOptimizer<S> opt_db(config.learning_rate);

  const long steps_per_epoch = (long(dataset.size()) + config.batch_size - 1) / config.batch_size;
  const long total_steps = long(config.epochs) * steps_per_epoch;
  Rng batch_rng(mix_seed(config.seed, 0xBA7C4));

  auto save = [&](long step) {
    Checkpoint<S> ckpt;
    ckpt.step = std::uint64_t(step);
    ckpt.config_hash = config.config_hash;
    ckpt.n_points = config.n_points;
    ckpt.sections.emplace_back("generator", result.generator.clone());
    ckpt.sections.emplace_back("disc_a", result.disc_a.clone());
    ckpt.sections.emplace_back("disc_b", result.disc_b.clone());
    char name[64];
    std::snprintf(name, sizeof(name), "checkpoint_%06ld", step);
    save_checkpoint(out_dir / name, ckpt);
    save_checkpoint(out_dir / "checkpoint_latest", ckpt);
  };

  for (long step = 0; step < total_steps; ++step) {
    const auto step_start = std::chrono::steady_clock::now();
    const bool gen_step = (step % config.schedule.generator_every) == 0;
    const bool disc_step = (step % config.schedule.discriminator_every) == 0;

    std::vector<std::size_t> batch(std::size_t(config.batch_size));
    for (auto& idx : batch) idx = std::size_t(batch_rng.uniform_index(dataset.size()));

    struct PairWork {
      std::vector<std::vector<S>> gen_grads, da_grads, db_grads;
      LossBreakdown<S> breakdown;
      S disc_loss = S(0);
      bool suppressed = false;
    };
    std::vector<PairWork> work(batch.size());

    parallel_for(batch.size(), config.workers, [&](std::size_t w) {
      const PairSample<S>& pair = dataset[batch[w]];
      PairWork& slot = work[w];

      LossOptions<S> opts;
      opts.pdsac = config.pdsac;
      opts.pdsac.seed = mix_seed(config.pdsac.seed, std::uint64_t(step) * 131 + w);
      opts.non_saturating = config.non_saturating_gan;

      PointMatrix<S> a_gen_vals, b_gen_vals;
      if (gen_step) {
        // worker-local parameter clones keep the graphs race-free
        ParamSet<S> gen_clone = result.generator.clone();
        ParamSet<S> da_clone = result.disc_a.clone();
        ParamSet<S> db_clone = result.disc_b.clone();
        const auto graph = build_pair_loss(pair, gen_clone, da_clone, db_clone, net, opts);
        graph.total.backward();
        slot.breakdown = graph.breakdown;
        slot.suppressed = graph.transform_grad_suppressed;
        slot.gen_grads = train_detail::zero_like(gen_clone);
        train_detail::add_scaled(slot.gen_grads, gen_clone, S(1));
        a_gen_vals = graph.generator.a_generated.to_points();
        b_gen_vals = graph.generator.b_generated.to_points();
      } else if (disc_step) {
        NoGradGuard guard;
        const auto gen = generator_graph(Tensor<S>::from_points(pair.a.points),
                                         Tensor<S>::from_points(pair.b.points), result.generator, net);
        a_gen_vals = gen.a_generated.to_points();
        b_gen_vals = gen.b_generated.to_points();
      }

      if (disc_step) {
        ParamSet<S> da_clone = result.disc_a.clone();
        ParamSet<S> db_clone = result.disc_b.clone();
        const auto d_loss = loss_discriminator_graph(
            Tensor<S>::from_points(pair.a.points), Tensor<S>::from_points(pair.b.points),
            Tensor<S>::from_points(a_gen_vals), Tensor<S>::from_points(b_gen_vals), da_clone, db_clone,
            LossOptions<S>{});
        d_loss.backward();
        slot.disc_loss = d_loss.value();
        slot.da_grads = train_detail::zero_like(da_clone);
        slot.db_grads = train_detail::zero_like(db_clone);
        train_detail::add_scaled(slot.da_grads, da_clone, S(1));
        train_detail::add_scaled(slot.db_grads, db_clone, S(1));
      }
    });

    const S inv_batch = S(1) / S(batch.size());
    LossRow<S> row;
    row.step = step;

    if (disc_step) {
      auto da_acc = train_detail::zero_like(result.disc_a);
      auto db_acc = train_detail::zero_like(result.disc_b);
      for (const auto& slot : work) {
        for (std::size_t i = 0; i < da_acc.size(); ++i)
          for (std::size_t j = 0; j < da_acc[i].size(); ++j) da_acc[i][j] += inv_batch * slot.da_grads[i][j];
        for (std::size_t i = 0; i < db_acc.size(); ++i)
          for (std::size_t j = 0; j < db_acc[i].size(); ++j) db_acc[i][j] += inv_batch * slot.db_grads[i][j];
        row.disc_loss += inv_batch * slot.disc_loss;
      }
      opt_da.step(result.disc_a, da_acc);
      opt_db.step(result.disc_b, db_acc);
    }

    if (gen_step) {
      auto gen_acc = train_detail::zero_like(result.generator);
      for (const auto& slot : work) {
        for (std::size_t i = 0; i < gen_acc.size(); ++i)
          for (std::size_t j = 0; j < gen_acc[i].size(); ++j) gen_acc[i][j] += inv_batch * slot.gen_grads[i][j];
        row.loss.abs += inv_batch * slot.breakdown.abs;
        row.loss.relative += inv_batch * slot.breakdown.relative;
        row.loss.cyc += inv_batch * slot.breakdown.cyc;
        row.loss.adv += inv_batch * slot.breakdown.adv;
        row.loss.transform += inv_batch * slot.breakdown.transform;
        row.loss.total += inv_batch * slot.breakdown.total;
        if (slot.suppressed) ++result.transform_grad_suppressed_steps;
      }

      if (!std::isfinite(double(row.loss.total))) {
        nlohmann::json dump;
        dump["step"] = step;
        dump["batch"] = batch;
        dump["abs"] = double(row.loss.abs);
        dump["relative"] = double(row.loss.relative);
        dump["cyc"] = double(row.loss.cyc);
        dump["adv"] = double(row.loss.adv);
        dump["transform"] = double(row.loss.transform);
        std::ofstream f(out_dir / "divergence_dump.json", std::ios::trunc);
        f << dump.dump(2) << "\n";
        throw TrainingDiverged("train: non-finite loss at step " + std::to_string(step) +
                               "; diagnostics in divergence_dump.json");
      }
      opt_gen.step(result.generator, gen_acc);

      row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - step_start).count();
      result.history.push_back(row);
    }

    if (config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0) save(step + 1);
  }

  result.total_steps = total_steps;
  save(total_steps);
  write_loss_csv(out_dir / "loss_history.csv", result.history);
  return result;
}

}  // namespace genreg
