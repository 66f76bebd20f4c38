// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "genreg/datagen.hpp"
#include "genreg/estimation.hpp"
#include "genreg/metrics.hpp"
#include "genreg/networks.hpp"

namespace genreg {

template <typename S>
struct LossBreakdown {
  S abs = S(0);
  S relative = S(0);
  S cyc = S(0);
  S adv = S(0);  // unweighted generator adversarial term
  S transform = S(0);
  S total = S(0);  // abs + relative + cyc + 0.01*adv + transform
};

template <typename S>
struct LossOptions {
  PdsacOptions pdsac{.m = 128, .k = 4, .seed = 0};
  EmdOptions emd;
  S adv_weight = S(0.01);
  bool non_saturating = true;  // minimax form of the generator term behind this flag
  S disc_clamp = S(1e-7);
};

/// Discrete structure of one pair-loss evaluation: EMD assignments and the
/// PDSAC winning minimal sets. The gradient contract treats these as locally
/// constant, so freezing them turns the loss into the exact function the
/// backward pass differentiates (used by the finite-difference oracle).
struct LossStructure {
  std::vector<std::vector<std::size_t>> emd_assignments;  // in build order
  std::vector<std::vector<std::size_t>> pdsac_sets;       // branch A then branch B
};

namespace loss_detail {

/// Mean matched Euclidean distance under the optimal (or frozen) bijection.
template <typename S>
Tensor<S> emd_loss(const Tensor<S>& x, const Tensor<S>& y, const EmdOptions& opts,
                   LossStructure* capture, const LossStructure* frozen, std::size_t slot) {
  std::vector<std::size_t> mapping;
  if (frozen) {
    mapping = frozen->emd_assignments.at(slot);
  } else {
    PointCloud<S> xc(x.to_points());
    PointCloud<S> yc(y.to_points());
    mapping = emd(xc, yc, opts).assignment.mapping;
  }
  if (capture) {
    capture->emd_assignments.resize(std::max(capture->emd_assignments.size(), slot + 1));
    capture->emd_assignments[slot] = mapping;
  }
  const Tensor<S> matched = gather_rows(y, mapping);
  return reduce_mean_all(row_norms(sub(x, matched)));
}

template <typename S>
Tensor<S> edge_lengths(const Tensor<S>& pts) {
  const Eigen::Index n = pts.dim(0);
  std::vector<std::size_t> next(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) next[std::size_t(i)] = std::size_t((i + 1) % n);
  return row_norms(sub(pts, gather_rows(pts, next)));
}

}  // namespace loss_detail

/// Eq-style absolute loss: EMD(A, B_g) + EMD(B, A_g).
template <typename S>
Tensor<S> loss_absolute_graph(const Tensor<S>& a, const Tensor<S>& b, const Tensor<S>& a_gen,
                              const Tensor<S>& b_gen, const LossOptions<S>& opts,
                              LossStructure* capture = nullptr, const LossStructure* frozen = nullptr) {
  return add(loss_detail::emd_loss(a, b_gen, opts.emd, capture, frozen, 0),
             loss_detail::emd_loss(b, a_gen, opts.emd, capture, frozen, 1));
}

/// MAE between the cyclic edge sets of each original and its generation.
template <typename S>
Tensor<S> loss_relative_graph(const Tensor<S>& a, const Tensor<S>& a_gen, const Tensor<S>& b,
                              const Tensor<S>& b_gen) {
  const Tensor<S> term_a = reduce_mean_all(abs(sub(loss_detail::edge_lengths(a), loss_detail::edge_lengths(a_gen))));
  const Tensor<S> term_b = reduce_mean_all(abs(sub(loss_detail::edge_lengths(b), loss_detail::edge_lengths(b_gen))));
  return add(term_a, term_b);
}

/// Cycle consistency: regenerating from (X_g, X) must return X.
template <typename S>
Tensor<S> loss_cycle_graph(const Tensor<S>& a, const Tensor<S>& b, const Tensor<S>& a_gen,
                           const Tensor<S>& b_gen, const ParamSet<S>& params, const NetworkConfig& cfg,
                           const LossOptions<S>& opts, LossStructure* capture = nullptr,
                           const LossStructure* frozen = nullptr) {
  const Tensor<S> a_cycle = generator_first_branch_graph(a_gen, a, params, cfg);
  const Tensor<S> b_cycle = generator_first_branch_graph(b_gen, b, params, cfg);
  return add(loss_detail::emd_loss(a_cycle, a, opts.emd, capture, frozen, 2),
             loss_detail::emd_loss(b_cycle, b, opts.emd, capture, frozen, 3));
}

/// Generator adversarial term: D_A judges real A against generated B_g and
/// D_B judges real B against generated A_g. Non-saturating by default,
/// Eq-form minimax behind the flag.
template <typename S>
Tensor<S> loss_adversarial_g_graph(const Tensor<S>& a_gen, const Tensor<S>& b_gen,
                                   const ParamSet<S>& da, const ParamSet<S>& db,
                                   const LossOptions<S>& opts) {
  const Tensor<S> d_a = clamp(discriminator_graph(b_gen, da), opts.disc_clamp, S(1) - opts.disc_clamp);
  const Tensor<S> d_b = clamp(discriminator_graph(a_gen, db), opts.disc_clamp, S(1) - opts.disc_clamp);
  if (opts.non_saturating) return mul_scalar(add(log(d_a), log(d_b)), S(-0.5));
  const Tensor<S> one_minus_a = add_scalar(mul_scalar(d_a, S(-1)), S(1));
  const Tensor<S> one_minus_b = add_scalar(mul_scalar(d_b, S(-1)), S(1));
  return mul_scalar(add(log(one_minus_a), log(one_minus_b)), S(0.5));
}

/// Two-discriminator loss with the generated clouds held constant.
template <typename S>
Tensor<S> loss_discriminator_graph(const Tensor<S>& a, const Tensor<S>& b,
                                   const Tensor<S>& a_gen_const, const Tensor<S>& b_gen_const,
                                   const ParamSet<S>& da, const ParamSet<S>& db,
                                   const LossOptions<S>& opts) {
  auto clamped = [&](Tensor<S> d) { return clamp(d, opts.disc_clamp, S(1) - opts.disc_clamp); };
  const Tensor<S> real_a = clamped(discriminator_graph(a, da));
  const Tensor<S> fake_a = clamped(discriminator_graph(b_gen_const, da));
  const Tensor<S> real_b = clamped(discriminator_graph(b, db));
  const Tensor<S> fake_b = clamped(discriminator_graph(a_gen_const, db));
  const Tensor<S> one = Tensor<S>::scalar(S(1));
  Tensor<S> sum = add(log(real_a), log(sub(one, fake_a)));
  sum = add(sum, log(real_b));
  sum = add(sum, log(sub(one, fake_b)));
  return mul_scalar(sum, S(-0.5));
}

/// Frobenius norm of T_est T_gt^-1 - I over the full 4x4.
template <typename S>
Tensor<S> loss_transform_graph(const Tensor<S>& t_est, const RigidTransform<S>& t_gt) {
  const auto inv = invert(t_gt);
  std::vector<S> inv_vals(16), eye(16, S(0));
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) inv_vals[std::size_t(i * 4 + j)] = inv.matrix(i, j);
  for (Eigen::Index i = 0; i < 4; ++i) eye[std::size_t(i * 4 + i)] = S(1);
  const Tensor<S> residual = sub(matmul(t_est, Tensor<S>::leaf({4, 4}, inv_vals)),
                                 Tensor<S>::leaf({4, 4}, eye));
  return frobenius_norm(residual);
}

/// Scalar-level transformation loss for evaluation paths.
template <typename S>
S loss_transform(const RigidTransform<S>& t_est, const RigidTransform<S>& t_gt) {
  return (t_est.matrix * invert(t_gt).matrix - Mat4<S>::Identity()).norm();
}

/// Assemble the weighted breakdown; total carries the fixed 0.01 adversarial
/// weight from the published objective.
template <typename S>
LossBreakdown<S> total_loss(S abs, S relative, S cyc, S adv, S transform, S adv_weight = S(0.01)) {
  LossBreakdown<S> out;
  out.abs = abs;
  out.relative = relative;
  out.cyc = cyc;
  out.adv = adv;
  out.transform = transform;
  out.total = abs + relative + cyc + adv_weight * adv + transform;
  return out;
}

template <typename S>
struct PairLossGraph {
  Tensor<S> total;
  LossBreakdown<S> breakdown;
  GeneratorOutput<S> generator;
  ConsensusResult<S> consensus_a;
  ConsensusResult<S> consensus_b;
  bool transform_grad_suppressed = false;
  LossStructure structure;
};

/// The full generator objective for one pair: all five losses over a fresh
/// forward pass. PDSAC selection and EMD assignments run on values; freezing
/// a previously captured structure yields the exact function the gradients
/// differentiate.
template <typename S>
PairLossGraph<S> build_pair_loss(const PairSample<S>& pair, const ParamSet<S>& gen_params,
                                 const ParamSet<S>& da, const ParamSet<S>& db,
                                 const NetworkConfig& cfg, const LossOptions<S>& opts,
                                 const LossStructure* frozen = nullptr) {
  PairLossGraph<S> out;
  const Tensor<S> a = Tensor<S>::from_points(pair.a.points);
  const Tensor<S> b = Tensor<S>::from_points(pair.b.points);
  out.generator = generator_graph(a, b, gen_params, cfg);
  const Tensor<S>& a_gen = out.generator.a_generated;
  const Tensor<S>& b_gen = out.generator.b_generated;

  const Tensor<S> l_abs = loss_absolute_graph(a, b, a_gen, b_gen, opts, &out.structure, frozen);
  const Tensor<S> l_rel = loss_relative_graph(a, a_gen, b, b_gen);
  const Tensor<S> l_cyc = loss_cycle_graph(a, b, a_gen, b_gen, gen_params, cfg, opts, &out.structure, frozen);
  const Tensor<S> l_adv = loss_adversarial_g_graph(a_gen, b_gen, da, db, opts);

  // branch transforms from the index-aligned correspondences (A, A_g), (B, B_g)
  RigidFitInfo info_a, info_b;
  Tensor<S> t_a, t_b;
  if (frozen) {
    t_a = rigid_fit(gather_rows(a, frozen->pdsac_sets.at(0)), gather_rows(a_gen, frozen->pdsac_sets.at(0)), &info_a);
    t_b = rigid_fit(gather_rows(b, frozen->pdsac_sets.at(1)), gather_rows(b_gen, frozen->pdsac_sets.at(1)), &info_b);
    out.structure.pdsac_sets = frozen->pdsac_sets;
  } else {
    PdsacOptions pd_a = opts.pdsac;
    PdsacOptions pd_b = opts.pdsac;
    pd_b.seed = mix_seed(opts.pdsac.seed, 0xB);
    t_a = pdsac_graph(a, a_gen, pd_a, &out.consensus_a, &info_a);
    t_b = pdsac_graph(b, b_gen, pd_b, &out.consensus_b, &info_b);
    out.structure.pdsac_sets = {
        est_detail::minimal_set(pd_a.seed, out.consensus_a.hypothesis_index, std::size_t(pair.a.size()), std::size_t(pd_a.k)),
        est_detail::minimal_set(pd_b.seed, out.consensus_b.hypothesis_index, std::size_t(pair.b.size()), std::size_t(pd_b.k))};
  }
  out.transform_grad_suppressed = info_a.grad_suppressed || info_b.grad_suppressed;
  // source-to-target estimate T_A T_B^-1 compared against the drawn pose
  const Tensor<S> t_est = matmul(t_a, rigid_inverse(t_b));
  const Tensor<S> l_t = loss_transform_graph(t_est, pair.t_gt);

  out.total = add(add(add(l_abs, l_rel), add(l_cyc, mul_scalar(l_adv, opts.adv_weight))), l_t);
  out.breakdown = total_loss(l_abs.value(), l_rel.value(), l_cyc.value(), l_adv.value(), l_t.value(),
                             opts.adv_weight);
  return out;
}

}  // namespace genreg
