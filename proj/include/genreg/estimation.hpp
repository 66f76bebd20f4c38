// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "genreg/autodiff_geometry.hpp"
#include "genreg/geometry.hpp"
#include "genreg/kdtree.hpp"
#include "genreg/thread_pool.hpp"

namespace genreg {

/// Index-aligned correspondences: src row i pairs with dst row i.
template <typename S>
struct CorrespondenceSet {
  PointMatrix<S> src;
  PointMatrix<S> dst;

  Eigen::Index size() const { return src.rows(); }

  void validate(Eigen::Index k) const {
    if (src.rows() != dst.rows()) throw SizeMismatch("CorrespondenceSet: src/dst lengths differ");
    if (src.rows() < k) throw InvalidArgument("CorrespondenceSet: fewer correspondences than the minimal-set size");
  }
};

template <typename S>
struct ConsensusResult {
  RigidTransform<S> transform;
  S residual = S(0);  // sum of Euclidean projection errors over all N
  std::size_t hypothesis_index = 0;
  std::vector<S> residuals_all;
};

struct PdsacOptions {
  std::size_t m = 512;   // hypothesis count
  Eigen::Index k = 4;    // minimal-set size
  std::uint64_t seed = 0;
  int workers = 0;       // 0 = hardware concurrency (GENREG_WORKERS overrides)
};

namespace est_detail {

/// Sum of Euclidean residuals of T over every correspondence.
template <typename S>
S projection_error(const CorrespondenceSet<S>& c, const RigidTransform<S>& t) {
  PointMatrix<S> moved = c.src * t.rotation();
  moved.rowwise() += t.translation();
  return (moved - c.dst).rowwise().norm().sum();
}

/// The minimal set of hypothesis h, a deterministic function of (seed, h).
/// Nested property: the first m1 sets of any run are shared by every run
/// with larger m and the same seed.
inline std::vector<std::size_t> minimal_set(std::uint64_t seed, std::size_t h, std::size_t n,
                                            std::size_t k) {
  Rng rng(mix_seed(seed, 0x9D5AC0ULL + h));
  return rng.sample_without_replacement(n, k);
}

}  // namespace est_detail

/// PDSAC with caller-supplied minimal sets; the entry point for both the
/// seeded sampler below and the fixed-set test hook. All hypotheses are
/// solved and scored in one data-parallel pass; results are independent of
/// the worker count.
template <typename S>
ConsensusResult<S> pdsac_with_sets(const CorrespondenceSet<S>& c,
                                   const std::vector<std::vector<std::size_t>>& sets,
                                   Eigen::Index k, int workers = 0) {
  c.validate(k);
  if (k < 3) throw InvalidArgument("pdsac: minimal-set size k must be at least 3");
  if (sets.empty()) throw InvalidArgument("pdsac: need at least one hypothesis");
  const std::size_t m = sets.size();
  std::vector<S> residuals(m, std::numeric_limits<S>::infinity());
  std::vector<RigidTransform<S>> transforms(m);

  parallel_for(m, workers, [&](std::size_t h) {
    PointMatrix<S> src_k(k, 3), dst_k(k, 3);
    for (Eigen::Index i = 0; i < k; ++i) {
      src_k.row(i) = c.src.row(Eigen::Index(sets[h][std::size_t(i)]));
      dst_k.row(i) = c.dst.row(Eigen::Index(sets[h][std::size_t(i)]));
    }
    RigidTransform<S> t;
    if (!detail::kabsch_raw<S>(src_k, dst_k, t)) return;  // degenerate: +inf residual
    transforms[h] = t;
    residuals[h] = est_detail::projection_error(c, t);
  });

  std::size_t best = 0;
  for (std::size_t h = 1; h < m; ++h)
    if (residuals[h] < residuals[best]) best = h;
  if (!std::isfinite(double(residuals[best])))
    throw EstimationFailure("pdsac: every minimal set was degenerate");

  ConsensusResult<S> result;
  result.transform = transforms[best];
  result.residual = residuals[best];
  result.hypothesis_index = best;
  result.residuals_all = std::move(residuals);
  return result;
}

/// Parallel sample consensus: m minimal sets of k correspondences drawn at
/// once, batch-solved with the SVD rigid fit, each hypothesis scored against
/// every correspondence, minimum projection error wins (ties to the lowest
/// index). The winning minimal-set transform is returned without refitting.
template <typename S>
ConsensusResult<S> pdsac(const CorrespondenceSet<S>& c, const PdsacOptions& opts = {}) {
  c.validate(opts.k);
  if (opts.m < 1) throw InvalidArgument("pdsac: hypothesis count m must be positive");
  std::vector<std::vector<std::size_t>> sets(opts.m);
  for (std::size_t h = 0; h < opts.m; ++h)
    sets[h] = est_detail::minimal_set(opts.seed, h, std::size_t(c.size()), std::size_t(opts.k));
  return pdsac_with_sets(c, sets, opts.k, opts.workers);
}

/// Differentiable PDSAC for training graphs: selection runs on values, the
/// returned [4,4] tensor is the rigid fit of the winning minimal set so
/// gradients flow through that solve alone.
template <typename S>
Tensor<S> pdsac_graph(const Tensor<S>& src, const Tensor<S>& dst, const PdsacOptions& opts,
                      ConsensusResult<S>* result_out = nullptr, RigidFitInfo* fit_info = nullptr) {
  CorrespondenceSet<S> c;
  c.src = src.to_points();
  c.dst = dst.to_points();
  const ConsensusResult<S> picked = pdsac(c, opts);
  const auto& winner = est_detail::minimal_set(opts.seed, picked.hypothesis_index,
                                               std::size_t(c.size()), std::size_t(opts.k));
  if (result_out) *result_out = picked;
  return rigid_fit(gather_rows(src, winner), gather_rows(dst, winner), fit_info);
}

/// Softmin-weighted blend of all finite hypotheses (experimentation only,
/// not used by any acceptance path). Rotations are averaged chordally and
/// projected back to SO(3).
template <typename S>
RigidTransform<S> pdsac_softmin(const CorrespondenceSet<S>& c, const PdsacOptions& opts, S temperature) {
  if (temperature <= S(0)) throw InvalidArgument("pdsac_softmin: temperature must be positive");
  std::vector<std::vector<std::size_t>> sets(opts.m);
  for (std::size_t h = 0; h < opts.m; ++h)
    sets[h] = est_detail::minimal_set(opts.seed, h, std::size_t(c.size()), std::size_t(opts.k));
  c.validate(opts.k);
  std::vector<RigidTransform<S>> transforms(opts.m);
  std::vector<S> residuals(opts.m, std::numeric_limits<S>::infinity());
  for (std::size_t h = 0; h < opts.m; ++h) {
    PointMatrix<S> src_k(opts.k, 3), dst_k(opts.k, 3);
    for (Eigen::Index i = 0; i < opts.k; ++i) {
      src_k.row(i) = c.src.row(Eigen::Index(sets[h][std::size_t(i)]));
      dst_k.row(i) = c.dst.row(Eigen::Index(sets[h][std::size_t(i)]));
    }
    if (detail::kabsch_raw<S>(src_k, dst_k, transforms[h]))
      residuals[h] = est_detail::projection_error(c, transforms[h]);
  }
  S min_res = *std::min_element(residuals.begin(), residuals.end());
  if (!std::isfinite(double(min_res))) throw EstimationFailure("pdsac_softmin: every minimal set was degenerate");
  S weight_sum = S(0);
  Mat3<S> r_blend = Mat3<S>::Zero();
  Vec3<S> t_blend = Vec3<S>::Zero();
  for (std::size_t h = 0; h < opts.m; ++h) {
    if (!std::isfinite(double(residuals[h]))) continue;
    const S w = std::exp(-(residuals[h] - min_res) / temperature);
    weight_sum += w;
    r_blend += w * transforms[h].rotation();
    t_blend += w * transforms[h].translation();
  }
  r_blend /= weight_sum;
  t_blend /= weight_sum;
  Eigen::JacobiSVD<Mat3<S>> svd(r_blend, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3<S> d = Mat3<S>::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < S(0)) d(2, 2) = S(-1);
  RigidTransform<S> out;
  out.matrix.setIdentity();
  out.matrix.template topLeftCorner<3, 3>() = svd.matrixU() * d * svd.matrixV().transpose();
  out.matrix.template block<1, 3>(3, 0) = t_blend;
  return out;
}

/// Combination of the two branch transforms under the row-vector convention:
/// with [A,1] T_A = [A_g,1], [B,1] T_B = [B_g,1] and the generated clouds
/// sharing one frame, T_est = T_B T_A^-1 satisfies [A,1] = [B,1] T_est.
template <typename S>
RigidTransform<S> combine_branch_transforms(const RigidTransform<S>& t_a, const RigidTransform<S>& t_b) {
  return compose(t_b, invert(t_a));
}

/// Same combination on the graph, for the transformation loss.
template <typename S>
Tensor<S> combine_branch_transforms_graph(const Tensor<S>& t_a, const Tensor<S>& t_b) {
  return matmul(t_b, rigid_inverse(t_a));
}

struct RansacOptions {
  std::size_t m = 512;
  Eigen::Index k = 4;
  double inlier_threshold = 0.02;  // 2% of the unit box
  std::uint64_t seed = 0;
};

/// Classic sequential RANSAC over the same hypothesis stream as pdsac: one
/// minimal set per iteration, inlier counting under the threshold, best by
/// inlier count (ties by lower projection error), final refit on the
/// winner's inlier set.
template <typename S>
ConsensusResult<S> ransac(const CorrespondenceSet<S>& c, const RansacOptions& opts = {}) {
  c.validate(opts.k);
  if (opts.k < 3) throw InvalidArgument("ransac: minimal-set size k must be at least 3");
  if (opts.m < 1) throw InvalidArgument("ransac: iteration count m must be positive");
  const std::size_t n = std::size_t(c.size());

  std::vector<S> residuals(opts.m, std::numeric_limits<S>::infinity());
  RigidTransform<S> best_transform;
  std::size_t best_index = 0;
  Eigen::Index best_inliers = -1;
  S best_residual = std::numeric_limits<S>::infinity();
  bool any = false;

  PointMatrix<S> src_k(opts.k, 3), dst_k(opts.k, 3);
  for (std::size_t h = 0; h < opts.m; ++h) {
    const auto set = est_detail::minimal_set(opts.seed, h, n, std::size_t(opts.k));
    for (Eigen::Index i = 0; i < opts.k; ++i) {
      src_k.row(i) = c.src.row(Eigen::Index(set[std::size_t(i)]));
      dst_k.row(i) = c.dst.row(Eigen::Index(set[std::size_t(i)]));
    }
    RigidTransform<S> t;
    if (!detail::kabsch_raw<S>(src_k, dst_k, t)) continue;
    PointMatrix<S> moved = c.src * t.rotation();
    moved.rowwise() += t.translation();
    const auto dists = (moved - c.dst).rowwise().norm().eval();
    const S residual = dists.sum();
    residuals[h] = residual;
    const Eigen::Index inliers = (dists.array() <= S(opts.inlier_threshold)).count();
    if (inliers > best_inliers || (inliers == best_inliers && residual < best_residual)) {
      best_inliers = inliers;
      best_residual = residual;
      best_transform = t;
      best_index = h;
      any = true;
    }
  }
  if (!any) throw EstimationFailure("ransac: every minimal set was degenerate");

  // refit on the winner's inlier set when it admits a rigid fit
  {
    PointMatrix<S> moved = c.src * best_transform.rotation();
    moved.rowwise() += best_transform.translation();
    const auto dists = (moved - c.dst).rowwise().norm().eval();
    std::vector<Eigen::Index> inlier_rows;
    for (Eigen::Index i = 0; i < c.size(); ++i)
      if (dists[i] <= S(opts.inlier_threshold)) inlier_rows.push_back(i);
    if (Eigen::Index(inlier_rows.size()) >= 3) {
      PointMatrix<S> src_in(Eigen::Index(inlier_rows.size()), 3);
      PointMatrix<S> dst_in(Eigen::Index(inlier_rows.size()), 3);
      for (std::size_t i = 0; i < inlier_rows.size(); ++i) {
        src_in.row(Eigen::Index(i)) = c.src.row(inlier_rows[i]);
        dst_in.row(Eigen::Index(i)) = c.dst.row(inlier_rows[i]);
      }
      RigidTransform<S> refit;
      if (detail::kabsch_raw<S>(src_in, dst_in, refit)) best_transform = refit;
    }
  }

  ConsensusResult<S> result;
  result.transform = best_transform;
  result.residual = est_detail::projection_error(c, best_transform);
  result.hypothesis_index = best_index;
  residuals[best_index] = result.residual;
  result.residuals_all = std::move(residuals);
  return result;
}

template <typename S>
struct IcpResult {
  RigidTransform<S> transform;
  int iterations = 0;
  S final_rmse = S(0);
  std::vector<S> rmse_history;
};

/// Point-to-point ICP: exact nearest-neighbour matching against a kd-tree,
/// a rigid-fit update per iteration, stopping when the RMSE improvement
/// drops below tol (or the RMSE itself does, or max_iter is reached).
template <typename S>
IcpResult<S> icp(const PointCloud<S>& src, const PointCloud<S>& dst, int max_iter = 50, S tol = S(1e-6)) {
  src.validate();
  dst.validate();
  const KdTree<S> tree(dst.points);
  PointMatrix<S> moved = src.points;
  IcpResult<S> result;
  S prev_rmse = std::numeric_limits<S>::infinity();
  for (int iter = 0; iter < max_iter; ++iter) {
    PointMatrix<S> matched(moved.rows(), 3);
    for (Eigen::Index i = 0; i < moved.rows(); ++i)
      matched.row(i) = dst.points.row(Eigen::Index(tree.nearest(moved.row(i)).first));
    RigidTransform<S> delta;
    if (!detail::kabsch_raw<S>(moved, matched, delta))
      throw EstimationFailure("icp: matched correspondences are degenerate");
    moved = (moved * delta.rotation()).eval();
    moved.rowwise() += delta.translation();
    result.transform = compose(result.transform, delta);
    const S rmse = std::sqrt((moved - matched).rowwise().squaredNorm().mean());
    result.rmse_history.push_back(rmse);
    result.iterations = iter + 1;
    result.final_rmse = rmse;
    if (rmse <= tol || prev_rmse - rmse < tol) break;
    prev_rmse = rmse;
  }
  return result;
}

}  // namespace genreg
