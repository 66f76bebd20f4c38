// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "genreg/assignment.hpp"
#include "genreg/geometry.hpp"
#include "genreg/kdtree.hpp"

namespace genreg {

/// One-to-one bijection between two equal-size clouds: mapping[i] is the
/// index in Y matched to point i of X.
struct Assignment {
  std::vector<std::size_t> mapping;

  void validate() const {
    std::vector<char> seen(mapping.size(), 0);
    for (const std::size_t j : mapping) {
      if (j >= mapping.size() || seen[j]) throw InvalidArgument("Assignment: mapping is not a permutation");
      seen[j] = 1;
    }
  }
};

/// Consecutive-point edge lengths of an ordered cloud.
template <typename S>
struct EdgeSet {
  std::vector<S> lengths;
};

/// Symmetric chamfer distance: mean Euclidean nearest-neighbour distance in
/// both directions, summed. Exact (kd-tree results equal brute force).
template <typename S>
S chamfer(const PointCloud<S>& x, const PointCloud<S>& y) {
  if (x.size() < 1 || y.size() < 1) throw InvalidArgument("chamfer: empty cloud");
  const KdTree<S> tx(x.points);
  const KdTree<S> ty(y.points);
  S fwd = S(0), bwd = S(0);
  for (Eigen::Index i = 0; i < x.size(); ++i) fwd += std::sqrt(ty.nearest(x.points.row(i)).second);
  for (Eigen::Index j = 0; j < y.size(); ++j) bwd += std::sqrt(tx.nearest(y.points.row(j)).second);
  return fwd / S(x.size()) + bwd / S(y.size());
}

struct EmdOptions {
  std::size_t exact_threshold = 512;  // exact matching up to this size
  double approx_epsilon = 1e-4;       // final per-item auction granularity
};

template <typename S>
struct EmdResult {
  S cost = S(0);  // mean pairwise distance under the matching
  Assignment assignment;
  bool exact = true;
  /// For the auction path: cost <= (1 + approx_ratio_bound) * optimum.
  double approx_ratio_bound = 0.0;
};

/// Earth mover's distance between equal-size clouds: optimal one-to-one
/// matching on Euclidean costs, reported as the mean matched distance.
/// Exact for |X| <= exact_threshold, auction approximation beyond.
template <typename S>
EmdResult<S> emd(const PointCloud<S>& x, const PointCloud<S>& y, const EmdOptions& opts = {}) {
  const std::size_t n = std::size_t(x.size());
  if (n != std::size_t(y.size())) throw SizeMismatch("emd: |X| != |Y|");
  if (n == 0) throw InvalidArgument("emd: empty cloud");
  std::vector<S> cost(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      cost[i * n + j] = (x.points.row(Eigen::Index(i)) - y.points.row(Eigen::Index(j))).norm();

  EmdResult<S> result;
  if (n <= opts.exact_threshold) {
    result.assignment.mapping = min_cost_assignment_exact(cost, n);
    result.exact = true;
  } else {
    const auto auction = min_cost_assignment_auction(cost, n, opts.approx_epsilon);
    result.assignment.mapping = auction.row_to_col;
    result.exact = false;
    S total = S(0);
    for (std::size_t i = 0; i < n; ++i) total += cost[i * n + result.assignment.mapping[i]];
    const double lower_bound = std::max(double(total) - double(n) * auction.epsilon_final, 0.0);
    result.approx_ratio_bound = lower_bound > 0.0 ? (double(total) / lower_bound - 1.0)
                                                  : double(n) * auction.epsilon_final;
  }
  S total = S(0);
  for (std::size_t i = 0; i < n; ++i) total += cost[i * n + result.assignment.mapping[i]];
  result.cost = total / S(n);
  return result;
}

/// Edge lengths between consecutive points. Cyclic mode (default) closes the
/// loop with modulus N; verbatim mode reproduces the printed modulus N-1,
/// which never pairs the final point and revisits the head instead.
template <typename S>
EdgeSet<S> edge_set(const PointCloud<S>& p, bool verbatim_mod_n_minus_1 = false) {
  const Eigen::Index n = p.size();
  if (n < 2) throw InvalidArgument("edge_set: need at least 2 points");
  EdgeSet<S> out;
  out.lengths.resize(std::size_t(n));
  const Eigen::Index mod = verbatim_mod_n_minus_1 ? n - 1 : n;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index j = (i + 1) % mod;
    out.lengths[std::size_t(i)] = (p.points.row(i) - p.points.row(j)).norm();
  }
  return out;
}

/// Index-aligned mean squared error: sum of squared Euclidean distances
/// between index-paired points, divided by N.
template <typename S>
S mse_points(const PointCloud<S>& x, const PointCloud<S>& y) {
  if (x.size() != y.size()) throw SizeMismatch("mse_points: |X| != |Y|");
  return (x.points - y.points).squaredNorm() / S(x.size());
}

}  // namespace genreg
