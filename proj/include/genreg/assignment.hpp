// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <vector>

#include "genreg/core.hpp"

namespace genreg {

/// Exact minimum-cost perfect matching on a dense square cost matrix
/// (shortest-augmenting-path Hungarian with potentials, O(n^3)).
/// Returns mapping row -> column.
template <typename S>
std::vector<std::size_t> min_cost_assignment_exact(const std::vector<S>& cost, std::size_t n) {
  if (cost.size() != n * n) throw SizeMismatch("min_cost_assignment_exact: cost size != n*n");
  const S inf = std::numeric_limits<S>::infinity();
  std::vector<S> u(n + 1, S(0)), v(n + 1, S(0)), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      std::size_t j1 = 0;
      S delta = inf;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const S cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n);
  for (std::size_t j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

struct AuctionResult {
  std::vector<std::size_t> row_to_col;
  double epsilon_final = 0.0;  // per-item price granularity at termination
};

/// Forward auction with epsilon scaling (Bertsekas). The returned matching
/// costs at most n * epsilon_final more than the optimum, which yields the
/// lower bound used by the approximate EMD path.
template <typename S>
AuctionResult min_cost_assignment_auction(const std::vector<S>& cost, std::size_t n,
                                          double epsilon_final_target) {
  if (cost.size() != n * n) throw SizeMismatch("min_cost_assignment_auction: cost size != n*n");
  S cmax = S(0);
  for (const S c : cost) cmax = std::max(cmax, std::abs(c));
  double eps = std::max(double(cmax) / 2.0, epsilon_final_target);
  std::vector<double> price(n, 0.0);
  std::vector<std::ptrdiff_t> owner(n);   // column -> row
  std::vector<std::ptrdiff_t> matched(n); // row -> column
  AuctionResult result;
  for (;;) {
    std::fill(owner.begin(), owner.end(), -1);
    std::fill(matched.begin(), matched.end(), -1);
    std::deque<std::size_t> unassigned;
    for (std::size_t i = 0; i < n; ++i) unassigned.push_back(i);
    while (!unassigned.empty()) {
      const std::size_t i = unassigned.front();
      unassigned.pop_front();
      // benefit of column j for row i is -cost; value = benefit - price
      double best = -std::numeric_limits<double>::infinity();
      double second = best;
      std::size_t best_j = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const double value = -double(cost[i * n + j]) - price[j];
        if (value > best) {
          second = best;
          best = value;
          best_j = j;
        } else if (value > second) {
          second = value;
        }
      }
      const double increment = (n == 1) ? eps : (best - second + eps);
      price[best_j] += increment;
      const std::ptrdiff_t prev = owner[best_j];
      owner[best_j] = std::ptrdiff_t(i);
      matched[std::size_t(i)] = std::ptrdiff_t(best_j);
      if (prev >= 0) {
        matched[std::size_t(prev)] = -1;
        unassigned.push_back(std::size_t(prev));
      }
    }
    if (eps <= epsilon_final_target) break;
    eps = std::max(eps / 4.0, epsilon_final_target);
  }
  result.epsilon_final = eps;
  result.row_to_col.resize(n);
  for (std::size_t i = 0; i < n; ++i) result.row_to_col[i] = std::size_t(matched[i]);
  return result;
}

}  // namespace genreg
