// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include "genreg/geometry.hpp"

namespace genreg {

/// Static median-split kd-tree over the rows of an N x 3 matrix. Exact
/// nearest-neighbour and k-NN queries; ties broken by lowest point index so
/// results match the brute-force oracle bit for bit.
template <typename S>
class KdTree {
 public:
  explicit KdTree(const PointMatrix<S>& pts) : pts_(pts) {
    const std::size_t n = std::size_t(pts.rows());
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), std::size_t(0));
    nodes_.reserve(2 * n + 1);
    if (n > 0) root_ = build(0, n);
  }

  Eigen::Index size() const { return pts_.rows(); }

  /// Index of the nearest point and its squared distance.
  std::pair<std::size_t, S> nearest(const Vec3<S>& q) const {
    std::size_t best = std::size_t(-1);
    S best_d2 = std::numeric_limits<S>::infinity();
    search(root_, q, best, best_d2);
    return {best, best_d2};
  }

  /// Indices of the k nearest points, ordered by (distance, index).
  std::vector<std::size_t> knearest(const Vec3<S>& q, std::size_t k) const {
    std::vector<std::pair<S, std::size_t>> heap;  // max-heap on (d2, index)
    heap.reserve(k + 1);
    search_k(root_, q, k, heap);
    std::sort(heap.begin(), heap.end());
    std::vector<std::size_t> out(heap.size());
    for (std::size_t i = 0; i < heap.size(); ++i) out[i] = heap[i].second;
    return out;
  }

 private:
  struct Node {
    int axis = -1;           // -1 marks a leaf
    S split = S(0);
    int left = -1, right = -1;
    std::size_t begin = 0, end = 0;  // leaf range into order_
  };

  static constexpr std::size_t kLeafSize = 16;

  int build(std::size_t begin, std::size_t end) {
    Node node;
    if (end - begin <= kLeafSize) {
      node.begin = begin;
      node.end = end;
      // deterministic leaf scan order
      std::sort(order_.begin() + begin, order_.begin() + end);
      nodes_.push_back(node);
      return int(nodes_.size() - 1);
    }
    Vec3<S> lo = pts_.row(Eigen::Index(order_[begin]));
    Vec3<S> hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(pts_.row(Eigen::Index(order_[i])));
      hi = hi.cwiseMax(pts_.row(Eigen::Index(order_[i])));
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::size_t a, std::size_t b) {
                       const S va = pts_(Eigen::Index(a), axis), vb = pts_(Eigen::Index(b), axis);
                       return va < vb || (va == vb && a < b);
                     });
    node.axis = axis;
    node.split = pts_(Eigen::Index(order_[mid]), axis);
    const int self = int(nodes_.size());
    nodes_.push_back(node);
    const int l = build(begin, mid);
    const int r = build(mid, end);
    nodes_[std::size_t(self)].left = l;
    nodes_[std::size_t(self)].right = r;
    return self;
  }

  void search(int ni, const Vec3<S>& q, std::size_t& best, S& best_d2) const {
    const Node& node = nodes_[std::size_t(ni)];
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t idx = order_[i];
        const S d2 = (pts_.row(Eigen::Index(idx)) - q).squaredNorm();
        if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
          best_d2 = d2;
          best = idx;
        }
      }
      return;
    }
    const S diff = q[node.axis] - node.split;
    const int near = diff < S(0) ? node.left : node.right;
    const int far = diff < S(0) ? node.right : node.left;
    search(near, q, best, best_d2);
    if (diff * diff <= best_d2) search(far, q, best, best_d2);
  }

  void search_k(int ni, const Vec3<S>& q, std::size_t k,
                std::vector<std::pair<S, std::size_t>>& heap) const {
    const Node& node = nodes_[std::size_t(ni)];
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t idx = order_[i];
        const S d2 = (pts_.row(Eigen::Index(idx)) - q).squaredNorm();
        const std::pair<S, std::size_t> cand{d2, idx};
        if (heap.size() < k) {
          heap.push_back(cand);
          std::push_heap(heap.begin(), heap.end());
        } else if (cand < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = cand;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      return;
    }
    const S diff = q[node.axis] - node.split;
    const int near = diff < S(0) ? node.left : node.right;
    const int far = diff < S(0) ? node.right : node.left;
    search_k(near, q, k, heap);
    if (heap.size() < k || diff * diff <= heap.front().first) search_k(far, q, k, heap);
  }

  const PointMatrix<S> pts_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Exact k nearest neighbours of every point within one cloud, self
/// excluded. Row i lists the k neighbour indices of point i ordered by
/// (distance, index).
template <typename S>
std::vector<std::vector<std::size_t>> knn_graph(const PointMatrix<S>& pts, std::size_t k) {
  const std::size_t n = std::size_t(pts.rows());
  if (n <= k) throw InvalidArgument("knn_graph: need more points than neighbours (N > k)");
  KdTree<S> tree(pts);
  std::vector<std::vector<std::size_t>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    // query k+1 and drop the self hit
    auto nbrs = tree.knearest(pts.row(Eigen::Index(i)), k + 1);
    std::vector<std::size_t>& row = out[i];
    row.reserve(k);
    for (std::size_t idx : nbrs) {
      if (idx == i) continue;
      row.push_back(idx);
      if (row.size() == k) break;
    }
    // coincident duplicates can shadow the self hit; trim to k
    if (row.size() > k) row.resize(k);
  }
  return out;
}

}  // namespace genreg
