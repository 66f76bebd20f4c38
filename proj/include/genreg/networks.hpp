// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "genreg/autodiff.hpp"
#include "genreg/autodiff_geometry.hpp"
#include "genreg/kdtree.hpp"

namespace genreg {

/// Ordered collection of named parameter tensors. Order is fixed at
/// construction and defines the checkpoint and optimizer layouts.
template <typename S>
struct ParamSet {
  std::vector<std::pair<std::string, Tensor<S>>> items;

  Tensor<S>& at(const std::string& name) {
    for (auto& [n, t] : items)
      if (n == name) return t;
    throw InvalidArgument("ParamSet: unknown parameter '" + name + "'");
  }
  const Tensor<S>& at(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return t;
    throw InvalidArgument("ParamSet: unknown parameter '" + name + "'");
  }

  void add(const std::string& name, TensorShape shape, std::vector<S> values) {
    items.emplace_back(name, Tensor<S>::leaf(std::move(shape), std::move(values), true));
  }

  Eigen::Index total_size() const {
    Eigen::Index n = 0;
    for (const auto& [name, t] : items) n += t.numel();
    return n;
  }

  /// Deep copy with fresh leaf tensors; used to give each batch worker its
  /// own graph so gradient accumulation stays race-free.
  ParamSet clone() const {
    ParamSet out;
    for (const auto& [name, t] : items)
      out.items.emplace_back(name, Tensor<S>::leaf(t.shape(), t.values(), t.requires_grad()));
    return out;
  }

  void reset_grads() {
    for (auto& [name, t] : items) t.reset_grad();
  }
};

struct NetworkConfig {
  Eigen::Index n_points = 1024;
  Eigen::Index knn_k = 20;
  bool mixer_residual = true;

  bool operator==(const NetworkConfig&) const = default;
};

namespace net_detail {

template <typename S>
std::vector<S> xavier_uniform(Rng& rng, Eigen::Index fan_in, Eigen::Index fan_out) {
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  std::vector<S> v(std::size_t(fan_in * fan_out));
  for (auto& x : v) x = S(rng.uniform(-limit, limit));
  return v;
}

template <typename S>
void add_linear(ParamSet<S>& p, Rng& rng, const std::string& prefix, Eigen::Index in,
                Eigen::Index out, bool zero_init = false) {
  if (zero_init) {
    p.add(prefix + ".w", {in, out}, std::vector<S>(std::size_t(in * out), S(0)));
  } else {
    p.add(prefix + ".w", {in, out}, xavier_uniform<S>(rng, in, out));
  }
  p.add(prefix + ".b", {out}, std::vector<S>(std::size_t(out), S(0)));
}

}  // namespace net_detail

/// All trainable generator weights. The final T-Net layer starts at zero so
/// the predicted pose begins at the identity.
template <typename S>
ParamSet<S> init_generator_params(const NetworkConfig& cfg, std::uint64_t seed) {
  using net_detail::add_linear;
  const Eigen::Index n = cfg.n_points;
  Rng rng(mix_seed(seed, 0xA11CE));
  ParamSet<S> p;
  add_linear(p, rng, "tnet.point1", 3, 64);
  add_linear(p, rng, "tnet.point2", 64, 128);
  add_linear(p, rng, "tnet.point3", 128, 1024);
  add_linear(p, rng, "tnet.inter1", 2048, 512);
  add_linear(p, rng, "tnet.inter2", 512, 256);
  add_linear(p, rng, "tnet.inter3", 256, 6, /*zero_init=*/true);
  add_linear(p, rng, "gcnn.edge", 6, 6);
  add_linear(p, rng, "embed", 6, 128);
  for (const char* mixer : {"mixer1", "mixer2"}) {
    add_linear(p, rng, std::string(mixer) + ".token1", n, n);
    add_linear(p, rng, std::string(mixer) + ".token2", n, n);
    add_linear(p, rng, std::string(mixer) + ".chan1", 128, 128);
    add_linear(p, rng, std::string(mixer) + ".chan2", 128, 128);
  }
  add_linear(p, rng, "dec1", 256, 256);
  add_linear(p, rng, "dec2", 256, 128);
  add_linear(p, rng, "dec3", 128, 64);
  add_linear(p, rng, "dec4", 64, 3);
  return p;
}

/// Per-point discriminator weights, channels 3 -> 128 -> 64 -> 1.
template <typename S>
ParamSet<S> init_discriminator_params(std::uint64_t seed) {
  using net_detail::add_linear;
  Rng rng(mix_seed(seed, 0xD15C));
  ParamSet<S> p;
  add_linear(p, rng, "fc1", 3, 128);
  add_linear(p, rng, "fc2", 128, 64);
  add_linear(p, rng, "fc3", 64, 1);
  return p;
}

// ---------------------------------------------------------------------------
// graph-level forwards

template <typename S>
struct TnetOutput {
  Tensor<S> transform;  // [4,4]
  Tensor<S> moved;      // [N,3] first input carried through the transform
  Tensor<S> six;        // raw pose parameters
};

/// Shared T-Net: per-point MLP [64,128,1024] on each cloud, max-pool, then
/// the interaction MLP [512,256,6] on the concatenated globals. The six
/// outputs are a degree/translation pose converted to a rigid transform that
/// is applied to the first input.
template <typename S>
TnetOutput<S> tnet_graph(const Tensor<S>& p, const Tensor<S>& q, const ParamSet<S>& params) {
  if (p.rank() != 2 || p.dim(1) != 3 || q.rank() != 2 || q.dim(1) != 3 || p.dim(0) != q.dim(0))
    throw ConfigError("tnet: point clouds must both be [N,3] with matching N, got " +
                      shape_string(p.shape()) + " and " + shape_string(q.shape()));
  auto point_feat = [&](const Tensor<S>& x) {
    Tensor<S> h = leaky_relu(affine(x, params.at("tnet.point1.w"), params.at("tnet.point1.b")));
    h = leaky_relu(affine(h, params.at("tnet.point2.w"), params.at("tnet.point2.b")));
    h = affine(h, params.at("tnet.point3.w"), params.at("tnet.point3.b"));
    return reduce_max(h, 0);  // [1024]
  };
  const Tensor<S> global = concat<S>({point_feat(p), point_feat(q)}, 0);  // [2048]
  Tensor<S> h = leaky_relu(affine(global, params.at("tnet.inter1.w"), params.at("tnet.inter1.b")));
  h = leaky_relu(affine(h, params.at("tnet.inter2.w"), params.at("tnet.inter2.b")));
  const Tensor<S> six = affine(h, params.at("tnet.inter3.w"), params.at("tnet.inter3.b"));
  TnetOutput<S> out;
  out.six = six;
  out.transform = pose_to_transform(six);
  out.moved = apply_transform(p, out.transform);
  return out;
}

/// Edge convolution: for each point, features concat(x_i, x_j - x_i) over
/// its k exact nearest neighbours, a shared 6->6 affine with leaky-relu, and
/// a max over the neighbours.
template <typename S>
Tensor<S> gcnn_graph(const Tensor<S>& pts, const ParamSet<S>& params, Eigen::Index k) {
  const Eigen::Index n = pts.dim(0);
  if (n <= k) throw InvalidArgument("gcnn: need N > k, got N=" + std::to_string(n) + " k=" + std::to_string(k));
  const auto neighbours = knn_graph<S>(pts.to_points(), std::size_t(k));
  std::vector<std::size_t> centre_idx(std::size_t(n * k));
  std::vector<std::size_t> nbr_idx(std::size_t(n * k));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < k; ++j) {
      centre_idx[std::size_t(i * k + j)] = std::size_t(i);
      nbr_idx[std::size_t(i * k + j)] = neighbours[std::size_t(i)][std::size_t(j)];
    }
  const Tensor<S> xi = gather_rows(pts, centre_idx);
  const Tensor<S> xj = gather_rows(pts, nbr_idx);
  const Tensor<S> edge = concat<S>({xi, sub(xj, xi)}, 1);  // [N*k, 6]
  const Tensor<S> h = leaky_relu(affine(edge, params.at("gcnn.edge.w"), params.at("gcnn.edge.b")));
  return reduce_max(reshape(h, {n, k, 6}), 1);  // [N, 6]
}

/// One mixer layer: token-mixing MLP across the N point positions (hidden
/// width N, GELU), then channel-mixing MLP across the C channels (hidden
/// width C, GELU), each with a residual connection unless disabled.
template <typename S>
Tensor<S> mixer_layer_graph(const Tensor<S>& feat, const ParamSet<S>& params,
                            const std::string& prefix, bool residual) {
  if (feat.rank() != 2)
    throw ShapeError("mixer_layer: expected [N,C], got " + shape_string(feat.shape()));
  const Tensor<S> t = transpose(feat, 0, 1);  // [C, N]
  Tensor<S> h = gelu(affine(t, params.at(prefix + ".token1.w"), params.at(prefix + ".token1.b")));
  h = affine(h, params.at(prefix + ".token2.w"), params.at(prefix + ".token2.b"));
  const Tensor<S> token_out = transpose(h, 0, 1);
  const Tensor<S> y = residual ? add(feat, token_out) : token_out;
  Tensor<S> h2 = gelu(affine(y, params.at(prefix + ".chan1.w"), params.at(prefix + ".chan1.b")));
  h2 = affine(h2, params.at(prefix + ".chan2.w"), params.at(prefix + ".chan2.b"));
  return residual ? add(y, h2) : h2;
}

template <typename S>
struct BundleGraph {
  Tensor<S> feat;    // [N, 128]
  Tensor<S> global;  // [128], max over points per channel
};

/// GCNN -> per-point 6->128 embedding -> two mixer layers -> per-point
/// features plus the max-pooled global vector.
template <typename S>
BundleGraph<S> pointmixer_graph(const Tensor<S>& pts, const ParamSet<S>& params,
                                const NetworkConfig& cfg) {
  const Tensor<S> graph_feat = gcnn_graph(pts, params, cfg.knn_k);
  Tensor<S> feat = affine(graph_feat, params.at("embed.w"), params.at("embed.b"));
  feat = mixer_layer_graph(feat, params, "mixer1", cfg.mixer_residual);
  feat = mixer_layer_graph(feat, params, "mixer2", cfg.mixer_residual);
  BundleGraph<S> out;
  out.feat = feat;
  out.global = reduce_max(feat, 0);
  return out;
}

/// Fuses each cloud's per-point features with the difference of the pooled
/// globals, broadcast across points: fusion_i = [feat_i, g_self - g_other].
template <typename S>
std::pair<Tensor<S>, Tensor<S>> feature_interaction_graph(const BundleGraph<S>& b1,
                                                          const BundleGraph<S>& b2) {
  if (b1.feat.dim(0) != b2.feat.dim(0))
    throw ShapeError("feature_interaction: point counts differ, " + shape_string(b1.feat.shape()) +
                     " vs " + shape_string(b2.feat.shape()));
  const Eigen::Index n = b1.feat.dim(0);
  const Tensor<S> d12 = sub(b1.global, b2.global);
  const Tensor<S> d21 = sub(b2.global, b1.global);
  const Tensor<S> zeros = Tensor<S>::zeros({n, 128});
  const Tensor<S> fusion1 = concat<S>({b1.feat, add(zeros, d12)}, 1);
  const Tensor<S> fusion2 = concat<S>({b2.feat, add(zeros, d21)}, 1);
  return {fusion1, fusion2};
}

/// Four point-wise convolutions 256 -> 256 -> 128 -> 64 -> 3, GELU after the
/// first three; output row i corresponds to input row i.
template <typename S>
Tensor<S> decode_graph(const Tensor<S>& fusion, const ParamSet<S>& params) {
  if (fusion.rank() != 2 || fusion.dim(1) != 256)
    throw ShapeError("decode: expected [N,256], got " + shape_string(fusion.shape()));
  Tensor<S> h = gelu(affine(fusion, params.at("dec1.w"), params.at("dec1.b")));
  h = gelu(affine(h, params.at("dec2.w"), params.at("dec2.b")));
  h = gelu(affine(h, params.at("dec3.w"), params.at("dec3.b")));
  return affine(h, params.at("dec4.w"), params.at("dec4.b"));
}

template <typename S>
struct GeneratorOutput {
  Tensor<S> a_generated;  // branch of A, driven toward alignment with B
  Tensor<S> b_generated;  // branch of B, driven toward alignment with A
  Tensor<S> a_moved;      // A after its T-Net transform
  Tensor<S> b_moved;
  Tensor<S> t_norm_a;     // [4,4] T-Net transforms
  Tensor<S> t_norm_b;
};

/// Full two-branch generator. Both branches share every parameter; index i
/// of each generated cloud corresponds to index i of that branch's input.
template <typename S>
GeneratorOutput<S> generator_graph(const Tensor<S>& a, const Tensor<S>& b,
                                   const ParamSet<S>& params, const NetworkConfig& cfg) {
  GeneratorOutput<S> out;
  const TnetOutput<S> ta = tnet_graph(a, b, params);
  const TnetOutput<S> tb = tnet_graph(b, a, params);
  out.a_moved = ta.moved;
  out.b_moved = tb.moved;
  out.t_norm_a = ta.transform;
  out.t_norm_b = tb.transform;
  const BundleGraph<S> bundle_a = pointmixer_graph(ta.moved, params, cfg);
  const BundleGraph<S> bundle_b = pointmixer_graph(tb.moved, params, cfg);
  const auto [fusion1, fusion2] = feature_interaction_graph(bundle_a, bundle_b);
  out.a_generated = decode_graph(fusion1, params);
  out.b_generated = decode_graph(fusion2, params);
  return out;
}

/// First-branch output only: the generated cloud for the pair (x, y).
/// Used by the cycle loss, which re-generates from a generated cloud.
template <typename S>
Tensor<S> generator_first_branch_graph(const Tensor<S>& x, const Tensor<S>& y,
                                       const ParamSet<S>& params, const NetworkConfig& cfg) {
  const TnetOutput<S> tx = tnet_graph(x, y, params);
  const TnetOutput<S> ty = tnet_graph(y, x, params);
  const BundleGraph<S> bundle_x = pointmixer_graph(tx.moved, params, cfg);
  const BundleGraph<S> bundle_y = pointmixer_graph(ty.moved, params, cfg);
  const auto [fusion1, fusion2] = feature_interaction_graph(bundle_x, bundle_y);
  (void)fusion2;
  return decode_graph(fusion1, params);
}

/// Per-point MLP 3 -> 128 -> 64 -> 1 with leaky-relu after the first two
/// layers, mean over points, sigmoid. Output strictly inside (0,1).
template <typename S>
Tensor<S> discriminator_graph(const Tensor<S>& pts, const ParamSet<S>& params) {
  if (pts.rank() != 2 || pts.dim(1) != 3)
    throw ShapeError("discriminator: expected [N,3], got " + shape_string(pts.shape()));
  Tensor<S> h = leaky_relu(affine(pts, params.at("fc1.w"), params.at("fc1.b")));
  h = leaky_relu(affine(h, params.at("fc2.w"), params.at("fc2.b")));
  h = affine(h, params.at("fc3.w"), params.at("fc3.b"));  // [N,1]
  return reshape(sigmoid(reduce_mean(h, 0)), {});
}

// ---------------------------------------------------------------------------
// cloud-level wrappers (inference mode)

template <typename S>
struct FeatureBundle {
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> feat;
  Eigen::Matrix<S, Eigen::Dynamic, 1> global;
};

template <typename S>
std::pair<RigidTransform<S>, PointCloud<S>> tnet_forward(const PointCloud<S>& p,
                                                         const PointCloud<S>& q,
                                                         const ParamSet<S>& params) {
  NoGradGuard guard;
  const auto out = tnet_graph(Tensor<S>::from_points(p.points), Tensor<S>::from_points(q.points), params);
  RigidTransform<S> t;
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) t.matrix(i, j) = out.transform.values()[std::size_t(i * 4 + j)];
  return {t, PointCloud<S>(out.moved.to_points())};
}

template <typename S>
FeatureBundle<S> pointmixer_forward(const PointCloud<S>& p, const ParamSet<S>& params,
                                    const NetworkConfig& cfg) {
  NoGradGuard guard;
  const auto bundle = pointmixer_graph(Tensor<S>::from_points(p.points), params, cfg);
  FeatureBundle<S> out;
  out.feat = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      bundle.feat.values().data(), bundle.feat.dim(0), 128);
  out.global = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(bundle.global.values().data(), 128);
  return out;
}

template <typename S>
struct GeneratorResult {
  PointCloud<S> a_generated;
  PointCloud<S> b_generated;
  PointCloud<S> a_moved;
  PointCloud<S> b_moved;
  RigidTransform<S> t_norm_a;
  RigidTransform<S> t_norm_b;
};

template <typename S>
GeneratorResult<S> generator_forward(const PointCloud<S>& a, const PointCloud<S>& b,
                                     const ParamSet<S>& params, const NetworkConfig& cfg) {
  NoGradGuard guard;
  const auto out = generator_graph(Tensor<S>::from_points(a.points), Tensor<S>::from_points(b.points),
                                   params, cfg);
  GeneratorResult<S> result;
  result.a_generated = PointCloud<S>(out.a_generated.to_points(), a.id);
  result.b_generated = PointCloud<S>(out.b_generated.to_points(), b.id);
  result.a_moved = PointCloud<S>(out.a_moved.to_points());
  result.b_moved = PointCloud<S>(out.b_moved.to_points());
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) {
      result.t_norm_a.matrix(i, j) = out.t_norm_a.values()[std::size_t(i * 4 + j)];
      result.t_norm_b.matrix(i, j) = out.t_norm_b.values()[std::size_t(i * 4 + j)];
    }
  return result;
}

template <typename S>
S discriminator_forward(const PointCloud<S>& p, const ParamSet<S>& params) {
  NoGradGuard guard;
  return discriminator_graph(Tensor<S>::from_points(p.points), params).value();
}

}  // namespace genreg
