// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "genreg/autodiff.hpp"
#include "genreg/geometry.hpp"

namespace genreg {

struct RigidFitInfo {
  double singular_gap = 0.0;
  /// Set when the singular-value gap of the cross-covariance fell below the
  /// guard threshold; the op then contributes value but no gradient.
  bool grad_suppressed = false;
};

/// Differentiable least-squares rigid fit between two [k,3] tensors,
/// returning the [4,4] row-convention transform. The backward pass
/// propagates through the SVD of the cross-covariance; when its singular
/// values are closer than `gap_threshold` the derivative is numerically
/// unstable and the gradient is suppressed for this call.
template <typename S>
Tensor<S> rigid_fit(const Tensor<S>& src, const Tensor<S>& dst, RigidFitInfo* info = nullptr,
                    S gap_threshold = S(1e-6)) {
  if (src.rank() != 2 || src.dim(1) != 3 || dst.rank() != 2 || dst.dim(1) != 3 ||
      src.dim(0) != dst.dim(0))
    throw ShapeError("rigid_fit: expected matching [k,3] tensors, got " + shape_string(src.shape()) +
                     " and " + shape_string(dst.shape()));
  const Eigen::Index k = src.dim(0);
  if (k < 3) throw InvalidArgument("rigid_fit: needs at least 3 correspondences");

  const PointMatrix<S> sp = src.to_points();
  const PointMatrix<S> dp = dst.to_points();
  const Vec3<S> cs = sp.colwise().mean();
  const Vec3<S> cd = dp.colwise().mean();
  const PointMatrix<S> x = sp.rowwise() - cs;
  const PointMatrix<S> y = dp.rowwise() - cd;
  const Mat3<S> h = x.transpose() * y;
  Eigen::JacobiSVD<Mat3<S>> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix<S, 3, 1> sv = svd.singularValues();
  const S scale = std::max(sv[0], S(1));
  if (sv[1] <= S(k) * std::numeric_limits<S>::epsilon() * scale * S(16))
    throw DegenerateConfiguration("rigid_fit: cross-covariance rank < 2");
  const Mat3<S> u = svd.matrixU();
  const Mat3<S> v = svd.matrixV();
  Mat3<S> d = Mat3<S>::Identity();
  if ((u * v.transpose()).determinant() < S(0)) d(2, 2) = S(-1);
  const Mat3<S> r = u * d * v.transpose();
  const Vec3<S> t = cd - cs * r;

  const S gap = std::min({std::abs(sv[0] - sv[1]), std::abs(sv[1] - sv[2]), std::abs(sv[0] - sv[2])});
  const bool suppressed = gap < gap_threshold;
  if (info) {
    info->singular_gap = double(gap);
    info->grad_suppressed = suppressed;
  }

  std::vector<S> values(16, S(0));
  Mat4<S> m = Mat4<S>::Identity();
  m.template topLeftCorner<3, 3>() = r;
  m.template block<1, 3>(3, 0) = t;
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) values[std::size_t(i * 4 + j)] = m(i, j);

  auto sn = src.node();
  auto dn = dst.node();
  auto backward = [sn, dn, x, y, u, v, sv, d, r, cs, k, suppressed](TensorNode<S>& self) {
    if (suppressed) return;
    Mat3<S> rbar = Mat3<S>::Zero();
    Vec3<S> tbar;
    for (Eigen::Index i = 0; i < 3; ++i)
      for (Eigen::Index j = 0; j < 3; ++j) rbar(i, j) = self.grad[std::size_t(i * 4 + j)];
    for (Eigen::Index j = 0; j < 3; ++j) tbar[j] = self.grad[std::size_t(12 + j)];

    // t = cd - cs R
    const Vec3<S> cd_bar = tbar;
    const Vec3<S> cs_bar = -tbar * r.transpose();
    rbar -= cs.transpose() * tbar;

    // R = U D V^T
    const Mat3<S> ubar = rbar * v * d;
    const Mat3<S> vbar = rbar.transpose() * u * d;

    // SVD backward for H = U S V^T with zero gradient on the singular values
    Mat3<S> f = Mat3<S>::Zero();
    for (Eigen::Index i = 0; i < 3; ++i)
      for (Eigen::Index j = 0; j < 3; ++j)
        if (i != j) f(i, j) = S(1) / (sv[j] * sv[j] - sv[i] * sv[i]);
    const Mat3<S> sigma = sv.asDiagonal();
    const Mat3<S> ju = f.cwiseProduct(u.transpose() * ubar - ubar.transpose() * u);
    const Mat3<S> jv = f.cwiseProduct(v.transpose() * vbar - vbar.transpose() * v);
    const Mat3<S> hbar = u * (ju * sigma + sigma * jv) * v.transpose();

    // H = X^T Y with X, Y centered
    const PointMatrix<S> xbar = y * hbar.transpose();
    const PointMatrix<S> ybar = x * hbar;

    if (sn->requires_grad) {
      PointMatrix<S> gs = xbar;
      const Vec3<S> colsum = xbar.colwise().sum();
      gs.rowwise() -= colsum / S(k);
      gs.rowwise() += cs_bar / S(k);
      std::vector<S> flat(std::size_t(3 * k));
      Eigen::Map<PointMatrix<S>>(flat.data(), k, 3) = gs;
      ad_detail::accumulate(*sn, flat);
    }
    if (dn->requires_grad) {
      PointMatrix<S> gd = ybar;
      const Vec3<S> colsum = ybar.colwise().sum();
      gd.rowwise() -= colsum / S(k);
      gd.rowwise() += cd_bar / S(k);
      std::vector<S> flat(std::size_t(3 * k));
      Eigen::Map<PointMatrix<S>>(flat.data(), k, 3) = gd;
      ad_detail::accumulate(*dn, flat);
    }
  };
  return Tensor<S>(ad_detail::make_result<S>({4, 4}, std::move(values), "rigid_fit", {sn, dn}, backward));
}

/// Six pose parameters (three angles in degrees, three translations) to the
/// [4,4] row-convention transform, fully differentiable. Rotation order is
/// the library-wide X-then-Y-then-Z intrinsic convention.
template <typename S>
Tensor<S> pose_to_transform(const Tensor<S>& six) {
  if (six.numel() != 6) throw ShapeError("pose_to_transform: expected 6 values, got " + shape_string(six.shape()));
  const Tensor<S> flat = reshape(six, {6});
  const S to_rad = pi<S>() / S(180);
  const Tensor<S> a = mul_scalar(slice(flat, 0, 0, 1), to_rad);
  const Tensor<S> b = mul_scalar(slice(flat, 0, 1, 1), to_rad);
  const Tensor<S> c = mul_scalar(slice(flat, 0, 2, 1), to_rad);
  const Tensor<S> trans = slice(flat, 0, 3, 3);

  const Tensor<S> one = Tensor<S>::scalar(S(1));
  const Tensor<S> zero = Tensor<S>::scalar(S(0));
  auto mat3 = [](std::vector<Tensor<S>> cells) {
    for (auto& cell : cells) cell = reshape(cell, {1});
    return reshape(concat(cells, 0), {3, 3});
  };
  const Tensor<S> ca = cos(a), sa = sin(a);
  const Tensor<S> cb = cos(b), sb = sin(b);
  const Tensor<S> cc = cos(c), sc = sin(c);
  // column-convention axis rotations; row block is the transposed product
  const Tensor<S> rx = mat3({one, zero, zero, zero, ca, mul_scalar(sa, S(-1)), zero, sa, ca});
  const Tensor<S> ry = mat3({cb, zero, sb, zero, one, zero, mul_scalar(sb, S(-1)), zero, cb});
  const Tensor<S> rz = mat3({cc, mul_scalar(sc, S(-1)), zero, sc, cc, zero, zero, zero, one});
  const Tensor<S> r_row = transpose(matmul(matmul(rx, ry), rz), 0, 1);

  const Tensor<S> zeros31 = Tensor<S>::zeros({3, 1});
  const Tensor<S> top = concat<S>({r_row, zeros31}, 1);
  const Tensor<S> bottom = concat<S>({reshape(trans, {1, 3}), Tensor<S>::full({1, 1}, S(1))}, 1);
  return concat<S>({top, bottom}, 0);
}

/// Inverse of a rigid [4,4] graph tensor using the closed form
/// [[R,0],[t,1]]^-1 = [[R^T,0],[-t R^T,1]].
template <typename S>
Tensor<S> rigid_inverse(const Tensor<S>& t) {
  if (t.rank() != 2 || t.dim(0) != 4 || t.dim(1) != 4)
    throw ShapeError("rigid_inverse: expected [4,4], got " + shape_string(t.shape()));
  const Tensor<S> r = slice(slice(t, 0, 0, 3), 1, 0, 3);
  const Tensor<S> trans = slice(slice(t, 0, 3, 1), 1, 0, 3);  // [1,3]
  const Tensor<S> rt = transpose(r, 0, 1);
  const Tensor<S> tinv = mul_scalar(matmul(trans, rt), S(-1));
  const Tensor<S> top = concat<S>({rt, Tensor<S>::zeros({3, 1})}, 1);
  const Tensor<S> bottom = concat<S>({tinv, Tensor<S>::full({1, 1}, S(1))}, 1);
  return concat<S>({top, bottom}, 0);
}

/// apply() on the graph: out[i] = first three components of [p_i, 1] T.
template <typename S>
Tensor<S> apply_transform(const Tensor<S>& points, const Tensor<S>& t) {
  if (points.rank() != 2 || points.dim(1) != 3)
    throw ShapeError("apply_transform: expected [N,3], got " + shape_string(points.shape()));
  const Tensor<S> ones = Tensor<S>::full({points.dim(0), 1}, S(1));
  const Tensor<S> homo = concat<S>({points, ones}, 1);
  return slice(matmul(homo, t), 1, 0, 3);
}

/// Euclidean norm of each row: [N,C] -> [N].
template <typename S>
Tensor<S> row_norms(const Tensor<S>& x) {
  return sqrt(reduce_sum(mul(x, x), 1));
}

/// Frobenius norm of the whole tensor, scalar result.
template <typename S>
Tensor<S> frobenius_norm(const Tensor<S>& x) {
  return sqrt(reduce_sum_all(mul(x, x)));
}

}  // namespace genreg
