// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <optional>
#include <string>
#include <utility>

#include "genreg/core.hpp"

namespace genreg {

template <typename S>
using PointMatrix = Eigen::Matrix<S, Eigen::Dynamic, 3, Eigen::RowMajor>;
template <typename S>
using Mat3 = Eigen::Matrix<S, 3, 3>;
template <typename S>
using Mat4 = Eigen::Matrix<S, 4, 4>;
template <typename S>
using Vec3 = Eigen::Matrix<S, 1, 3>;  // row vector, matching the point layout

/// Ordered list of N 3-D points. Ordering is meaningful: generated clouds
/// keep index correspondence with their source cloud.
template <typename S>
struct PointCloud {
  PointMatrix<S> points;
  std::optional<std::string> id;

  PointCloud() = default;
  explicit PointCloud(PointMatrix<S> pts, std::optional<std::string> label = std::nullopt)
      : points(std::move(pts)), id(std::move(label)) {}

  Eigen::Index size() const { return points.rows(); }

  void validate() const {
    if (points.rows() < 1) throw InvalidArgument("PointCloud: empty cloud");
    if (!points.allFinite()) throw InvalidArgument("PointCloud: non-finite coordinate");
  }

  template <typename T>
  PointCloud<T> cast() const {
    PointCloud<T> out;
    out.points = points.template cast<T>();
    out.id = id;
    return out;
  }
};

/// 4x4 homogeneous rigid motion under the row-vector convention:
/// transformed point = [p, 1] * matrix, translation in the fourth row.
template <typename S>
struct RigidTransform {
  Mat4<S> matrix = Mat4<S>::Identity();

  static RigidTransform identity() { return RigidTransform{}; }

  Mat3<S> rotation() const { return matrix.template topLeftCorner<3, 3>(); }
  Vec3<S> translation() const { return matrix.template block<1, 3>(3, 0); }

  void validate(S tol = S(1e-9)) const {
    if (!matrix.allFinite()) throw InvalidArgument("RigidTransform: non-finite entry");
    const Mat3<S> r = rotation();
    const S ortho = (r.transpose() * r - Mat3<S>::Identity()).template lpNorm<Eigen::Infinity>();
    if (ortho > tol) throw InvalidArgument("RigidTransform: R^T R deviates from identity by " + std::to_string(double(ortho)));
    if (std::abs(r.determinant() - S(1)) > tol)
      throw InvalidArgument("RigidTransform: det(R) != +1");
    if (matrix(0, 3) != S(0) || matrix(1, 3) != S(0) || matrix(2, 3) != S(0) || matrix(3, 3) != S(1))
      throw InvalidArgument("RigidTransform: fourth column must be (0,0,0,1)^T");
  }

  template <typename T>
  RigidTransform<T> cast() const {
    RigidTransform<T> out;
    out.matrix = matrix.template cast<T>();
    return out;
  }
};

/// Six-parameter pose: rotation angles in degrees applied in fixed
/// X-then-Y-then-Z intrinsic order, plus a translation.
template <typename S>
struct EulerPose {
  Vec3<S> angles_deg = Vec3<S>::Zero();
  Vec3<S> translation = Vec3<S>::Zero();
};

namespace detail {

// Column-convention single-axis rotations; the row-convention block is the
// transpose of their product.
template <typename S>
Mat3<S> rot_x_col(S a) {
  const S c = std::cos(a), s = std::sin(a);
  Mat3<S> r;
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}
template <typename S>
Mat3<S> rot_y_col(S b) {
  const S c = std::cos(b), s = std::sin(b);
  Mat3<S> r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}
template <typename S>
Mat3<S> rot_z_col(S c0) {
  const S c = std::cos(c0), s = std::sin(c0);
  Mat3<S> r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

}  // namespace detail

template <typename S>
RigidTransform<S> euler_to_transform(const EulerPose<S>& pose) {
  if (!pose.angles_deg.allFinite() || !pose.translation.allFinite())
    throw InvalidArgument("euler_to_transform: non-finite pose");
  const S a = deg_to_rad(pose.angles_deg[0]);
  const S b = deg_to_rad(pose.angles_deg[1]);
  const S c = deg_to_rad(pose.angles_deg[2]);
  const Mat3<S> r_col = detail::rot_x_col(a) * detail::rot_y_col(b) * detail::rot_z_col(c);
  RigidTransform<S> out;
  out.matrix.setIdentity();
  out.matrix.template topLeftCorner<3, 3>() = r_col.transpose();
  out.matrix.template block<1, 3>(3, 0) = pose.translation;
  return out;
}

/// Inverse of euler_to_transform for poses with the middle angle in
/// (-90, 90) degrees; angles returned in principal ranges.
template <typename S>
EulerPose<S> transform_to_euler(const RigidTransform<S>& t) {
  const Mat3<S> r_col = t.rotation().transpose();
  EulerPose<S> pose;
  const S sy = std::clamp(r_col(0, 2), S(-1), S(1));
  pose.angles_deg[1] = rad_to_deg(std::asin(sy));
  pose.angles_deg[0] = rad_to_deg(std::atan2(-r_col(1, 2), r_col(2, 2)));
  pose.angles_deg[2] = rad_to_deg(std::atan2(-r_col(0, 1), r_col(0, 0)));
  pose.translation = t.translation();
  return pose;
}

template <typename S>
PointCloud<S> apply(const PointCloud<S>& pc, const RigidTransform<S>& t) {
  PointCloud<S> out;
  out.id = pc.id;
  out.points = pc.points * t.rotation();
  out.points.rowwise() += t.translation();
  return out;
}

/// compose(T1, T2) applies T1 first: apply(pc, compose(T1,T2)) ==
/// apply(apply(pc, T1), T2).
template <typename S>
RigidTransform<S> compose(const RigidTransform<S>& t1, const RigidTransform<S>& t2) {
  RigidTransform<S> out;
  out.matrix = t1.matrix * t2.matrix;
  // scrub round-off in the fixed column
  out.matrix(0, 3) = out.matrix(1, 3) = out.matrix(2, 3) = S(0);
  out.matrix(3, 3) = S(1);
  return out;
}

template <typename S>
RigidTransform<S> invert(const RigidTransform<S>& t) {
  const Mat3<S> rt = t.rotation().transpose();
  RigidTransform<S> out;
  out.matrix.setIdentity();
  out.matrix.template topLeftCorner<3, 3>() = rt;
  out.matrix.template block<1, 3>(3, 0) = -t.translation() * rt;
  return out;
}

/// Draw a pose with each Euler angle uniform in rot_range_deg and each
/// translation component uniform in trans_range. Deterministic per seed.
template <typename S>
std::pair<RigidTransform<S>, EulerPose<S>> random_transform(std::uint64_t seed,
                                                            std::pair<S, S> rot_range_deg,
                                                            std::pair<S, S> trans_range) {
  if (!(rot_range_deg.first <= rot_range_deg.second) || !(trans_range.first <= trans_range.second))
    throw InvalidArgument("random_transform: range lo > hi");
  if (!std::isfinite(double(rot_range_deg.first)) || !std::isfinite(double(rot_range_deg.second)) ||
      !std::isfinite(double(trans_range.first)) || !std::isfinite(double(trans_range.second)))
    throw InvalidArgument("random_transform: non-finite range");
  Rng rng(seed);
  EulerPose<S> pose;
  for (int i = 0; i < 3; ++i) pose.angles_deg[i] = S(rng.uniform(double(rot_range_deg.first), double(rot_range_deg.second)));
  for (int i = 0; i < 3; ++i) pose.translation[i] = S(rng.uniform(double(trans_range.first), double(trans_range.second)));
  return {euler_to_transform(pose), pose};
}

namespace detail {

/// Kabsch on raw coordinate blocks. Returns false (instead of throwing) on
/// rank-deficient cross-covariance so hypothesis loops can mark candidates
/// degenerate cheaply. gap_out, when given, receives the smallest
/// singular-value gap of the cross-covariance.
template <typename S, typename DerivedA, typename DerivedB>
bool kabsch_raw(const Eigen::MatrixBase<DerivedA>& src, const Eigen::MatrixBase<DerivedB>& dst,
                RigidTransform<S>& out, S* gap_out = nullptr) {
  const Eigen::Index n = src.rows();
  const Vec3<S> cs = src.colwise().mean();
  const Vec3<S> cd = dst.colwise().mean();
  const Mat3<S> h = (src.rowwise() - cs).transpose() * (dst.rowwise() - cd);
  Eigen::JacobiSVD<Mat3<S>> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (gap_out) {
    *gap_out = std::min({std::abs(sv[0] - sv[1]), std::abs(sv[1] - sv[2]), std::abs(sv[0] - sv[2])});
  }
  const S scale = std::max(sv[0], S(1));
  const S rank_eps = S(n) * std::numeric_limits<S>::epsilon() * scale * S(16);
  if (sv[1] <= rank_eps) return false;
  Mat3<S> d = Mat3<S>::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < S(0)) d(2, 2) = S(-1);
  const Mat3<S> r = svd.matrixU() * d * svd.matrixV().transpose();
  out.matrix.setIdentity();
  out.matrix.template topLeftCorner<3, 3>() = r;
  out.matrix.template block<1, 3>(3, 0) = cd - cs * r;
  return true;
}

}  // namespace detail

/// Least-squares rigid fit: returns T minimizing sum_i |[src_i,1] T - dst_i|^2.
/// Reflections are prevented by sign-correcting the smallest singular
/// direction. Throws DegenerateConfiguration when the cross-covariance has
/// rank < 2 (e.g. collinear source points).
template <typename S>
RigidTransform<S> kabsch(const PointMatrix<S>& src, const PointMatrix<S>& dst) {
  if (src.rows() != dst.rows()) throw SizeMismatch("kabsch: src/dst point counts differ");
  if (src.rows() < 3) throw InvalidArgument("kabsch: needs at least 3 points");
  RigidTransform<S> out;
  if (!detail::kabsch_raw<S>(src, dst, out))
    throw DegenerateConfiguration("kabsch: cross-covariance rank < 2");
  return out;
}

template <typename S>
RigidTransform<S> kabsch(const PointCloud<S>& src, const PointCloud<S>& dst) {
  return kabsch<S>(src.points, dst.points);
}

namespace detail {
template <typename S>
S wrap_angle_diff_deg(S d) {
  d = std::abs(d);
  d = std::fmod(d, S(360));
  return d > S(180) ? S(360) - d : d;
}
}  // namespace detail

/// Mean absolute difference of the three intrinsic-XYZ Euler angles, degrees.
template <typename S>
S rotation_error(const RigidTransform<S>& t_est, const RigidTransform<S>& t_gt) {
  const EulerPose<S> a = transform_to_euler(t_est);
  const EulerPose<S> b = transform_to_euler(t_gt);
  S sum = S(0);
  for (int i = 0; i < 3; ++i) sum += detail::wrap_angle_diff_deg(a.angles_deg[i] - b.angles_deg[i]);
  return sum / S(3);
}

/// Auxiliary diagnostic only: geodesic angle between the rotation blocks.
template <typename S>
S rotation_error_geodesic_deg(const RigidTransform<S>& t_est, const RigidTransform<S>& t_gt) {
  const Mat3<S> rel = t_est.rotation() * t_gt.rotation().transpose();
  const S c = std::clamp((rel.trace() - S(1)) / S(2), S(-1), S(1));
  return rad_to_deg(std::acos(c));
}

/// Mean absolute difference of the three translation components.
template <typename S>
S translation_error(const RigidTransform<S>& t_est, const RigidTransform<S>& t_gt) {
  return (t_est.translation() - t_gt.translation()).cwiseAbs().mean();
}

}  // namespace genreg
