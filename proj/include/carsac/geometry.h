#pragma once

#include "carsac/types.h"

#include <Eigen/Core>

#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace carsac {

inline constexpr int kMinimalSampleSize = 8;
inline constexpr double kInfiniteResidual = std::numeric_limits<double>::infinity();

Eigen::Matrix3d skew(const Eigen::Vector3d& v);

// Squared Sampson distance of (p1, p2) to the epipolar model m. Invariant to
// the scale and sign of m. Returns +inf when all four gradient terms vanish.
double sampson_sq(const Eigen::Matrix3d& m, const Eigen::Vector2d& p1, const Eigen::Vector2d& p2);
double sampson_sq(const ModelHypothesis& model, const Correspondence& c);

// Closest rank-2 matrix (smallest singular value zeroed), unit Frobenius norm.
Eigen::Matrix3d project_to_rank2(const Eigen::Matrix3d& m);
// Closest essential matrix: singular values (s, s, 0) with s = (s1 + s2) / 2,
// then scaled to unit Frobenius norm.
Eigen::Matrix3d project_to_essential(const Eigen::Matrix3d& m);

/// Normalized 8-point algorithm (Hartley conditioning, DLT, manifold projection).
///
/// `sample` indexes into `data`; at least 8 indices are required. Returns
/// std::nullopt when the conditioned design matrix has rank below 8 or the
/// sample is spatially degenerate.
std::optional<ModelHypothesis> eight_point(std::span<const Correspondence> data,
                                           std::span<const int> sample, ModelKind kind);
std::optional<ModelHypothesis> eight_point(std::span<const Correspondence> data, ModelKind kind);

Correspondence normalize_by_intrinsics(const Correspondence& c, const CameraIntrinsics& k1,
                                       const CameraIntrinsics& k2);
std::vector<Correspondence> normalize_by_intrinsics(std::span<const Correspondence> data,
                                                    const CameraIntrinsics& k1,
                                                    const CameraIntrinsics& k2);
Correspondence denormalize_by_intrinsics(const Correspondence& c, const CameraIntrinsics& k1,
                                         const CameraIntrinsics& k2);

Eigen::Matrix3d essential_from_pose(const RelativePose& pose);
// F = K2^-T E K1^-1, unit Frobenius norm.
Eigen::Matrix3d fundamental_from_essential(const Eigen::Matrix3d& e, const CameraIntrinsics& k1,
                                           const CameraIntrinsics& k2);

/// Picks the (R, t) candidate of E with the most points in front of both
/// cameras, using midpoint triangulation on `inliers` (normalized coordinates).
/// Ties go to the smaller mean reprojection residual. Throws
/// ErrorCode::kPoseUndecidable when no candidate has a positive-depth point.
RelativePose decompose_essential(const ModelHypothesis& e, std::span<const Correspondence> inliers);

double rotation_error_deg(const Eigen::Matrix3d& estimate, const Eigen::Matrix3d& gt);
double translation_error_deg(const Eigen::Vector3d& estimate, const Eigen::Vector3d& gt);
// max(rotation error, translation direction error) in degrees.
double pose_error_deg(const RelativePose& estimate, const RelativePose& gt);

// E = K2^T F K1 projected onto the essential manifold.
ModelHypothesis f_to_e_upgrade(const ModelHypothesis& f, const CameraIntrinsics& k1,
                               const CameraIntrinsics& k2);

// Geometric mean of the four focal lengths; converts pixel thresholds to
// normalized-coordinate thresholds.
double mean_focal(const CameraIntrinsics& k1, const CameraIntrinsics& k2);

}  // namespace carsac
