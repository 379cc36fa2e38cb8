#include "carsac/geometry.h"

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <cmath>

namespace carsac {

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

const char* to_string(ModelKind kind) {
  return kind == ModelKind::kEssential ? "essential" : "fundamental";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "essential") return ModelKind::kEssential;
  if (name == "fundamental") return ModelKind::kFundamental;
  throw Error(ErrorCode::kInvalidArgument,
              "unknown model kind '" + name + "' (expected essential or fundamental)");
}

ModelHypothesis::ModelHypothesis(const Eigen::Matrix3d& m, ModelKind kind, Provenance provenance,
                                 std::vector<int> sample)
    : m_(m), kind_(kind), provenance_(provenance), sample_(std::move(sample)) {}

ModelHypothesis ModelHypothesis::zero(ModelKind kind) {
  return ModelHypothesis(Eigen::Matrix3d::Zero(), kind, Provenance::kZero, {});
}

ModelHypothesis ModelHypothesis::from_sample(const Eigen::Matrix3d& m, ModelKind kind,
                                             std::vector<int> sample) {
  const double norm = m.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) return zero(kind);
  return ModelHypothesis(m / norm, kind, Provenance::kMinimalSample, std::move(sample));
}

ModelHypothesis ModelHypothesis::refined(const Eigen::Matrix3d& m, ModelKind kind) {
  const double norm = m.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) return zero(kind);
  return ModelHypothesis(m / norm, kind, Provenance::kRefined, {});
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

double sampson_sq(const Eigen::Matrix3d& m, const Eigen::Vector2d& p1, const Eigen::Vector2d& p2) {
  const Eigen::Vector3d x1(p1.x(), p1.y(), 1.0);
  const Eigen::Vector3d x2(p2.x(), p2.y(), 1.0);
  const Eigen::Vector3d fx1 = m * x1;
  const Eigen::Vector3d ftx2 = m.transpose() * x2;
  const double c = x2.dot(fx1);
  const double denom = fx1(0) * fx1(0) + fx1(1) * fx1(1) + ftx2(0) * ftx2(0) + ftx2(1) * ftx2(1);
  if (!(denom > 0.0)) return kInfiniteResidual;
  return c * c / denom;
}

double sampson_sq(const ModelHypothesis& model, const Correspondence& c) {
  return sampson_sq(model.matrix(), c.p1, c.p2);
}

Eigen::Matrix3d project_to_rank2(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d s = svd.singularValues();
  s(2) = 0.0;
  Eigen::Matrix3d out = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  return out / out.norm();
}

Eigen::Matrix3d project_to_essential(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d& s = svd.singularValues();
  const double sigma = 0.5 * (s(0) + s(1));
  const Eigen::Vector3d d(sigma, sigma, 0.0);
  Eigen::Matrix3d out = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  return out / out.norm();
}

namespace {

// Similarity moving the centroid to the origin with mean distance sqrt(2).
bool hartley_transform(std::span<const Correspondence> data, std::span<const int> sample,
                       bool second, Eigen::Matrix3d* t) {
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (int i : sample) centroid += second ? data[i].p2 : data[i].p1;
  centroid /= static_cast<double>(sample.size());
  double mean_dist = 0.0;
  for (int i : sample) mean_dist += ((second ? data[i].p2 : data[i].p1) - centroid).norm();
  mean_dist /= static_cast<double>(sample.size());
  if (!(mean_dist > 1e-12 * (1.0 + centroid.norm()))) return false;
  const double s = std::sqrt(2.0) / mean_dist;
  *t << s, 0.0, -s * centroid.x(), 0.0, s, -s * centroid.y(), 0.0, 0.0, 1.0;
  return true;
}

}  // namespace

std::optional<ModelHypothesis> eight_point(std::span<const Correspondence> data,
                                           std::span<const int> sample, ModelKind kind) {
  if (sample.size() < static_cast<size_t>(kMinimalSampleSize)) {
    throw Error(ErrorCode::kInsufficientData, "eight_point needs at least 8 correspondences");
  }
  Eigen::Matrix3d t1, t2;
  if (!hartley_transform(data, sample, false, &t1) || !hartley_transform(data, sample, true, &t2)) {
    return std::nullopt;
  }

  const Eigen::Index rows = std::max<Eigen::Index>(static_cast<Eigen::Index>(sample.size()), 9);
  Eigen::Matrix<double, Eigen::Dynamic, 9> a = Eigen::Matrix<double, Eigen::Dynamic, 9>::Zero(rows, 9);
  for (size_t r = 0; r < sample.size(); ++r) {
    const Correspondence& c = data[sample[r]];
    const Eigen::Vector3d x1 = t1 * Eigen::Vector3d(c.p1.x(), c.p1.y(), 1.0);
    const Eigen::Vector3d x2 = t2 * Eigen::Vector3d(c.p2.x(), c.p2.y(), 1.0);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) a(static_cast<Eigen::Index>(r), 3 * i + j) = x2(i) * x1(j);
    }
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (!(sv(7) > 1e-10 * sv(0))) return std::nullopt;

  const Eigen::VectorXd null = svd.matrixV().col(8);
  Eigen::Matrix3d fn;
  fn << null(0), null(1), null(2), null(3), null(4), null(5), null(6), null(7), null(8);

  Eigen::Matrix3d m;
  if (kind == ModelKind::kFundamental) {
    m = t2.transpose() * project_to_rank2(fn) * t1;
    // Conditioning transforms preserve rank; re-project to scrub round-off.
    m = project_to_rank2(m);
  } else {
    m = project_to_essential(t2.transpose() * fn * t1);
  }
  if (!m.allFinite()) return std::nullopt;
  return ModelHypothesis::from_sample(m, kind, std::vector<int>(sample.begin(), sample.end()));
}

std::optional<ModelHypothesis> eight_point(std::span<const Correspondence> data, ModelKind kind) {
  std::vector<int> all(data.size());
  for (size_t i = 0; i < data.size(); ++i) all[i] = static_cast<int>(i);
  return eight_point(data, all, kind);
}

Correspondence normalize_by_intrinsics(const Correspondence& c, const CameraIntrinsics& k1,
                                       const CameraIntrinsics& k2) {
  Correspondence out = c;
  out.p1 = Eigen::Vector2d((c.p1.x() - k1.cx) / k1.fx, (c.p1.y() - k1.cy) / k1.fy);
  out.p2 = Eigen::Vector2d((c.p2.x() - k2.cx) / k2.fx, (c.p2.y() - k2.cy) / k2.fy);
  return out;
}

std::vector<Correspondence> normalize_by_intrinsics(std::span<const Correspondence> data,
                                                    const CameraIntrinsics& k1,
                                                    const CameraIntrinsics& k2) {
  std::vector<Correspondence> out;
  out.reserve(data.size());
  for (const Correspondence& c : data) out.push_back(normalize_by_intrinsics(c, k1, k2));
  return out;
}

Correspondence denormalize_by_intrinsics(const Correspondence& c, const CameraIntrinsics& k1,
                                         const CameraIntrinsics& k2) {
  Correspondence out = c;
  out.p1 = Eigen::Vector2d(c.p1.x() * k1.fx + k1.cx, c.p1.y() * k1.fy + k1.cy);
  out.p2 = Eigen::Vector2d(c.p2.x() * k2.fx + k2.cx, c.p2.y() * k2.fy + k2.cy);
  return out;
}

Eigen::Matrix3d essential_from_pose(const RelativePose& pose) {
  Eigen::Matrix3d e = skew(pose.translation) * pose.rotation;
  return e / e.norm();
}

Eigen::Matrix3d fundamental_from_essential(const Eigen::Matrix3d& e, const CameraIntrinsics& k1,
                                           const CameraIntrinsics& k2) {
  Eigen::Matrix3d f = k2.matrix().inverse().transpose() * e * k1.matrix().inverse();
  return f / f.norm();
}

namespace {

struct CheiralityVote {
  int positive = 0;
  double mean_residual = kInfiniteResidual;
};

CheiralityVote vote(const Eigen::Matrix3d& r, const Eigen::Vector3d& t,
                    std::span<const Correspondence> inliers) {
  CheiralityVote v;
  const Eigen::Vector3d c2 = -r.transpose() * t;
  double residual_sum = 0.0;
  for (const Correspondence& c : inliers) {
    const Eigen::Vector3d d1(c.p1.x(), c.p1.y(), 1.0);
    const Eigen::Vector3d d2 = r.transpose() * Eigen::Vector3d(c.p2.x(), c.p2.y(), 1.0);
    // Closest points between the rays l1 * d1 and c2 + l2 * d2.
    const double a = d1.dot(d1);
    const double b = d1.dot(d2);
    const double cc = d2.dot(d2);
    const double e = d1.dot(c2);
    const double f = d2.dot(c2);
    const double det = a * cc - b * b;
    if (!(det > 1e-14 * a * cc)) continue;
    const double l1 = (cc * e - b * f) / det;
    const double l2 = (b * e - a * f) / det;
    const Eigen::Vector3d x = 0.5 * (l1 * d1 + c2 + l2 * d2);
    const Eigen::Vector3d x_cam2 = r * x + t;
    if (x.z() <= 0.0 || x_cam2.z() <= 0.0) continue;
    ++v.positive;
    residual_sum += (x.head<2>() / x.z() - c.p1).norm() + (x_cam2.head<2>() / x_cam2.z() - c.p2).norm();
  }
  if (v.positive > 0) v.mean_residual = residual_sum / v.positive;
  return v;
}

}  // namespace

RelativePose decompose_essential(const ModelHypothesis& e, std::span<const Correspondence> inliers) {
  if (inliers.empty()) {
    throw Error(ErrorCode::kPoseUndecidable, "decompose_essential needs at least one inlier");
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(e.matrix(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  Eigen::Matrix3d v = svd.matrixV();
  if (u.determinant() < 0.0) u = -u;
  if (v.determinant() < 0.0) v = -v;
  Eigen::Matrix3d w;
  w << 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0;

  const Eigen::Vector3d t = u.col(2).normalized();
  const std::array<RelativePose, 4> candidates = {
      RelativePose{u * w * v.transpose(), t},
      RelativePose{u * w * v.transpose(), -t},
      RelativePose{u * w.transpose() * v.transpose(), t},
      RelativePose{u * w.transpose() * v.transpose(), -t},
  };

  int best = -1;
  CheiralityVote best_vote;
  for (int i = 0; i < 4; ++i) {
    const CheiralityVote cv = vote(candidates[i].rotation, candidates[i].translation, inliers);
    if (cv.positive == 0) continue;
    if (best < 0 || cv.positive > best_vote.positive ||
        (cv.positive == best_vote.positive && cv.mean_residual < best_vote.mean_residual)) {
      best = i;
      best_vote = cv;
    }
  }
  if (best < 0) {
    throw Error(ErrorCode::kPoseUndecidable, "no essential decomposition passes cheirality");
  }
  return candidates[best];
}

double rotation_error_deg(const Eigen::Matrix3d& estimate, const Eigen::Matrix3d& gt) {
  const Eigen::Matrix3d d = estimate * gt.transpose();
  // Robust near zero: angle from the skew part and the trace together.
  const Eigen::Vector3d axis(d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1));
  const double angle = std::atan2(0.5 * axis.norm(), 0.5 * (d.trace() - 1.0));
  return angle * 180.0 / M_PI;
}

double translation_error_deg(const Eigen::Vector3d& estimate, const Eigen::Vector3d& gt) {
  const double angle = std::atan2(estimate.cross(gt).norm(), estimate.dot(gt));
  return angle * 180.0 / M_PI;
}

double pose_error_deg(const RelativePose& estimate, const RelativePose& gt) {
  return std::max(rotation_error_deg(estimate.rotation, gt.rotation),
                  translation_error_deg(estimate.translation, gt.translation));
}

ModelHypothesis f_to_e_upgrade(const ModelHypothesis& f, const CameraIntrinsics& k1,
                               const CameraIntrinsics& k2) {
  if (f.is_zero()) return ModelHypothesis::zero(ModelKind::kEssential);
  const Eigen::Matrix3d e = k2.matrix().transpose() * f.matrix() * k1.matrix();
  return ModelHypothesis::refined(project_to_essential(e), ModelKind::kEssential);
}

double mean_focal(const CameraIntrinsics& k1, const CameraIntrinsics& k2) {
  return std::pow(k1.fx * k1.fy * k2.fx * k2.fy, 0.25);
}

}  // namespace carsac
