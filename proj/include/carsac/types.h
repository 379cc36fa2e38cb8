#pragma once

#include <Eigen/Core>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace carsac {

enum class ErrorCode {
  kInvalidArgument,
  kInsufficientData,
  kPoseUndecidable,
  kRefineUnderdetermined,
  kShapeMismatch,
  kVersionMismatch,
  kParse,
  kIo,
  kMissingTape,
  kDivergence,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// A tentative match between two images. Coordinates are pixels unless the
// correspondence went through normalize_by_intrinsics().
struct Correspondence {
  Eigen::Vector2d p1 = Eigen::Vector2d::Zero();
  Eigen::Vector2d p2 = Eigen::Vector2d::Zero();
  double side_info = 0.0;  // SNN ratio or matcher score in [0, 1]
  std::optional<bool> gt_inlier;
};

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  bool valid() const { return fx > 0.0 && fy > 0.0; }
  Eigen::Matrix3d matrix() const;
};

struct Calibration {
  CameraIntrinsics k1;
  CameraIntrinsics k2;
};

enum class ModelKind { kFundamental, kEssential };

const char* to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

enum class Provenance { kMinimalSample, kRefined, kZero };

// A 3x3 two-view model. Non-zero models are stored with unit Frobenius norm;
// the manifold constraint (rank 2 or essential) is enforced by the producer.
class ModelHypothesis {
 public:
  static ModelHypothesis zero(ModelKind kind);
  static ModelHypothesis from_sample(const Eigen::Matrix3d& m, ModelKind kind,
                                     std::vector<int> sample);
  static ModelHypothesis refined(const Eigen::Matrix3d& m, ModelKind kind);

  const Eigen::Matrix3d& matrix() const { return m_; }
  ModelKind kind() const { return kind_; }
  Provenance provenance() const { return provenance_; }
  const std::vector<int>& sample() const { return sample_; }
  bool is_zero() const { return provenance_ == Provenance::kZero; }

 private:
  ModelHypothesis(const Eigen::Matrix3d& m, ModelKind kind, Provenance provenance,
                  std::vector<int> sample);

  Eigen::Matrix3d m_ = Eigen::Matrix3d::Zero();
  ModelKind kind_ = ModelKind::kFundamental;
  Provenance provenance_ = Provenance::kZero;
  std::vector<int> sample_;
};

// x2 ~ R x1 + t, translation scale-free.
struct RelativePose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::UnitX();
};

}  // namespace carsac
