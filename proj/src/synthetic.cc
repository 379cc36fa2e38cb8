#include "carsac/synthetic.h"

#include "carsac/geometry.h"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <random>

namespace carsac {

void SyntheticSpec::validate() const {
  if (n < kMinimalSampleSize) {
    throw Error(ErrorCode::kInvalidArgument, "synthetic pair needs at least 8 correspondences");
  }
  if (!(inlier_rate > 0.0 && inlier_rate <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "inlier_rate must lie in (0, 1]");
  }
  if (std::lround(n * inlier_rate) < kMinimalSampleSize) {
    throw Error(ErrorCode::kInvalidArgument, "fewer than 8 inliers requested");
  }
  if (!(noise_px >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "noise must be >= 0");
  if (!(side_overlap >= 0.0 && side_overlap <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "side_overlap must lie in [0, 1]");
  }
  if (image_width < 16 || image_height < 16 || !(focal_min > 0.0) || focal_max < focal_min) {
    throw Error(ErrorCode::kInvalidArgument, "invalid camera parameters");
  }
  if (!(max_rotation_deg > 0.0) || !(min_baseline_ratio > 0.0) || min_baseline_ratio > 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "invalid pose parameters");
  }
  if (!(label_threshold_px > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "label threshold must be positive");
  }
}

void SuiteSpec::validate() const {
  if (pairs < 1) throw Error(ErrorCode::kInvalidArgument, "suite needs at least one pair");
  if (n_min < kMinimalSampleSize || n_max < n_min) {
    throw Error(ErrorCode::kInvalidArgument, "invalid correspondence count range");
  }
  if (!(rate_min > 0.0) || rate_max > 1.0 || rate_max < rate_min) {
    throw Error(ErrorCode::kInvalidArgument, "invalid inlier rate range");
  }
}

namespace {

constexpr double kSceneDepth = 6.0;

double beta_sample(double a, double b, std::mt19937_64& rng) {
  const double x = std::gamma_distribution<double>(a, 1.0)(rng);
  const double y = std::gamma_distribution<double>(b, 1.0)(rng);
  return x / (x + y);
}

Eigen::Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::Vector3d v;
  do {
    v = Eigen::Vector3d(g(rng), g(rng), g(rng));
  } while (v.norm() < 1e-9);
  return v.normalized();
}

double rotation_angle_deg(const Eigen::Matrix3d& r) {
  return Eigen::AngleAxisd(r).angle() * 180.0 / M_PI;
}

// Second camera looking roughly at the scene centre from a random offset.
// Also returns the baseline length.
std::pair<RelativePose, double> random_pose(const SyntheticSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01;
  const Eigen::Vector3d centre(0.0, 0.0, kSceneDepth);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double ratio = spec.min_baseline_ratio + (0.4 - spec.min_baseline_ratio) * u01(rng);
    const double baseline = std::max(ratio, spec.min_baseline_ratio) * kSceneDepth;
    const Eigen::Vector3d c2 = baseline * random_unit(rng);
    const Eigen::Vector3d target = centre + 0.05 * kSceneDepth * random_unit(rng);
    const Eigen::Vector3d z = (target - c2).normalized();
    const Eigen::Vector3d x = Eigen::Vector3d::UnitY().cross(z).normalized();
    const Eigen::Vector3d y = z.cross(x);
    Eigen::Matrix3d r;
    r.row(0) = x;
    r.row(1) = y;
    r.row(2) = z;
    const double roll = (u01(rng) * 2.0 - 1.0) * 10.0 * M_PI / 180.0;
    r = Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitZ()).toRotationMatrix() * r;
    if (rotation_angle_deg(r) > spec.max_rotation_deg) continue;
    RelativePose pose;
    pose.rotation = r;
    pose.translation = (-r * c2).normalized();
    return {pose, baseline};
  }
  throw Error(ErrorCode::kInvalidArgument, "no pose satisfies the rotation limit");
}

CameraIntrinsics random_camera(const SyntheticSpec& spec, std::mt19937_64& rng) {
  const double f = std::uniform_real_distribution<double>(spec.focal_min, spec.focal_max)(rng);
  return CameraIntrinsics{f, f, 0.5 * spec.image_width, 0.5 * spec.image_height};
}

bool in_image(const Eigen::Vector2d& p, const SyntheticSpec& spec) {
  return p.x() >= 0.0 && p.y() >= 0.0 && p.x() < spec.image_width && p.y() < spec.image_height;
}

}  // namespace

Eigen::Matrix3d gt_fundamental(const SyntheticPair& pair) {
  return fundamental_from_essential(essential_from_pose(pair.pose), pair.calib.k1, pair.calib.k2);
}

void relabel(SyntheticPair* pair, double threshold_px) {
  const Eigen::Matrix3d f = gt_fundamental(*pair);
  int inliers = 0;
  for (Correspondence& c : pair->correspondences) {
    const bool in = sampson_sq(f, c.p1, c.p2) < threshold_px * threshold_px;
    c.gt_inlier = in;
    inliers += in;
  }
  pair->inlier_rate = pair->correspondences.empty()
                          ? 0.0
                          : static_cast<double>(inliers) / static_cast<double>(pair->correspondences.size());
}

SyntheticPair generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u01;
  std::normal_distribution<double> gauss;
  const auto noise = [&] { return spec.noise_px > 0.0 ? spec.noise_px * gauss(rng) : 0.0; };

  SyntheticPair pair;
  pair.noise_px = spec.noise_px;
  pair.calib.k1 = random_camera(spec, rng);
  pair.calib.k2 = random_camera(spec, rng);
  const auto [pose, baseline] = random_pose(spec, rng);
  pair.pose = pose;
  const Eigen::Matrix3d k1_inv = pair.calib.k1.matrix().inverse();
  const Eigen::Matrix3d k2 = pair.calib.k2.matrix();

  const int n_in = static_cast<int>(std::lround(spec.n * spec.inlier_rate));
  const Eigen::Vector3d t = pair.pose.translation * baseline;
  pair.correspondences.reserve(static_cast<size_t>(spec.n));
  int attempts = 0;
  while (static_cast<int>(pair.correspondences.size()) < n_in) {
    if (++attempts > 1000 * spec.n) {
      throw Error(ErrorCode::kInvalidArgument, "cameras share too little field of view");
    }
    const Eigen::Vector2d p1(u01(rng) * spec.image_width, u01(rng) * spec.image_height);
    const double depth = kSceneDepth + (u01(rng) * 5.0 - 2.0);
    const Eigen::Vector3d x = depth * (k1_inv * p1.homogeneous());
    const Eigen::Vector3d x2 = pair.pose.rotation * x + t;
    if (x2.z() < 0.1 * kSceneDepth) continue;
    const Eigen::Vector2d p2 = (k2 * x2).hnormalized();
    if (!in_image(p2, spec)) continue;
    Correspondence c;
    c.p1 = p1 + Eigen::Vector2d(noise(), noise());
    c.p2 = p2 + Eigen::Vector2d(noise(), noise());
    pair.correspondences.push_back(c);
  }
  while (static_cast<int>(pair.correspondences.size()) < spec.n) {
    Correspondence c;
    c.p1 = Eigen::Vector2d(u01(rng) * spec.image_width, u01(rng) * spec.image_height);
    c.p2 = Eigen::Vector2d(u01(rng) * spec.image_width, u01(rng) * spec.image_height);
    pair.correspondences.push_back(c);
  }
  std::shuffle(pair.correspondences.begin(), pair.correspondences.end(), rng);

  relabel(&pair, spec.label_threshold_px);
  for (Correspondence& c : pair.correspondences) {
    const bool shared = u01(rng) < spec.side_overlap;
    const double b = beta_sample(2.0, 5.0, rng) * 0.5;
    const double s = beta_sample(2.0, 2.0, rng);
    c.side_info = shared ? s : (*c.gt_inlier ? b : 1.0 - b);
  }
  return pair;
}

std::vector<SyntheticPair> generate_suite(const SuiteSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::vector<SyntheticPair> out;
  out.reserve(static_cast<size_t>(spec.pairs));
  for (int i = 0; i < spec.pairs; ++i) {
    SyntheticSpec s;
    s.n = std::uniform_int_distribution<int>(spec.n_min, spec.n_max)(rng);
    s.inlier_rate = std::uniform_real_distribution<double>(spec.rate_min, spec.rate_max)(rng);
    s.inlier_rate = std::max(s.inlier_rate, std::min(1.0, 8.5 / s.n));
    s.noise_px = spec.noise_px;
    s.side_overlap = spec.side_overlap;
    s.seed = rng();
    out.push_back(generate_synthetic(s));
  }
  return out;
}

}  // namespace carsac
