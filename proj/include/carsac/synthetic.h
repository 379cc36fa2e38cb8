#pragma once

#include "carsac/types.h"

#include <cstdint>
#include <vector>

namespace carsac {

struct SyntheticSpec {
  int n = 500;
  double inlier_rate = 0.5;  // before relabeling
  double noise_px = 0.5;     // Gaussian sigma on inlier coordinates, both images
  // Fraction of points whose side info ignores the label (Beta(2,2)). The
  // rest lie in disjoint halves: inliers below 0.5, outliers above.
  double side_overlap = 0.5;
  int image_width = 1024;
  int image_height = 768;
  double focal_min = 600.0;
  double focal_max = 1000.0;
  double max_rotation_deg = 45.0;
  double min_baseline_ratio = 0.1;  // baseline / scene depth
  double label_threshold_px = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// One labeled image pair: pixel correspondences, ground-truth pose and intrinsics.
struct SyntheticPair {
  std::vector<Correspondence> correspondences;
  RelativePose pose;
  Calibration calib;
  double inlier_rate = 0.0;  // fraction of true labels after relabeling
  double noise_px = 0.0;
};

/// Random pose with rotation <= max_rotation_deg and baseline >=
/// min_baseline_ratio x depth; round(n * inlier_rate) points seen by both
/// cameras with Gaussian pixel noise; the rest uniform in both images.
/// Labels come from the pixel Sampson rule, then side info is drawn per
/// label. Correspondences are shuffled. Throws kInvalidArgument on an
/// infeasible spec.
SyntheticPair generate_synthetic(const SyntheticSpec& spec);

// Ground-truth fundamental matrix (unit norm) of a pair.
Eigen::Matrix3d gt_fundamental(const SyntheticPair& pair);

// Recomputes gt_inlier: pixel Sampson distance to the true F below threshold_px.
void relabel(SyntheticPair* pair, double threshold_px);

struct SuiteSpec {
  int pairs = 200;
  int n_min = 200;
  int n_max = 1000;
  double rate_min = 0.1;
  double rate_max = 0.9;
  double noise_px = 0.5;
  double side_overlap = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

// Pairs with n and inlier rate drawn uniformly per pair; deterministic in seed.
std::vector<SyntheticPair> generate_suite(const SuiteSpec& spec);

}  // namespace carsac
