#pragma once

#include "carsac/evaluation.h"
#include "carsac/synthetic.h"
#include "carsac/training.h"
#include "carsac/types.h"

#include <string>
#include <vector>

namespace carsac::cli {

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

/// Matches file:
///   x1 y1 x2 y2 side_info [gt_inlier]
///   <one row per correspondence>
/// gt_inlier is 0 or 1. Non-finite numbers are rejected.
std::vector<Correspondence> read_matches(const std::string& path);
void write_matches(const std::string& path, const std::vector<Correspondence>& data);

/// Calibration file: "K1" followed by three rows of a 3x3 intrinsic matrix,
/// then "K2" and three more rows.
Calibration read_calibration(const std::string& path);
void write_calibration(const std::string& path, const Calibration& calib);

/// Pose file: "R" followed by three rows, then "t" followed by one row.
RelativePose read_pose(const std::string& path);
void write_pose(const std::string& path, const RelativePose& pose);

/// Dataset directory: a "manifest" file ("carsac-dataset 1", then one pair
/// name per line) and <name>.matches / <name>.calib / <name>.pose per pair.
std::vector<SyntheticPair> read_dataset(const std::string& dir);
void write_dataset(const std::string& dir, const std::vector<SyntheticPair>& pairs);

/// key = value lines; '#' starts a comment. Unknown keys and malformed
/// values throw, naming the file and line.
void load_config_file(const std::string& path, TrainConfig* cfg);
// Applies one key; false if the key is unknown. context prefixes parse errors.
bool apply_config_key(const std::string& key, const std::string& value, TrainConfig* cfg,
                      const std::string& context);
std::vector<std::string> config_keys();

}  // namespace carsac::cli
