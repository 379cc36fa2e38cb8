#pragma once

#include "carsac/neural.h"
#include "carsac/refinement.h"
#include "carsac/sampling.h"
#include "carsac/scoring.h"
#include "carsac/types.h"

#include <Eigen/Core>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace carsac {

struct EngineConfig {
  int batches = 4;
  int batch_size = 256;
  ModelKind kind = ModelKind::kEssential;
  double msac_threshold_px = 1.5;
  SamplerConfig sampler;
  // Final refinement. loss_scale is replaced by the squared MSAC threshold.
  RefineConfig refine;
  int lo_iterations = 10;
  // Off: states are initialized and decoded but never updated from consensus.
  bool consensus_update = true;
  std::string weights_path;

  int total_samples() const { return batches * batch_size; }
  void validate() const;
};

// Correspondences in the coordinates the model lives in. Essential problems
// are normalized by the intrinsics and the pixel threshold is divided by the
// geometric-mean focal length.
struct PreparedData {
  std::vector<Correspondence> points;
  ModelKind kind = ModelKind::kFundamental;
  double threshold_sq = 1.0;
};

PreparedData prepare_data(std::span<const Correspondence> data, const EngineConfig& cfg,
                          const std::optional<Calibration>& calib);

// Seconds spent per component of one estimation.
struct TimingBreakdown {
  double state_init = 0.0;
  double state_update = 0.0;
  double decoder = 0.0;
  double sampling = 0.0;
  double solving = 0.0;
  double scoring = 0.0;
  double refinement = 0.0;
  double total = 0.0;

  double learned() const { return state_init + state_update + decoder; }
  double component_sum() const {
    return learned() + sampling + solving + scoring + refinement;
  }
  TimingBreakdown& operator+=(const TimingBreakdown& o);
};

struct EstimationResult {
  ModelHypothesis model = ModelHypothesis::zero(ModelKind::kFundamental);
  Eigen::VectorXd inlier_probs;
  std::vector<double> per_batch_best_score;
  TimingBreakdown timing;
  int minimal_samples = 0;  // minimal samples drawn (degenerate ones included)
};

// What training needs from one forward run.
struct CaTrace {
  bool record_tape = false;
  ForwardTape tape;
  // probs[0] from the initial state, probs[q] after batch q.
  std::vector<Eigen::VectorXd> probs;
  // Per batch: the top-one model and the model after refine_alpha.
  std::vector<ModelHypothesis> top_one;
  std::vector<ModelHypothesis> refined;
};

/// Consensus-adaptive RANSAC on prepared data. Runs exactly cfg.batches
/// batches of cfg.batch_size minimal samples.
EstimationResult ca_ransac(const PreparedData& data, const MlpBundle& bundle,
                           const EngineConfig& cfg, CaTrace* trace = nullptr);

// Uniform sampling, MSAC selection, final Cauchy LM on the MSAC inliers.
EstimationResult msac_ransac_baseline(const PreparedData& data, const EngineConfig& cfg);

// PROSAC sampling ordered by quality (higher first), LM local optimization on
// every new best model, final Cauchy LM on the MSAC inliers.
EstimationResult lm_lo_baseline(const PreparedData& data, const Eigen::VectorXd& quality,
                                const EngineConfig& cfg);

/// Relative pose of a model estimated on `data` (prepared). Fundamental
/// models are upgraded with the intrinsics first; the decomposition uses the
/// model's MSAC inliers (all points if it has fewer than one).
RelativePose pose_from_model(const ModelHypothesis& model, const PreparedData& data,
                             const Calibration& calib);

}  // namespace carsac
