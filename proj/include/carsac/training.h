#pragma once

#include "carsac/engine.h"
#include "carsac/neural.h"
#include "carsac/synthetic.h"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace carsac {

struct TrainConfig {
  double epsilon = 0.1;
  double lambda = 1.0 / 60.0;
  double pose_clamp_deg = 30.0;
  double inlier_label_px = 1.0;
  int epochs = 10;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double clip_norm = 1.0;
  int pairs_per_step = 4;
  // Central finite-difference step for alpha.
  double alpha_step = 0.05;
  // Adds the cross-entropy of the initial-state decode with weight (1 - eps)^Q.
  bool supervise_initial_state = true;
  bool train_networks = true;
  bool train_alpha = true;
  std::uint64_t seed = 0;
  EngineConfig engine;

  void validate() const;
};

// Mean binary cross-entropy. grad (optional) receives dL/dp.
double loss_inlier(const Eigen::VectorXd& probs, const std::vector<bool>& labels,
                   Eigen::VectorXd* grad = nullptr);

// min(pose error in degrees, clamp).
double loss_pose(const RelativePose& estimate, const RelativePose& gt, double clamp_deg);

// Pose loss of a model on prepared data; undecidable or zero models score the clamp.
double loss_pose(const ModelHypothesis& model, const PreparedData& data, const Calibration& calib,
                 const RelativePose& gt, double clamp_deg);

struct BatchLoss {
  double inlier = 0.0;
  double pose = 0.0;
};

// sum_q (1 - eps)^(Q - q) (inlier_q + lambda pose_q), q = 1..Q.
double aggregate_loss(std::span<const BatchLoss> batches, double epsilon, double lambda);

// Ground-truth labels: pixel Sampson distance to the true model below threshold_px.
std::vector<bool> inlier_labels(const SyntheticPair& pair, double threshold_px);

struct PairLoss {
  double total = 0.0;
  double initial_inlier = 0.0;  // cross-entropy of the initial-state decode
  std::vector<BatchLoss> batches;
};

/// One forward pass of ca_ransac on a labeled pair and its loss. With grads
/// non-null, also runs the backward pass; the network gradients are added
/// to *grads and the finite-difference alpha gradient to grads->alpha.
PairLoss pair_loss(const SyntheticPair& pair, const MlpBundle& bundle, const TrainConfig& cfg,
                   std::uint64_t rng_seed, MlpBundle* grads = nullptr);

// Mean pair loss over a dataset; pair i runs with engine seed cfg.seed + i.
double dataset_loss(std::span<const SyntheticPair> pairs, const MlpBundle& bundle,
                    const TrainConfig& cfg);

struct TrainLogEntry {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double alpha = 1.0;
};

struct TrainResult {
  MlpBundle bundle;  // parameters with the best validation loss
  std::vector<TrainLogEntry> log;
  double best_val_loss = 0.0;
};

/// SGD with momentum and gradient-norm clipping over mini-batches of pairs.
/// Throws kDivergence if a loss or gradient turns non-finite.
TrainResult train(std::span<const SyntheticPair> train_set, std::span<const SyntheticPair> val_set,
                  const MlpBundle& init, const TrainConfig& cfg,
                  const std::function<void(const TrainLogEntry&)>& on_epoch = {});

}  // namespace carsac
