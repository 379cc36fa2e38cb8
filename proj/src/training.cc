#include "carsac/training.h"

#include "carsac/geometry.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace carsac {

void TrainConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "epsilon must lie in (0, 1)");
  }
  if (!(lambda > 0.0)) throw Error(ErrorCode::kInvalidArgument, "lambda must be positive");
  if (!(pose_clamp_deg > 0.0) || !(inlier_label_px > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "pose clamp and label threshold must be positive");
  }
  if (epochs < 0 || pairs_per_step < 1) {
    throw Error(ErrorCode::kInvalidArgument, "epochs must be >= 0 and pairs_per_step >= 1");
  }
  if (!(learning_rate > 0.0) || !(momentum >= 0.0 && momentum < 1.0) || !(clip_norm > 0.0) ||
      !(alpha_step > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "invalid optimizer settings");
  }
  engine.validate();
}

double loss_inlier(const Eigen::VectorXd& probs, const std::vector<bool>& labels,
                   Eigen::VectorXd* grad) {
  if (static_cast<size_t>(probs.size()) != labels.size() || labels.empty()) {
    throw Error(ErrorCode::kShapeMismatch, "loss_inlier: one label per probability required");
  }
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  if (grad) grad->resize(probs.size());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const double p = probs(i);
    if (labels[static_cast<size_t>(i)]) {
      sum -= std::log(p);
      if (grad) (*grad)(i) = -inv_n / p;
    } else {
      sum -= std::log1p(-p);
      if (grad) (*grad)(i) = inv_n / (1.0 - p);
    }
  }
  return sum * inv_n;
}

double loss_pose(const RelativePose& estimate, const RelativePose& gt, double clamp_deg) {
  return std::min(pose_error_deg(estimate, gt), clamp_deg);
}

double loss_pose(const ModelHypothesis& model, const PreparedData& data, const Calibration& calib,
                 const RelativePose& gt, double clamp_deg) {
  try {
    return loss_pose(pose_from_model(model, data, calib), gt, clamp_deg);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kPoseUndecidable) throw;
    return clamp_deg;
  }
}

double aggregate_loss(std::span<const BatchLoss> batches, double epsilon, double lambda) {
  if (batches.empty()) throw Error(ErrorCode::kInvalidArgument, "aggregate_loss needs Q >= 1");
  const int q_total = static_cast<int>(batches.size());
  double total = 0.0;
  for (int q = 1; q <= q_total; ++q) {
    const BatchLoss& b = batches[static_cast<size_t>(q - 1)];
    total += std::pow(1.0 - epsilon, q_total - q) * (b.inlier + lambda * b.pose);
  }
  return total;
}

std::vector<bool> inlier_labels(const SyntheticPair& pair, double threshold_px) {
  const Eigen::Matrix3d f = gt_fundamental(pair);
  std::vector<bool> labels;
  labels.reserve(pair.correspondences.size());
  for (const Correspondence& c : pair.correspondences) {
    labels.push_back(sampson_sq(f, c.p1, c.p2) < threshold_px * threshold_px);
  }
  return labels;
}

namespace {

void accumulate(MlpBundle* into, const MlpBundle& g) {
  auto dst = into->named();
  const auto src = g.named();
  for (size_t k = 0; k < dst.size(); ++k) {
    for (size_t l = 0; l < dst[k].second->layers.size(); ++l) {
      dst[k].second->layers[l].w += src[k].second->layers[l].w;
      dst[k].second->layers[l].b += src[k].second->layers[l].b;
    }
  }
}

std::uint64_t pair_seed(std::uint64_t seed, int epoch, size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(index)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

}  // namespace

PairLoss pair_loss(const SyntheticPair& pair, const MlpBundle& bundle, const TrainConfig& cfg,
                   std::uint64_t rng_seed, MlpBundle* grads) {
  EngineConfig ecfg = cfg.engine;
  ecfg.sampler.rng_seed = rng_seed;
  const PreparedData data = prepare_data(pair.correspondences, ecfg, pair.calib);
  const std::vector<bool> labels = inlier_labels(pair, cfg.inlier_label_px);

  CaTrace trace;
  trace.record_tape = grads != nullptr && cfg.train_networks;
  ca_ransac(data, bundle, ecfg, &trace);

  const int q_total = ecfg.batches;
  std::vector<Eigen::VectorXd> prob_grads(trace.probs.size());
  PairLoss out;
  Eigen::VectorXd g;
  const double w0 = cfg.supervise_initial_state ? std::pow(1.0 - cfg.epsilon, q_total) : 0.0;
  out.initial_inlier = loss_inlier(trace.probs[0], labels, &g);
  prob_grads[0] = w0 * g;
  for (int q = 1; q <= q_total; ++q) {
    BatchLoss b;
    b.inlier = loss_inlier(trace.probs[static_cast<size_t>(q)], labels, &g);
    b.pose = loss_pose(trace.refined[static_cast<size_t>(q - 1)], data, pair.calib, pair.pose,
                       cfg.pose_clamp_deg);
    prob_grads[static_cast<size_t>(q)] = std::pow(1.0 - cfg.epsilon, q_total - q) * g;
    out.batches.push_back(b);
  }
  out.total = aggregate_loss(out.batches, cfg.epsilon, cfg.lambda) + w0 * out.initial_inlier;
  if (!grads) return out;

  if (trace.record_tape) accumulate(grads, backward(bundle, trace.tape, prob_grads));

  // Alpha only acts through the last refinement; differentiate it numerically.
  const ModelHypothesis& top = trace.top_one.back();
  if (cfg.train_alpha && !top.is_zero()) {
    RefineConfig rcfg = ecfg.refine;
    rcfg.loss = RobustLoss::kCauchy;
    rcfg.loss_scale = data.threshold_sq;
    const auto pose_at = [&](double alpha) {
      ModelHypothesis m = top;
      try {
        m = refine_alpha(top, data.points, trace.probs.back(), alpha, rcfg);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kRefineUnderdetermined) throw;
      }
      return loss_pose(m, data, pair.calib, pair.pose, cfg.pose_clamp_deg);
    };
    const double h = std::min(cfg.alpha_step, 0.5 * bundle.alpha);
    grads->alpha += cfg.lambda * (pose_at(bundle.alpha + h) - pose_at(bundle.alpha - h)) / (2.0 * h);
  }
  return out;
}

double dataset_loss(std::span<const SyntheticPair> pairs, const MlpBundle& bundle,
                    const TrainConfig& cfg) {
  if (pairs.empty()) throw Error(ErrorCode::kInvalidArgument, "empty dataset");
  double sum = 0.0;
  for (size_t i = 0; i < pairs.size(); ++i) {
    sum += pair_loss(pairs[i], bundle, cfg, cfg.seed + i).total;
  }
  return sum / static_cast<double>(pairs.size());
}

TrainResult train(std::span<const SyntheticPair> train_set, std::span<const SyntheticPair> val_set,
                  const MlpBundle& init, const TrainConfig& cfg,
                  const std::function<void(const TrainLogEntry&)>& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw Error(ErrorCode::kInvalidArgument, "empty training set");

  MlpBundle current = init;
  TrainResult result;
  result.bundle = init;
  result.best_val_loss = dataset_loss(val_set.empty() ? train_set : val_set, init, cfg);

  const Eigen::Index p = parameter_count(init);
  Eigen::VectorXd theta = flatten_parameters(init);
  Eigen::VectorXd velocity = Eigen::VectorXd::Zero(p + 1);
  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.pairs_per_step)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.pairs_per_step));
      MlpBundle grads = MlpBundle::zeros();
      grads.alpha = 0.0;
      for (size_t k = start; k < stop; ++k) {
        const size_t idx = order[k];
        const PairLoss pl = pair_loss(train_set[idx], current, cfg, pair_seed(cfg.seed, epoch, idx),
                                      &grads);
        if (!std::isfinite(pl.total)) {
          throw Error(ErrorCode::kDivergence, "loss is not finite at epoch " + std::to_string(epoch) +
                                                  ", training pair " + std::to_string(idx));
        }
        loss_sum += pl.total;
      }
      const double inv_m = 1.0 / static_cast<double>(stop - start);
      Eigen::VectorXd g(p + 1);
      g.head(p) = cfg.train_networks ? Eigen::VectorXd(flatten_parameters(grads) * inv_m)
                                     : Eigen::VectorXd::Zero(p);
      g(p) = cfg.train_alpha ? grads.alpha * inv_m : 0.0;
      if (!g.allFinite()) {
        throw Error(ErrorCode::kDivergence,
                    "gradient is not finite at epoch " + std::to_string(epoch));
      }
      const double norm = g.norm();
      if (norm > cfg.clip_norm) g *= cfg.clip_norm / norm;
      velocity = cfg.momentum * velocity + g;
      theta -= cfg.learning_rate * velocity.head(p);
      assign_parameters(&current, theta);
      current.alpha = std::max(current.alpha - cfg.learning_rate * velocity(p), 1e-3);
    }

    TrainLogEntry entry;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<double>(train_set.size());
    entry.val_loss = val_set.empty() ? entry.train_loss : dataset_loss(val_set, current, cfg);
    entry.alpha = current.alpha;
    if (!std::isfinite(entry.val_loss)) {
      throw Error(ErrorCode::kDivergence, "validation loss is not finite at epoch " +
                                              std::to_string(epoch));
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (entry.val_loss < result.best_val_loss) {
      result.best_val_loss = entry.val_loss;
      result.bundle = current;
    }
  }
  return result;
}

}  // namespace carsac
