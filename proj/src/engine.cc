#include "carsac/engine.h"

#include "carsac/geometry.h"

#include <chrono>
#include <cmath>
#include <random>

namespace carsac {

void EngineConfig::validate() const {
  if (batches < 1) throw Error(ErrorCode::kInvalidArgument, "batches must be at least 1");
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be at least 1");
  if (!(msac_threshold_px > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "msac_threshold must be positive");
  }
  if (lo_iterations < 0) throw Error(ErrorCode::kInvalidArgument, "lo_iterations must be >= 0");
  sampler.validate();
  refine.validate();
}

TimingBreakdown& TimingBreakdown::operator+=(const TimingBreakdown& o) {
  state_init += o.state_init;
  state_update += o.state_update;
  decoder += o.decoder;
  sampling += o.sampling;
  solving += o.solving;
  scoring += o.scoring;
  refinement += o.refinement;
  total += o.total;
  return *this;
}

namespace {

using Clock = std::chrono::steady_clock;

class Stopwatch {
 public:
  Stopwatch() : last_(Clock::now()) {}
  // Adds the time since the previous lap to *slot.
  void lap(double* slot) {
    const Clock::time_point now = Clock::now();
    *slot += std::chrono::duration<double>(now - last_).count();
    last_ = now;
  }

 private:
  Clock::time_point last_;
};

void require_points(const PreparedData& data, int sample_size) {
  if (static_cast<int>(data.points.size()) < sample_size) {
    throw Error(ErrorCode::kInsufficientData,
                "need at least " + std::to_string(sample_size) + " correspondences, got " +
                    std::to_string(data.points.size()));
  }
}

int top_one(const Eigen::VectorXd& totals) {
  int best = 0;
  for (Eigen::Index j = 1; j < totals.size(); ++j) {
    if (totals(j) > totals(best)) best = static_cast<int>(j);
  }
  return best;
}

RefineConfig final_config(const EngineConfig& cfg, double threshold_sq) {
  RefineConfig r = cfg.refine;
  r.loss = RobustLoss::kCauchy;
  r.loss_scale = threshold_sq;
  return r;
}

RefineConfig lo_config(const EngineConfig& cfg, double threshold_sq) {
  RefineConfig r = RefineConfig::intermediate(threshold_sq);
  r.max_iterations = std::max(cfg.lo_iterations, 1);
  r.top_k = cfg.refine.top_k;
  return r;
}

std::vector<double> inlier_weights(const Eigen::VectorXd& scores) {
  std::vector<double> w(static_cast<size_t>(scores.size()));
  for (Eigen::Index i = 0; i < scores.size(); ++i) w[static_cast<size_t>(i)] = scores(i) > 0.0 ? 1.0 : 0.0;
  return w;
}

// LM on the MSAC inliers of `model`; the input model when that is impossible.
ModelHypothesis refine_on_inliers(const ModelHypothesis& model, const PreparedData& data,
                                  const RefineConfig& cfg) {
  if (model.is_zero()) return model;
  const std::vector<double> w = inlier_weights(score_column(model, data.points, data.threshold_sq));
  try {
    return lm_minimize(model, data.points, w, cfg);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kRefineUnderdetermined) throw;
    return model;
  }
}

}  // namespace

PreparedData prepare_data(std::span<const Correspondence> data, const EngineConfig& cfg,
                          const std::optional<Calibration>& calib) {
  PreparedData out;
  out.kind = cfg.kind;
  const double t = cfg.msac_threshold_px;
  if (cfg.kind == ModelKind::kEssential) {
    if (!calib || !calib->k1.valid() || !calib->k2.valid()) {
      throw Error(ErrorCode::kInvalidArgument, "essential estimation requires valid intrinsics");
    }
    out.points = normalize_by_intrinsics(data, calib->k1, calib->k2);
    const double f = mean_focal(calib->k1, calib->k2);
    out.threshold_sq = (t / f) * (t / f);
  } else {
    out.points.assign(data.begin(), data.end());
    out.threshold_sq = t * t;
  }
  return out;
}

EstimationResult ca_ransac(const PreparedData& data, const MlpBundle& bundle,
                           const EngineConfig& cfg, CaTrace* trace) {
  cfg.validate();
  require_points(data, cfg.sampler.sample_size);
  const auto start = Clock::now();
  EstimationResult result;
  TimingBreakdown& timing = result.timing;
  Stopwatch watch;

  const Eigen::Index n = static_cast<Eigen::Index>(data.points.size());
  SamplerConfig sampler = cfg.sampler;
  sampler.batch_size = cfg.batch_size;
  std::mt19937_64 rng(sampler.rng_seed);
  const RefineConfig lo_cfg = lo_config(cfg, data.threshold_sq);
  const RefineConfig final_cfg = final_config(cfg, data.threshold_sq);
  ForwardTape* tape = trace && trace->record_tape ? &trace->tape : nullptr;
  if (trace) {
    trace->probs.clear();
    trace->top_one.clear();
    trace->refined.clear();
  }

  Eigen::VectorXd side(n);
  for (Eigen::Index i = 0; i < n; ++i) side(i) = data.points[static_cast<size_t>(i)].side_info;
  StateMatrix f = init_state(bundle, side, tape);
  watch.lap(&timing.state_init);
  Eigen::VectorXd probs = decode_inliers(bundle, f, tape);
  watch.lap(&timing.decoder);
  if (trace) trace->probs.push_back(probs);

  ModelHypothesis best = ModelHypothesis::zero(data.kind);
  std::vector<ModelHypothesis> models;
  for (int q = 0; q < cfg.batches; ++q) {
    const std::vector<int> pool = build_pool(probs, sampler);
    const SampleBatch batch = draw_minimal_batch(pool, sampler, rng);
    result.minimal_samples += batch.size();
    watch.lap(&timing.sampling);

    models.clear();
    models.reserve(static_cast<size_t>(batch.size()) + 1);
    for (int r = 0; r < batch.size(); ++r) {
      if (auto m = eight_point(data.points, batch.row(r), data.kind)) models.push_back(std::move(*m));
    }
    models.push_back(best);
    watch.lap(&timing.solving);

    ScoreMatrix s = score_models(models, data.points, data.threshold_sq);
    watch.lap(&timing.scoring);
    if (cfg.lo_iterations > 0) local_optimize_topk(&models, &s, data.points, lo_cfg);
    watch.lap(&timing.refinement);

    if (cfg.consensus_update) f = state_transform(bundle, f, AttentionOperator::factored(s), tape);
    watch.lap(&timing.state_update);
    probs = decode_inliers(bundle, f, tape);
    watch.lap(&timing.decoder);

    const Eigen::VectorXd totals = s.column_totals();
    const int j = top_one(totals);
    result.per_batch_best_score.push_back(totals(j));
    best = models[static_cast<size_t>(j)];
    watch.lap(&timing.scoring);

    const ModelHypothesis chosen = best;
    if (!best.is_zero()) {
      try {
        best = refine_alpha(best, data.points, probs, bundle.alpha, final_cfg);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kRefineUnderdetermined) throw;
      }
    }
    watch.lap(&timing.refinement);
    if (trace) {
      trace->probs.push_back(probs);
      trace->top_one.push_back(chosen);
      trace->refined.push_back(best);
    }
  }

  result.model = best;
  result.inlier_probs = probs;
  timing.total = std::chrono::duration<double>(Clock::now() - start).count();
  return result;
}

EstimationResult msac_ransac_baseline(const PreparedData& data, const EngineConfig& cfg) {
  cfg.validate();
  require_points(data, cfg.sampler.sample_size);
  const auto start = Clock::now();
  EstimationResult result;
  TimingBreakdown& timing = result.timing;
  Stopwatch watch;

  SamplerConfig sampler = cfg.sampler;
  sampler.batch_size = cfg.batch_size;
  std::mt19937_64 rng(sampler.rng_seed);
  std::vector<int> all(data.points.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);

  ModelHypothesis best = ModelHypothesis::zero(data.kind);
  double best_score = 0.0;
  for (int q = 0; q < cfg.batches; ++q) {
    const SampleBatch batch = draw_minimal_batch(all, sampler, rng);
    result.minimal_samples += batch.size();
    watch.lap(&timing.sampling);
    for (int r = 0; r < batch.size(); ++r) {
      auto m = eight_point(data.points, batch.row(r), data.kind);
      watch.lap(&timing.solving);
      if (!m) continue;
      const double score = score_column(*m, data.points, data.threshold_sq).sum();
      if (score > best_score) {
        best_score = score;
        best = std::move(*m);
      }
      watch.lap(&timing.scoring);
    }
    result.per_batch_best_score.push_back(best_score);
  }

  result.model = refine_on_inliers(best, data, final_config(cfg, data.threshold_sq));
  result.inlier_probs = score_column(result.model, data.points, data.threshold_sq);
  watch.lap(&timing.refinement);
  timing.total = std::chrono::duration<double>(Clock::now() - start).count();
  return result;
}

EstimationResult lm_lo_baseline(const PreparedData& data, const Eigen::VectorXd& quality,
                                const EngineConfig& cfg) {
  cfg.validate();
  require_points(data, cfg.sampler.sample_size);
  if (static_cast<size_t>(quality.size()) != data.points.size()) {
    throw Error(ErrorCode::kShapeMismatch, "one quality value per correspondence required");
  }
  const auto start = Clock::now();
  EstimationResult result;
  TimingBreakdown& timing = result.timing;
  Stopwatch watch;

  std::mt19937_64 rng(cfg.sampler.rng_seed);
  ProsacSampler prosac(quality, cfg.sampler.sample_size, cfg.total_samples(), rng);
  const RefineConfig lo_cfg = lo_config(cfg, data.threshold_sq);
  watch.lap(&timing.sampling);

  ModelHypothesis best = ModelHypothesis::zero(data.kind);
  double best_score = 0.0;
  for (int q = 0; q < cfg.batches; ++q) {
    for (int r = 0; r < cfg.batch_size; ++r) {
      const std::vector<int> sample = prosac.next();
      ++result.minimal_samples;
      watch.lap(&timing.sampling);
      auto m = eight_point(data.points, sample, data.kind);
      watch.lap(&timing.solving);
      if (!m) continue;
      const double score = score_column(*m, data.points, data.threshold_sq).sum();
      watch.lap(&timing.scoring);
      if (!(score > best_score)) continue;
      best_score = score;
      best = std::move(*m);
      if (cfg.lo_iterations > 0) {
        const ModelHypothesis lo = refine_on_inliers(best, data, lo_cfg);
        const double lo_score = score_column(lo, data.points, data.threshold_sq).sum();
        if (lo_score > best_score) {
          best_score = lo_score;
          best = lo;
        }
      }
      watch.lap(&timing.refinement);
    }
    result.per_batch_best_score.push_back(best_score);
  }

  result.model = refine_on_inliers(best, data, final_config(cfg, data.threshold_sq));
  result.inlier_probs = score_column(result.model, data.points, data.threshold_sq);
  watch.lap(&timing.refinement);
  timing.total = std::chrono::duration<double>(Clock::now() - start).count();
  return result;
}

RelativePose pose_from_model(const ModelHypothesis& model, const PreparedData& data,
                             const Calibration& calib) {
  if (model.is_zero()) throw Error(ErrorCode::kPoseUndecidable, "no model to decompose");
  const Eigen::VectorXd scores = score_column(model, data.points, data.threshold_sq);
  std::vector<Correspondence> inliers;
  for (size_t i = 0; i < data.points.size(); ++i) {
    if (scores(static_cast<Eigen::Index>(i)) > 0.0) inliers.push_back(data.points[i]);
  }
  if (inliers.empty()) inliers = data.points;
  if (model.kind() == ModelKind::kEssential) return decompose_essential(model, inliers);
  const ModelHypothesis e = f_to_e_upgrade(model, calib.k1, calib.k2);
  return decompose_essential(e, normalize_by_intrinsics(inliers, calib.k1, calib.k2));
}

}  // namespace carsac
