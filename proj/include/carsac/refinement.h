#pragma once

#include "carsac/scoring.h"
#include "carsac/types.h"

#include <Eigen/Core>

#include <span>
#include <vector>

namespace carsac {

enum class RobustLoss {
  kCauchy,     // rho(s) = c log(1 + s / c)
  kTruncated,  // rho(s) = min(s, c)
};

struct RefineConfig {
  int max_iterations = 50;
  double lambda_init = 1e-3;
  double lambda_up = 10.0;
  double lambda_down = 0.1;
  double weight_cutoff = 1e-3;
  // Scale c of the robust loss, in squared-residual units.
  double loss_scale = 1.0;
  RobustLoss loss = RobustLoss::kCauchy;
  int top_k = 4;
  // Stop once an accepted step lowers the cost by less than this fraction.
  double min_relative_decrease = 1e-10;

  // Final likelihood-weighted refinement: Cauchy loss, 50 iterations.
  static RefineConfig final_stage(double threshold_sq);
  // Intermediate top-k local optimization: truncated loss, 10 iterations.
  static RefineConfig intermediate(double threshold_sq);
  void validate() const;
};

struct RefineTrace {
  std::vector<double> costs;  // initial cost, then the cost after each accepted step
  int iterations = 0;         // attempted steps
};

/// Minimal local chart on the model manifold.
///
/// Essential: E = [t]x R with R <- R exp([w]x) and t moved on the unit sphere
/// (5 dof). Fundamental: F = T2^T U diag(cos phi, sin phi, 0) V^T T1 with
/// U, V in SO(3) and T1, T2 Hartley conditioning of the supplied points
/// (7 dof). Every retraction stays on the manifold.
class ModelChart {
 public:
  ModelChart(const ModelHypothesis& model, std::span<const Correspondence> conditioning);

  int dof() const { return kind_ == ModelKind::kEssential ? 5 : 7; }
  ModelKind kind() const { return kind_; }
  // Model in data coordinates (arbitrary scale).
  Eigen::Matrix3d matrix() const;
  // d vec(M) / d delta at delta = 0, vec() row-major.
  Eigen::Matrix<double, 9, Eigen::Dynamic> jacobian() const;
  ModelChart retract(const Eigen::VectorXd& delta) const;
  ModelHypothesis hypothesis() const;

 private:
  ModelChart() = default;

  ModelKind kind_ = ModelKind::kFundamental;
  Eigen::Matrix3d u_ = Eigen::Matrix3d::Identity();  // R for essential
  Eigen::Matrix3d v_ = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t_ = Eigen::Vector3d::UnitX();
  double phi_ = 0.0;
  Eigen::Matrix3d t1_ = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d t2_ = Eigen::Matrix3d::Identity();
};

// Signed Sampson error r (r^2 = sampson_sq) and its gradient w.r.t. vec(M), row-major.
double sampson_residual(const Eigen::Matrix3d& m, const Correspondence& c,
                        Eigen::Matrix<double, 9, 1>* grad);

/// Weighted robust Levenberg-Marquardt on the model manifold, minimizing
/// sum_i w_i rho(sampson_sq(M, c_i)) over points with w_i > weight_cutoff.
/// Points at or below the cutoff are never read. A step is accepted only if
/// it lowers the cost; the best iterate is returned with Refined provenance.
/// Throws kRefineUnderdetermined when fewer than dof points survive the cutoff.
ModelHypothesis lm_minimize(const ModelHypothesis& model, std::span<const Correspondence> data,
                            std::span<const double> weights, const RefineConfig& cfg,
                            RefineTrace* trace = nullptr);

double robust_cost(const ModelHypothesis& model, std::span<const Correspondence> data,
                   std::span<const double> weights, const RefineConfig& cfg);

// Weights w_i = p_i^alpha, then lm_minimize.
ModelHypothesis refine_alpha(const ModelHypothesis& best, std::span<const Correspondence> data,
                             const Eigen::VectorXd& probs, double alpha, const RefineConfig& cfg,
                             RefineTrace* trace = nullptr);

// Number of points with p_i^alpha > cutoff.
int refine_support(const Eigen::VectorXd& probs, double alpha, double cutoff);

/// Refines the top-k columns by total consensus (ties to the lower index) on
/// their own MSAC inliers with cfg (truncated loss), replaces those models
/// and recomputes only their score columns. A model whose refinement fails or
/// has fewer inliers than the chart dimension is left untouched. Returns the
/// selected column indices.
std::vector<int> local_optimize_topk(std::vector<ModelHypothesis>* models, ScoreMatrix* s,
                                     std::span<const Correspondence> data,
                                     const RefineConfig& cfg);

}  // namespace carsac
