#pragma once

#include "carsac/types.h"

#include <Eigen/Core>

#include <span>

namespace carsac {

// MSAC truncated-linear score 1 - min(r, t) / t. An infinite residual scores 0.
double msac_score(double r_sq, double t);

// Scores of n correspondences (rows) against m hypotheses (columns).
struct ScoreMatrix {
  Eigen::MatrixXd s;
  double threshold = 1.0;  // squared-residual units

  Eigen::Index points() const { return s.rows(); }
  Eigen::Index models() const { return s.cols(); }
  // C_j = sum_i s_ij
  Eigen::VectorXd column_totals() const { return s.colwise().sum().transpose(); }
};

// Zero-provenance models get an all-zero column.
ScoreMatrix score_models(std::span<const ModelHypothesis> models,
                         std::span<const Correspondence> data, double t);
Eigen::VectorXd score_column(const ModelHypothesis& model, std::span<const Correspondence> data,
                             double t);

struct AttentionMatrix {
  Eigen::MatrixXd a;
};

/// Consensus attention A = S S^T / sum_j C_j.
///
/// No row normalization: the row sum of point i equals sum_j s_ij C_j / sum_l C_l,
/// which is the point's consensus weighted by each model's relative
/// consensus, and stays in [0, 1]. Returns the zero matrix when sum_j C_j = 0.
AttentionMatrix consensus_attention(const ScoreMatrix& s);

// Applies the attention matrix without materializing it: A X = S (S^T X) / sum C.
// Equivalent to the dense product and O(n m d) instead of O(n^2 (m + d)).
class AttentionOperator {
 public:
  static AttentionOperator dense(AttentionMatrix a);
  static AttentionOperator factored(const ScoreMatrix& s);

  Eigen::Index size() const;
  // A X; since A is symmetric this is also A^T X.
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
  AttentionMatrix materialize() const;

 private:
  bool factored_ = false;
  Eigen::MatrixXd m_;        // A itself, or S when factored
  double inv_total_ = 0.0;   // 1 / sum C_j when factored (0 if the sum is zero)
};

}  // namespace carsac
