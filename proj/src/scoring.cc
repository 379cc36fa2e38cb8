#include "carsac/scoring.h"

#include "carsac/geometry.h"

#include <algorithm>
#include <cmath>

namespace carsac {

double msac_score(double r_sq, double t) {
  if (!(t > 0.0)) throw Error(ErrorCode::kInvalidArgument, "MSAC threshold must be positive");
  if (!(r_sq < t)) return 0.0;  // also catches +inf and NaN
  return 1.0 - r_sq / t;
}

Eigen::VectorXd score_column(const ModelHypothesis& model, std::span<const Correspondence> data,
                             double t) {
  Eigen::VectorXd col = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(data.size()));
  if (model.is_zero()) return col;
  const Eigen::Matrix3d& m = model.matrix();
  for (size_t i = 0; i < data.size(); ++i) {
    col(static_cast<Eigen::Index>(i)) = msac_score(sampson_sq(m, data[i].p1, data[i].p2), t);
  }
  return col;
}

ScoreMatrix score_models(std::span<const ModelHypothesis> models,
                         std::span<const Correspondence> data, double t) {
  ScoreMatrix out;
  out.threshold = t;
  out.s.resize(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(models.size()));
  for (size_t j = 0; j < models.size(); ++j) {
    out.s.col(static_cast<Eigen::Index>(j)) = score_column(models[j], data, t);
  }
  return out;
}

AttentionMatrix consensus_attention(const ScoreMatrix& s) {
  const double total = s.s.sum();
  AttentionMatrix out;
  if (!(total > 0.0)) {
    out.a = Eigen::MatrixXd::Zero(s.points(), s.points());
    return out;
  }
  out.a.noalias() = s.s * s.s.transpose();
  out.a /= total;
  return out;
}

AttentionOperator AttentionOperator::dense(AttentionMatrix a) {
  AttentionOperator op;
  op.m_ = std::move(a.a);
  return op;
}

AttentionOperator AttentionOperator::factored(const ScoreMatrix& s) {
  AttentionOperator op;
  op.factored_ = true;
  op.m_ = s.s;
  const double total = s.s.sum();
  op.inv_total_ = total > 0.0 ? 1.0 / total : 0.0;
  return op;
}

Eigen::Index AttentionOperator::size() const { return m_.rows(); }

Eigen::MatrixXd AttentionOperator::apply(const Eigen::MatrixXd& x) const {
  if (!factored_) return m_ * x;
  if (inv_total_ == 0.0) return Eigen::MatrixXd::Zero(m_.rows(), x.cols());
  const Eigen::MatrixXd projected = m_.transpose() * x;
  Eigen::MatrixXd out = m_ * projected;
  out *= inv_total_;
  return out;
}

AttentionMatrix AttentionOperator::materialize() const {
  if (!factored_) return AttentionMatrix{m_};
  AttentionMatrix out;
  out.a = m_ * m_.transpose();
  out.a *= inv_total_;
  return out;
}

}  // namespace carsac
