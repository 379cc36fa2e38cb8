#include "carsac/refinement.h"

#include "carsac/geometry.h"

#include <Eigen/Cholesky>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace carsac {

RefineConfig RefineConfig::final_stage(double threshold_sq) {
  RefineConfig cfg;
  cfg.max_iterations = 50;
  cfg.loss = RobustLoss::kCauchy;
  cfg.loss_scale = threshold_sq;
  return cfg;
}

RefineConfig RefineConfig::intermediate(double threshold_sq) {
  RefineConfig cfg;
  cfg.max_iterations = 10;
  cfg.loss = RobustLoss::kTruncated;
  cfg.loss_scale = threshold_sq;
  return cfg;
}

void RefineConfig::validate() const {
  if (max_iterations < 1 || !(lambda_init > 0.0) || !(lambda_up > 1.0) || !(lambda_down > 0.0) ||
      !(lambda_down < 1.0) || !(weight_cutoff >= 0.0) || !(loss_scale > 0.0) || top_k < 1 ||
      !(min_relative_decrease >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "invalid refinement configuration");
  }
}

namespace {

Eigen::Matrix3d so3_exp(const Eigen::Vector3d& w) {
  const double angle = w.norm();
  if (angle < 1e-12) return Eigen::Matrix3d::Identity() + skew(w);
  return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

// Two unit vectors completing t to an orthonormal basis.
Eigen::Matrix<double, 3, 2> tangent_basis(const Eigen::Vector3d& t) {
  Eigen::Index k = 0;
  t.cwiseAbs().minCoeff(&k);
  const Eigen::Vector3d b1 = t.cross(Eigen::Vector3d::Unit(k)).normalized();
  Eigen::Matrix<double, 3, 2> b;
  b.col(0) = b1;
  b.col(1) = t.cross(b1);
  return b;
}

Eigen::Matrix3d conditioning(std::span<const Correspondence> pts, bool second) {
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const Correspondence& c : pts) centroid += second ? c.p2 : c.p1;
  centroid /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const Correspondence& c : pts) mean_dist += ((second ? c.p2 : c.p1) - centroid).norm();
  mean_dist /= static_cast<double>(pts.size());
  if (!(mean_dist > 0.0)) return Eigen::Matrix3d::Identity();
  const double s = std::sqrt(2.0) / mean_dist;
  Eigen::Matrix3d t;
  t << s, 0.0, -s * centroid.x(), 0.0, s, -s * centroid.y(), 0.0, 0.0, 1.0;
  return t;
}

Eigen::Matrix<double, 9, 1> vec(const Eigen::Matrix3d& m) {
  Eigen::Matrix<double, 9, 1> v;
  v << m(0, 0), m(0, 1), m(0, 2), m(1, 0), m(1, 1), m(1, 2), m(2, 0), m(2, 1), m(2, 2);
  return v;
}

double rho(double s, const RefineConfig& cfg) {
  if (cfg.loss == RobustLoss::kTruncated) return std::min(s, cfg.loss_scale);
  return cfg.loss_scale * std::log1p(s / cfg.loss_scale);
}

double rho_prime(double s, const RefineConfig& cfg) {
  if (cfg.loss == RobustLoss::kTruncated) return s < cfg.loss_scale ? 1.0 : 0.0;
  return 1.0 / (1.0 + s / cfg.loss_scale);
}

double sampson_cost(const Eigen::Matrix3d& m, std::span<const Correspondence> pts,
                    std::span<const double> w, const RefineConfig& cfg) {
  double cost = 0.0;
  for (size_t i = 0; i < pts.size(); ++i) {
    const double s = sampson_sq(m, pts[i].p1, pts[i].p2);
    cost += w[i] * rho(std::isfinite(s) ? s : 1e300, cfg);
  }
  return cost;
}

}  // namespace

ModelChart::ModelChart(const ModelHypothesis& model, std::span<const Correspondence> conditioning_pts)
    : kind_(model.kind()) {
  if (model.is_zero()) throw Error(ErrorCode::kInvalidArgument, "cannot build a chart on a zero model");
  Eigen::Matrix3d m = model.matrix();
  if (kind_ == ModelKind::kFundamental && !conditioning_pts.empty()) {
    t1_ = conditioning(conditioning_pts, false);
    t2_ = conditioning(conditioning_pts, true);
    m = t2_.inverse().transpose() * m * t1_.inverse();
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  Eigen::Matrix3d v = svd.matrixV();
  if (u.determinant() < 0.0) u = -u;
  if (v.determinant() < 0.0) v = -v;
  if (kind_ == ModelKind::kFundamental) {
    u_ = u;
    v_ = v;
    phi_ = std::atan2(svd.singularValues()(1), svd.singularValues()(0));
  } else {
    Eigen::Matrix3d w;
    w << 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0;
    u_ = u * w * v.transpose();  // rotation
    t_ = u.col(2).normalized();
  }
}

Eigen::Matrix3d ModelChart::matrix() const {
  if (kind_ == ModelKind::kEssential) return skew(t_) * u_;
  const Eigen::Vector3d d(std::cos(phi_), std::sin(phi_), 0.0);
  return t2_.transpose() * u_ * d.asDiagonal() * v_.transpose() * t1_;
}

Eigen::Matrix<double, 9, Eigen::Dynamic> ModelChart::jacobian() const {
  Eigen::Matrix<double, 9, Eigen::Dynamic> j(9, dof());
  if (kind_ == ModelKind::kEssential) {
    const Eigen::Matrix3d tx = skew(t_);
    for (int k = 0; k < 3; ++k) j.col(k) = vec(tx * u_ * skew(Eigen::Vector3d::Unit(k)));
    const Eigen::Matrix<double, 3, 2> b = tangent_basis(t_);
    for (int k = 0; k < 2; ++k) j.col(3 + k) = vec(skew(b.col(k)) * u_);
    return j;
  }
  const Eigen::Vector3d dv(std::cos(phi_), std::sin(phi_), 0.0);
  const Eigen::Matrix3d d = dv.asDiagonal();
  const Eigen::Matrix3d left = t2_.transpose() * u_;
  const Eigen::Matrix3d right = v_.transpose() * t1_;
  for (int k = 0; k < 3; ++k) {
    const Eigen::Matrix3d ek = skew(Eigen::Vector3d::Unit(k));
    j.col(k) = vec(left * ek * d * right);
    j.col(3 + k) = vec(-left * d * ek * right);
  }
  const Eigen::Vector3d ddv(-std::sin(phi_), std::cos(phi_), 0.0);
  j.col(6) = vec(left * ddv.asDiagonal() * right);
  return j;
}

ModelChart ModelChart::retract(const Eigen::VectorXd& delta) const {
  ModelChart out = *this;
  if (kind_ == ModelKind::kEssential) {
    out.u_ = u_ * so3_exp(delta.head<3>());
    out.t_ = (t_ + tangent_basis(t_) * delta.segment<2>(3)).normalized();
    return out;
  }
  out.u_ = u_ * so3_exp(delta.head<3>());
  out.v_ = v_ * so3_exp(delta.segment<3>(3));
  out.phi_ = phi_ + delta(6);
  return out;
}

ModelHypothesis ModelChart::hypothesis() const {
  return ModelHypothesis::refined(matrix(), kind_);
}

double sampson_residual(const Eigen::Matrix3d& m, const Correspondence& c,
                        Eigen::Matrix<double, 9, 1>* grad) {
  const Eigen::Vector3d x1(c.p1.x(), c.p1.y(), 1.0);
  const Eigen::Vector3d x2(c.p2.x(), c.p2.y(), 1.0);
  const Eigen::Vector3d a = m * x1;
  const Eigen::Vector3d b = m.transpose() * x2;
  const double num = x2.dot(a);
  const double den = a(0) * a(0) + a(1) * a(1) + b(0) * b(0) + b(1) * b(1);
  if (!(den > 0.0)) {
    if (grad) grad->setZero();
    return kInfiniteResidual;
  }
  const double inv_sqrt = 1.0 / std::sqrt(den);
  const double r = num * inv_sqrt;
  if (grad) {
    const double k = 0.5 * num * inv_sqrt / den;  // d r / d den = -k
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double d_den = 0.0;
        if (i < 2) d_den += 2.0 * a(i) * x1(j);
        if (j < 2) d_den += 2.0 * b(j) * x2(i);
        (*grad)(3 * i + j) = x2(i) * x1(j) * inv_sqrt - k * d_den;
      }
    }
  }
  return r;
}

double robust_cost(const ModelHypothesis& model, std::span<const Correspondence> data,
                   std::span<const double> weights, const RefineConfig& cfg) {
  double cost = 0.0;
  for (size_t i = 0; i < data.size(); ++i) {
    if (!(weights[i] > cfg.weight_cutoff)) continue;
    const double s = sampson_sq(model.matrix(), data[i].p1, data[i].p2);
    cost += weights[i] * rho(std::isfinite(s) ? s : 1e300, cfg);
  }
  return cost;
}

ModelHypothesis lm_minimize(const ModelHypothesis& model, std::span<const Correspondence> data,
                            std::span<const double> weights, const RefineConfig& cfg,
                            RefineTrace* trace) {
  if (weights.size() != data.size()) {
    throw Error(ErrorCode::kShapeMismatch, "lm_minimize: one weight per correspondence required");
  }
  if (model.is_zero()) throw Error(ErrorCode::kInvalidArgument, "lm_minimize: zero model");

  std::vector<Correspondence> pts;
  std::vector<double> w;
  for (size_t i = 0; i < data.size(); ++i) {
    if (weights[i] > cfg.weight_cutoff) {
      pts.push_back(data[i]);
      w.push_back(weights[i]);
    }
  }
  ModelChart chart(model, pts);
  if (static_cast<int>(pts.size()) < chart.dof()) {
    throw Error(ErrorCode::kRefineUnderdetermined,
                "refinement needs " + std::to_string(chart.dof()) + " weighted points, got " +
                    std::to_string(pts.size()));
  }

  const int dof = chart.dof();
  double cost = sampson_cost(chart.matrix(), pts, w, cfg);
  double lambda = cfg.lambda_init;
  if (trace) {
    trace->costs.assign(1, cost);
    trace->iterations = 0;
  }

  Eigen::MatrixXd h(dof, dof);
  Eigen::VectorXd g(dof);
  Eigen::Matrix<double, 9, 1> dr;
  bool rebuild = true;
  for (int it = 0; it < cfg.max_iterations && cost > 0.0; ++it) {
    if (rebuild) {
      const Eigen::Matrix3d m = chart.matrix();
      const Eigen::Matrix<double, 9, Eigen::Dynamic> dm = chart.jacobian();
      h.setZero();
      g.setZero();
      for (size_t i = 0; i < pts.size(); ++i) {
        const double r = sampson_residual(m, pts[i], &dr);
        if (!std::isfinite(r)) continue;
        const double wi = w[i] * rho_prime(r * r, cfg);
        if (wi == 0.0) continue;
        const Eigen::RowVectorXd ji = dr.transpose() * dm;
        h.noalias() += wi * ji.transpose() * ji;
        g.noalias() += wi * r * ji.transpose();
      }
      rebuild = false;
    }
    if (trace) ++trace->iterations;

    Eigen::MatrixXd damped = h;
    const double floor = 1e-12 * std::max(h.diagonal().maxCoeff(), 1e-300);
    for (int k = 0; k < dof; ++k) damped(k, k) += lambda * (h(k, k) + floor);
    const Eigen::VectorXd step = damped.ldlt().solve(-g);
    if (!step.allFinite()) {
      lambda *= cfg.lambda_up;
      continue;
    }
    const ModelChart candidate = chart.retract(step);
    const double new_cost = sampson_cost(candidate.matrix(), pts, w, cfg);
    if (new_cost < cost) {
      const double decrease = (cost - new_cost) / cost;
      chart = candidate;
      cost = new_cost;
      lambda = std::max(lambda * cfg.lambda_down, 1e-12);
      rebuild = true;
      if (trace) trace->costs.push_back(cost);
      if (decrease < cfg.min_relative_decrease) break;
    } else {
      lambda *= cfg.lambda_up;
      if (lambda > 1e16) break;
    }
  }
  return chart.hypothesis();
}

int refine_support(const Eigen::VectorXd& probs, double alpha, double cutoff) {
  int count = 0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (std::pow(probs(i), alpha) > cutoff) ++count;
  }
  return count;
}

ModelHypothesis refine_alpha(const ModelHypothesis& best, std::span<const Correspondence> data,
                             const Eigen::VectorXd& probs, double alpha, const RefineConfig& cfg,
                             RefineTrace* trace) {
  if (static_cast<size_t>(probs.size()) != data.size()) {
    throw Error(ErrorCode::kShapeMismatch, "refine_alpha: one probability per correspondence required");
  }
  std::vector<double> w(data.size());
  for (size_t i = 0; i < data.size(); ++i) w[i] = std::pow(probs(static_cast<Eigen::Index>(i)), alpha);
  return lm_minimize(best, data, w, cfg, trace);
}

std::vector<int> local_optimize_topk(std::vector<ModelHypothesis>* models, ScoreMatrix* s,
                                     std::span<const Correspondence> data,
                                     const RefineConfig& cfg) {
  const Eigen::VectorXd totals = s->column_totals();
  std::vector<int> order(static_cast<size_t>(totals.size()));
  std::iota(order.begin(), order.end(), 0);
  const size_t k = std::min(order.size(), static_cast<size_t>(cfg.top_k));
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](int a, int b) { return totals(a) > totals(b) || (totals(a) == totals(b) && a < b); });
  order.resize(k);

  std::vector<double> w(data.size());
  for (int j : order) {
    ModelHypothesis& model = (*models)[static_cast<size_t>(j)];
    if (model.is_zero()) continue;
    int inliers = 0;
    for (size_t i = 0; i < data.size(); ++i) {
      w[i] = s->s(static_cast<Eigen::Index>(i), j) > 0.0 ? 1.0 : 0.0;
      inliers += w[i] > 0.0;
    }
    const int dof = model.kind() == ModelKind::kEssential ? 5 : 7;
    if (inliers < dof) continue;
    try {
      model = lm_minimize(model, data, w, cfg);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kRefineUnderdetermined) throw;
      continue;
    }
    s->s.col(j) = score_column(model, data, s->threshold);
  }
  return order;
}

}  // namespace carsac
