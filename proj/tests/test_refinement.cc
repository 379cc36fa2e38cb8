#include "carsac/engine.h"
#include "carsac/geometry.h"
#include "carsac/refinement.h"
#include "carsac/scoring.h"

#include "test_util.h"

#include <gtest/gtest.h>

#include <Eigen/SVD>

#include <numeric>

using namespace carsac;

namespace {

constexpr double kThresholdSq = 1.5 * 1.5;

double aligned_distance(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  const Eigen::Matrix3d an = a / a.norm();
  const Eigen::Matrix3d bn = b / b.norm();
  return std::min((an - bn).norm(), (an + bn).norm());
}

// Singular values of the unit-norm model.
Eigen::Vector3d singular_values(const Eigen::Matrix3d& m) {
  return Eigen::JacobiSVD<Eigen::Matrix3d>(m).singularValues() / m.norm();
}

void expect_on_manifold(const ModelHypothesis& m) {
  const Eigen::Vector3d sv = singular_values(m.matrix());
  EXPECT_LT(sv(2), 1e-12);
  if (m.kind() == ModelKind::kEssential) {
    EXPECT_NEAR(sv(0), sv(1), 1e-12);
  }
  EXPECT_NEAR(m.matrix().norm(), 1.0, 1e-12);
}

PreparedData pixel_data(const SyntheticPair& pair) {
  return PreparedData{pair.correspondences, ModelKind::kFundamental, kThresholdSq};
}

std::vector<double> ones(size_t n) { return std::vector<double>(n, 1.0); }

// Eight inliers picked at random, solved with the 8-point algorithm.
std::optional<ModelHypothesis> eight_point_start(const std::vector<Correspondence>& inl,
                                                 std::mt19937_64& rng) {
  std::vector<int> idx(inl.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(8);
  return eight_point(inl, idx, ModelKind::kFundamental);
}

}  // namespace

TEST(RefineConfig, Presets) {
  const RefineConfig f = RefineConfig::final_stage(2.0);
  EXPECT_EQ(f.max_iterations, 50);
  EXPECT_EQ(f.loss, RobustLoss::kCauchy);
  EXPECT_EQ(f.loss_scale, 2.0);
  EXPECT_EQ(f.weight_cutoff, 1e-3);
  const RefineConfig i = RefineConfig::intermediate(2.0);
  EXPECT_EQ(i.max_iterations, 10);
  EXPECT_EQ(i.loss, RobustLoss::kTruncated);
  EXPECT_EQ(i.top_k, 4);
  RefineConfig bad = f;
  bad.top_k = 0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Chart, JacobianMatchesFiniteDifferences) {
  for (ModelKind kind : {ModelKind::kFundamental, ModelKind::kEssential}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const SyntheticPair pair = fixtures::make_pair(60, 1.0, 0.3, seed);
      std::vector<Correspondence> pts = pair.correspondences;
      Eigen::Matrix3d m = gt_fundamental(pair);
      if (kind == ModelKind::kEssential) {
        pts = normalize_by_intrinsics(pts, pair.calib.k1, pair.calib.k2);
        m = essential_from_pose(pair.pose);
      }
      const ModelChart chart(ModelHypothesis::refined(m, kind), pts);
      const Eigen::Matrix<double, 9, Eigen::Dynamic> j = chart.jacobian();
      const double h = 1e-6;
      for (int k = 0; k < chart.dof(); ++k) {
        Eigen::VectorXd d = Eigen::VectorXd::Zero(chart.dof());
        d(k) = h;
        const Eigen::Matrix3d plus = chart.retract(d).matrix();
        const Eigen::Matrix3d minus = chart.retract(-d).matrix();
        Eigen::Matrix3d fd = (plus - minus) / (2.0 * h);
        for (int r = 0; r < 3; ++r) {
          for (int c = 0; c < 3; ++c) {
            const double a = j(3 * r + c, k);
            EXPECT_NEAR(a, fd(r, c), 1e-6 * std::max(1.0, std::abs(a))) << "dof " << k;
          }
        }
      }
    }
  }
}

TEST(Chart, RetractionStaysOnManifold) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (ModelKind kind : {ModelKind::kFundamental, ModelKind::kEssential}) {
    const SyntheticPair pair = fixtures::make_pair(50, 1.0, 0.5, 3);
    std::vector<Correspondence> pts = pair.correspondences;
    Eigen::Matrix3d m = gt_fundamental(pair);
    if (kind == ModelKind::kEssential) {
      pts = normalize_by_intrinsics(pts, pair.calib.k1, pair.calib.k2);
      m = essential_from_pose(pair.pose);
    }
    ModelChart chart(ModelHypothesis::refined(m, kind), pts);
    for (int step = 0; step < 50; ++step) {
      Eigen::VectorXd d(chart.dof());
      for (int k = 0; k < chart.dof(); ++k) d(k) = 0.3 * g(rng);
      chart = chart.retract(d);
      expect_on_manifold(chart.hypothesis());
    }
  }
}

TEST(SampsonResidual, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-400.0, 400.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Matrix3d m = Eigen::Matrix3d::Random();
    Correspondence c;
    c.p1 = Eigen::Vector2d(u(rng), u(rng));
    c.p2 = Eigen::Vector2d(u(rng), u(rng));
    Eigen::Matrix<double, 9, 1> grad;
    const double r = sampson_residual(m, c, &grad);
    EXPECT_NEAR(r * r, fixtures::oracle_sampson_sq(m, c.p1, c.p2),
                1e-10 * std::max(1.0, r * r));
    for (int k = 0; k < 9; ++k) {
      const double h = 1e-7 * std::max(1.0, std::abs(m(k / 3, k % 3)));
      Eigen::Matrix3d p = m;
      Eigen::Matrix3d q = m;
      p(k / 3, k % 3) += h;
      q(k / 3, k % 3) -= h;
      const double fd = (sampson_residual(p, c, nullptr) - sampson_residual(q, c, nullptr)) / (2 * h);
      EXPECT_NEAR(grad(k), fd, 1e-5 * std::max(1.0, std::abs(fd))) << k;
    }
  }
}

TEST(LmMinimize, GroundTruthIsFixedPoint) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SyntheticPair pair = fixtures::make_pair(80, 1.0, 0.0, seed);
    const ModelHypothesis gt = ModelHypothesis::refined(gt_fundamental(pair), ModelKind::kFundamental);
    const RefineConfig cfg = RefineConfig::final_stage(kThresholdSq);
    const std::vector<double> w = ones(pair.correspondences.size());
    EXPECT_LT(robust_cost(gt, pair.correspondences, w, cfg), 1e-18);
    const ModelHypothesis out = lm_minimize(gt, pair.correspondences, w, cfg);
    EXPECT_LT(aligned_distance(out.matrix(), gt.matrix()), 1e-9);
    EXPECT_LT(robust_cost(out, pair.correspondences, w, cfg), 1e-18);
    expect_on_manifold(out);
  }
}

TEST(LmMinimize, CostNeverIncreasesAndPoseImproves) {
  std::mt19937_64 rng(5);
  int not_worse = 0;
  const int trials = 200;
  for (int trial = 0; trial < trials; ++trial) {
    const SyntheticPair pair = fixtures::make_pair(100, 1.0, 0.5, 1000 + static_cast<std::uint64_t>(trial));
    const std::vector<Correspondence> inl = fixtures::inliers_of(pair);
    const auto start = eight_point_start(inl, rng);
    if (!start) continue;
    const RefineConfig cfg = RefineConfig::final_stage(kThresholdSq);
    const std::vector<double> w = ones(inl.size());
    RefineTrace trace;
    const ModelHypothesis out = lm_minimize(*start, inl, w, cfg, &trace);
    ASSERT_FALSE(trace.costs.empty());
    for (size_t i = 1; i < trace.costs.size(); ++i) EXPECT_LT(trace.costs[i], trace.costs[i - 1]);
    EXPECT_LE(robust_cost(out, inl, w, cfg), robust_cost(*start, inl, w, cfg));
    EXPECT_LE(trace.iterations, cfg.max_iterations);
    expect_on_manifold(out);

    const PreparedData data = pixel_data(pair);
    const double before = pose_error_deg(pose_from_model(*start, data, pair.calib), pair.pose);
    const double after = pose_error_deg(pose_from_model(out, data, pair.calib), pair.pose);
    not_worse += after <= before;
  }
  EXPECT_GE(not_worse, 180) << "of " << trials;
}

TEST(LmMinimize, CauchyBoundsGrossOutlier) {
  std::mt19937_64 rng(6);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SyntheticPair pair = fixtures::make_pair(100, 1.0, 0.5, 2000 + seed);
    std::vector<Correspondence> inl = fixtures::inliers_of(pair);
    const auto start = eight_point_start(inl, rng);
    ASSERT_TRUE(start.has_value());
    const RefineConfig cfg = RefineConfig::final_stage(kThresholdSq);
    const PreparedData data = pixel_data(pair);
    const ModelHypothesis clean = lm_minimize(*start, inl, ones(inl.size()), cfg);
    Correspondence outlier = inl.front();
    outlier.p2 += Eigen::Vector2d(150.0, -220.0);
    inl.push_back(outlier);
    const ModelHypothesis dirty = lm_minimize(*start, inl, ones(inl.size()), cfg);
    const double e_clean = pose_error_deg(pose_from_model(clean, data, pair.calib), pair.pose);
    const double e_dirty = pose_error_deg(pose_from_model(dirty, data, pair.calib), pair.pose);
    EXPECT_LE(e_dirty, 2.0 * e_clean) << "seed " << seed;
  }
}

TEST(LmMinimize, UnderdeterminedThrows) {
  const SyntheticPair pair = fixtures::make_pair(40, 1.0, 0.0, 7);
  const ModelHypothesis gt = ModelHypothesis::refined(gt_fundamental(pair), ModelKind::kFundamental);
  std::vector<double> w(pair.correspondences.size(), 0.0);
  for (int i = 0; i < 6; ++i) w[static_cast<size_t>(i)] = 1.0;
  try {
    lm_minimize(gt, pair.correspondences, w, RefineConfig::final_stage(kThresholdSq));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRefineUnderdetermined);
  }
}

TEST(LmMinimize, EssentialFromPerturbedStart) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const RelativePose pose = fixtures::random_pose(rng);
    const std::vector<Correspondence> pts = fixtures::normalized_scene(pose, 50, rng);
    const ModelHypothesis gt = ModelHypothesis::refined(essential_from_pose(pose), ModelKind::kEssential);
    Eigen::VectorXd d(5);
    d << 0.02, -0.01, 0.015, 0.02, -0.02;
    const ModelHypothesis start = ModelChart(gt, pts).retract(d).hypothesis();
    const RefineConfig cfg = RefineConfig::final_stage(1e-4);
    const ModelHypothesis out = lm_minimize(start, pts, ones(pts.size()), cfg);
    EXPECT_LT(aligned_distance(out.matrix(), gt.matrix()), 1e-8);
    expect_on_manifold(out);
  }
}

TEST(RefineAlpha, IndicatorProbsRecoverGroundTruth) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SyntheticPair pair = fixtures::make_pair(200, 0.5, 0.0, 300 + seed);
    const ModelHypothesis gt = ModelHypothesis::refined(gt_fundamental(pair), ModelKind::kFundamental);
    // Indicator of the points generated on the true geometry; an outlier that
    // happens to fall within the 1 px label band is not one of them.
    Eigen::VectorXd probs(static_cast<Eigen::Index>(pair.correspondences.size()));
    for (size_t i = 0; i < pair.correspondences.size(); ++i) {
      probs(static_cast<Eigen::Index>(i)) = sampson_sq(gt, pair.correspondences[i]) < 1e-16 ? 1.0 : 0.0;
    }
    Eigen::VectorXd d(7);
    d << 1e-3, -2e-3, 1e-3, 5e-4, -1e-3, 2e-3, 1e-3;
    const ModelHypothesis start = ModelChart(gt, pair.correspondences).retract(d).hypothesis();
    ASSERT_GT(aligned_distance(start.matrix(), gt.matrix()), 1e-5);
    const ModelHypothesis out =
        refine_alpha(start, pair.correspondences, probs, 1.0, RefineConfig::final_stage(kThresholdSq));
    EXPECT_LT(aligned_distance(out.matrix(), gt.matrix()), 1e-8) << "seed " << seed;
  }
}

TEST(RefineAlpha, ZeroAlphaIsUnweighted) {
  const SyntheticPair pair = fixtures::make_pair(120, 0.7, 0.5, 9);
  std::mt19937_64 rng(9);
  const auto start = eight_point_start(fixtures::inliers_of(pair), rng);
  ASSERT_TRUE(start.has_value());
  const Eigen::VectorXd probs = Eigen::VectorXd::LinSpaced(120, 0.05, 0.95);
  const RefineConfig cfg = RefineConfig::final_stage(kThresholdSq);
  const ModelHypothesis a = refine_alpha(*start, pair.correspondences, probs, 0.0, cfg);
  const ModelHypothesis b = lm_minimize(*start, pair.correspondences, ones(120), cfg);
  EXPECT_EQ(a.matrix(), b.matrix());
}

TEST(RefineAlpha, ExcludedPointsHaveNoInfluence) {
  const SyntheticPair pair = fixtures::make_pair(150, 0.6, 0.5, 10);
  std::mt19937_64 rng(10);
  const auto start = eight_point_start(fixtures::inliers_of(pair), rng);
  ASSERT_TRUE(start.has_value());
  Eigen::VectorXd probs(150);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Eigen::Index i = 0; i < 150; ++i) {
    probs(i) = pair.correspondences[static_cast<size_t>(i)].gt_inlier.value() ? 0.5 + 0.5 * u(rng)
                                                                               : 1e-4 * u(rng);
  }
  const RefineConfig cfg = RefineConfig::final_stage(kThresholdSq);
  const ModelHypothesis base = refine_alpha(*start, pair.correspondences, probs, 1.0, cfg);
  std::vector<Correspondence> moved = pair.correspondences;
  for (Eigen::Index i = 0; i < 150; ++i) {
    if (probs(i) <= 1e-3) moved[static_cast<size_t>(i)].p2 += Eigen::Vector2d(37.0, -11.0);
  }
  const ModelHypothesis again = refine_alpha(*start, moved, probs, 1.0, cfg);
  EXPECT_EQ(base.matrix(), again.matrix());
}

TEST(RefineAlpha, SupportIsMonotoneInAlpha) {
  const Eigen::VectorXd probs = Eigen::VectorXd::LinSpaced(500, 1e-4, 0.999);
  int last = refine_support(probs, 0.1, 1e-3);
  for (double alpha = 0.2; alpha < 8.0; alpha += 0.1) {
    const int s = refine_support(probs, alpha, 1e-3);
    EXPECT_LE(s, last);
    last = s;
  }
  EXPECT_EQ(refine_support(probs, 0.0, 1e-3), 500);
}

TEST(TopK, ChangesExactlyTheSelectedColumns) {
  const SyntheticPair pair = fixtures::make_pair(400, 0.5, 0.5, 11);
  std::mt19937_64 rng(11);
  SamplerConfig sc;
  std::vector<int> all(400);
  std::iota(all.begin(), all.end(), 0);
  const SampleBatch batch = draw_minimal_batch(all, sc, rng);
  std::vector<ModelHypothesis> models;
  for (int r = 0; r < batch.size(); ++r) {
    auto m = eight_point(pair.correspondences, batch.row(r), ModelKind::kFundamental);
    models.push_back(m ? *m : ModelHypothesis::zero(ModelKind::kFundamental));
  }
  while (models.size() < 256) models.push_back(ModelHypothesis::zero(ModelKind::kFundamental));
  ScoreMatrix s = score_models(models, pair.correspondences, kThresholdSq);
  const ScoreMatrix before = s;
  const std::vector<ModelHypothesis> old = models;
  const std::vector<int> picked =
      local_optimize_topk(&models, &s, pair.correspondences, RefineConfig::intermediate(kThresholdSq));
  ASSERT_EQ(picked.size(), 4u);

  const Eigen::VectorXd totals = before.column_totals();
  std::vector<int> order(256);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return totals(a) > totals(b); });
  EXPECT_EQ(picked, std::vector<int>(order.begin(), order.begin() + 4));

  int changed = 0;
  for (int j = 0; j < 256; ++j) {
    const bool selected = std::find(picked.begin(), picked.end(), j) != picked.end();
    const bool col_changed = s.s.col(j) != before.s.col(j);
    changed += col_changed;
    if (!selected) {
      EXPECT_FALSE(col_changed) << j;
      EXPECT_EQ(models[static_cast<size_t>(j)].matrix(), old[static_cast<size_t>(j)].matrix());
    } else {
      EXPECT_TRUE(col_changed) << j;
      expect_on_manifold(models[static_cast<size_t>(j)]);
    }
  }
  EXPECT_EQ(changed, 4);
}

TEST(TopK, AllZeroScoresLeaveMatrixUnchanged) {
  const SyntheticPair pair = fixtures::make_pair(60, 1.0, 0.0, 12);
  std::vector<ModelHypothesis> models(6, ModelHypothesis::refined(gt_fundamental(pair), ModelKind::kFundamental));
  ScoreMatrix s;
  s.s = Eigen::MatrixXd::Zero(60, 6);
  s.threshold = kThresholdSq;
  const std::vector<int> picked =
      local_optimize_topk(&models, &s, pair.correspondences, RefineConfig::intermediate(kThresholdSq));
  EXPECT_EQ(picked, (std::vector<int>{0, 1, 2, 3}));
  EXPECT_TRUE(s.s.isZero(0.0));
}

TEST(TopK, KAtLeastMRefinesEverything) {
  const SyntheticPair pair = fixtures::make_pair(100, 1.0, 0.5, 13);
  std::mt19937_64 rng(13);
  std::vector<ModelHypothesis> models;
  const std::vector<Correspondence> inl = fixtures::inliers_of(pair);
  while (models.size() < 3) {
    if (auto m = eight_point_start(inl, rng)) models.push_back(*m);
  }
  ScoreMatrix s = score_models(models, inl, kThresholdSq);
  RefineConfig cfg = RefineConfig::intermediate(kThresholdSq);
  cfg.top_k = 5;
  const std::vector<int> picked = local_optimize_topk(&models, &s, inl, cfg);
  EXPECT_EQ(picked.size(), 3u);
  for (int j = 0; j < 3; ++j) {
    EXPECT_EQ(models[static_cast<size_t>(j)].provenance(), Provenance::kRefined);
  }
}
