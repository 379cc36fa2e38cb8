#include "carsac/sampling.h"
#include "carsac/synthetic.h"
#include "carsac/training.h"

#include "test_util.h"

#include <gtest/gtest.h>

#include <cmath>

using namespace carsac;

namespace {

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.engine.kind = ModelKind::kEssential;
  return cfg;
}

std::vector<SyntheticPair> suite(int pairs, double overlap, double noise, std::uint64_t seed) {
  SuiteSpec s;
  s.pairs = pairs;
  s.n_min = 150;
  s.n_max = 250;
  s.rate_min = 0.2;
  s.rate_max = 0.6;
  s.side_overlap = overlap;
  s.noise_px = noise;
  s.seed = seed;
  return generate_suite(s);
}

RelativePose rotated(const RelativePose& p, double deg, const Eigen::Vector3d& axis) {
  RelativePose out = p;
  out.rotation = Eigen::AngleAxisd(deg * M_PI / 180.0, axis.normalized()).toRotationMatrix() * p.rotation;
  return out;
}

}  // namespace

TEST(LossInlier, Examples) {
  EXPECT_NEAR(loss_inlier(Eigen::VectorXd::Constant(5, 0.5), {true, false, true, true, false}),
              std::log(2.0), 1e-15);
  Eigen::VectorXd p(2);
  p << 0.9, 0.2;
  EXPECT_NEAR(loss_inlier(p, {true, false}), -(std::log(0.9) + std::log(0.8)) / 2.0, 1e-15);
  EXPECT_NEAR(loss_inlier(p, {true, false}), 0.1643, 5e-5);
  Eigen::VectorXd sharp(2);
  sharp << 1.0 - 1e-12, 1e-12;
  EXPECT_LT(loss_inlier(sharp, {true, false}), 1e-11);
  EXPECT_THROW(loss_inlier(p, {true}), Error);
}

TEST(LossInlier, GradientMatchesFiniteDifferences) {
  Eigen::VectorXd p(4);
  p << 0.1, 0.45, 0.8, 0.97;
  const std::vector<bool> y = {false, true, true, false};
  Eigen::VectorXd g;
  loss_inlier(p, y, &g);
  for (int i = 0; i < 4; ++i) {
    Eigen::VectorXd a = p;
    Eigen::VectorXd b = p;
    a(i) += 1e-7;
    b(i) -= 1e-7;
    EXPECT_NEAR(g(i), (loss_inlier(a, y) - loss_inlier(b, y)) / 2e-7, 1e-6 * std::abs(g(i)));
  }
}

TEST(LossPose, Examples) {
  RelativePose gt;
  gt.rotation = Eigen::AngleAxisd(0.2, Eigen::Vector3d::UnitX()).toRotationMatrix();
  gt.translation = Eigen::Vector3d(0.6, 0.0, 0.8);
  EXPECT_NEAR(loss_pose(gt, gt, 30.0), 0.0, 1e-9);
  EXPECT_EQ(loss_pose(rotated(gt, 45.0, Eigen::Vector3d(1, 2, 3)), gt, 30.0), 30.0);
  RelativePose t = gt;
  t.translation = Eigen::AngleAxisd(10.0 * M_PI / 180.0, Eigen::Vector3d::UnitY()) * gt.translation;
  EXPECT_NEAR(loss_pose(t, gt, 30.0), 10.0, 1e-9);
}

TEST(LossPose, UndecidableModelScoresClamp) {
  const SyntheticPair pair = fixtures::make_pair(50, 1.0, 0.0, 1);
  const PreparedData data{pair.correspondences, ModelKind::kFundamental, 2.25};
  EXPECT_EQ(loss_pose(ModelHypothesis::zero(ModelKind::kFundamental), data, pair.calib, pair.pose, 30.0),
            30.0);
  const ModelHypothesis f = ModelHypothesis::refined(gt_fundamental(pair), ModelKind::kFundamental);
  EXPECT_LT(loss_pose(f, data, pair.calib, pair.pose, 30.0), 1e-5);
}

TEST(AggregateLoss, BatchWeights) {
  const double eps = 0.1;
  const double want[4] = {0.729, 0.81, 0.9, 1.0};
  for (int q = 0; q < 4; ++q) {
    std::vector<BatchLoss> b(4);
    b[static_cast<size_t>(q)].inlier = 1.0;
    EXPECT_NEAR(aggregate_loss(b, eps, 1.0 / 60.0), want[q], 1e-15);
  }
  std::vector<BatchLoss> b = {{0.3, 6.0}, {0.2, 3.0}};
  EXPECT_NEAR(aggregate_loss(b, 1e-300, 0.5), 0.3 + 3.0 + 0.2 + 1.5, 1e-12);
  std::vector<BatchLoss> one = {{0.4, 12.0}};
  EXPECT_NEAR(aggregate_loss(one, 0.1, 1.0 / 60.0), 0.4 + 0.2, 1e-15);
  EXPECT_THROW(aggregate_loss({}, 0.1, 0.1), Error);
}

TEST(AggregateLoss, MonotoneInEveryComponent) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<BatchLoss> b(4);
    for (BatchLoss& x : b) x = {u(rng), 6.0 * u(rng)};
    const double base = aggregate_loss(b, 0.1, 1.0 / 60.0);
    for (size_t q = 0; q < 4; ++q) {
      std::vector<BatchLoss> up = b;
      up[q].inlier += 0.01;
      EXPECT_GT(aggregate_loss(up, 0.1, 1.0 / 60.0), base);
      up = b;
      up[q].pose += 0.01;
      EXPECT_GT(aggregate_loss(up, 0.1, 1.0 / 60.0), base);
    }
  }
}

TEST(Synthetic, NoiseFreeNoOutliers) {
  const SyntheticPair pair = fixtures::make_pair(300, 1.0, 0.0, 3);
  const Eigen::Matrix3d f = gt_fundamental(pair);
  for (const Correspondence& c : pair.correspondences) {
    EXPECT_TRUE(c.gt_inlier.value());
    EXPECT_LT(sampson_sq(f, c.p1, c.p2), 1e-12);
  }
  EXPECT_EQ(pair.inlier_rate, 1.0);
}

TEST(Synthetic, LabelFractionNearRequestedRate) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SyntheticPair pair = fixtures::make_pair(1000, 0.2, 0.5, 100 + seed);
    int inl = 0;
    for (const Correspondence& c : pair.correspondences) inl += c.gt_inlier.value();
    const double frac = inl / 1000.0;
    EXPECT_GE(frac, 0.15);
    EXPECT_LE(frac, 0.25);
    EXPECT_EQ(pair.inlier_rate, frac);
  }
}

TEST(Synthetic, PoseWithinLimits) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const SyntheticPair pair = fixtures::make_pair(50, 0.5, 0.5, seed);
    const double angle = Eigen::AngleAxisd(pair.pose.rotation).angle() * 180.0 / M_PI;
    EXPECT_LE(angle, 45.0 + 1e-9);
    EXPECT_NEAR(pair.pose.translation.norm(), 1.0, 1e-12);
    for (const Correspondence& c : pair.correspondences) {
      EXPECT_GE(c.side_info, 0.0);
      EXPECT_LE(c.side_info, 1.0);
    }
  }
}

TEST(Synthetic, ZeroOverlapSeparatesLabels) {
  const SyntheticPair pair = fixtures::make_pair(500, 0.4, 0.5, 4, 0.0);
  double max_in = 0.0;
  double min_out = 1.0;
  for (const Correspondence& c : pair.correspondences) {
    if (c.gt_inlier.value()) {
      max_in = std::max(max_in, c.side_info);
    } else {
      min_out = std::min(min_out, c.side_info);
    }
  }
  EXPECT_LT(max_in, min_out);
}

TEST(Synthetic, FullOverlapIgnoresLabels) {
  const SyntheticPair pair = fixtures::make_pair(4000, 0.4, 0.5, 6, 1.0);
  double sum_in = 0.0, sum_out = 0.0;
  int n_in = 0, n_out = 0;
  for (const Correspondence& c : pair.correspondences) {
    if (c.gt_inlier.value()) {
      sum_in += c.side_info;
      ++n_in;
    } else {
      sum_out += c.side_info;
      ++n_out;
    }
  }
  // Beta(2,2) has standard deviation 0.22.
  EXPECT_NEAR(sum_in / n_in, 0.5, 0.03);
  EXPECT_NEAR(sum_out / n_out, 0.5, 0.03);
}

TEST(Synthetic, RelabelIsIdempotent) {
  SyntheticPair pair = fixtures::make_pair(400, 0.5, 1.0, 5);
  relabel(&pair, 1.0);
  const SyntheticPair once = pair;
  relabel(&pair, 1.0);
  for (size_t i = 0; i < pair.correspondences.size(); ++i) {
    EXPECT_EQ(pair.correspondences[i].gt_inlier, once.correspondences[i].gt_inlier);
  }
  const std::vector<bool> labels = inlier_labels(pair, 1.0);
  for (size_t i = 0; i < labels.size(); ++i) EXPECT_EQ(labels[i], pair.correspondences[i].gt_inlier.value());
}

TEST(Synthetic, DeterministicAndValidated) {
  const SyntheticPair a = fixtures::make_pair(100, 0.5, 0.5, 6);
  const SyntheticPair b = fixtures::make_pair(100, 0.5, 0.5, 6);
  for (size_t i = 0; i < a.correspondences.size(); ++i) {
    EXPECT_EQ(a.correspondences[i].p1, b.correspondences[i].p1);
    EXPECT_EQ(a.correspondences[i].side_info, b.correspondences[i].side_info);
  }
  SyntheticSpec bad;
  bad.inlier_rate = 0.0;
  EXPECT_THROW(generate_synthetic(bad), Error);
  bad = SyntheticSpec{};
  bad.noise_px = -1.0;
  EXPECT_THROW(generate_synthetic(bad), Error);
  bad = SyntheticSpec{};
  bad.n = 10;
  bad.inlier_rate = 0.3;
  EXPECT_THROW(generate_synthetic(bad), Error);
}

TEST(Synthetic, SuiteRanges) {
  SuiteSpec s;
  s.pairs = 30;
  s.n_min = 200;
  s.n_max = 400;
  s.rate_min = 0.3;
  s.rate_max = 0.5;
  const std::vector<SyntheticPair> suite_a = generate_suite(s);
  const std::vector<SyntheticPair> suite_b = generate_suite(s);
  ASSERT_EQ(suite_a.size(), 30u);
  for (size_t i = 0; i < suite_a.size(); ++i) {
    const size_t n = suite_a[i].correspondences.size();
    EXPECT_GE(n, 200u);
    EXPECT_LE(n, 400u);
    EXPECT_EQ(n, suite_b[i].correspondences.size());
    EXPECT_GT(suite_a[i].inlier_rate, 0.2);
    EXPECT_LT(suite_a[i].inlier_rate, 0.6);
  }
}

TEST(PairLoss, SumsItsParts) {
  const SyntheticPair pair = fixtures::make_pair(200, 0.5, 0.5, 7);
  const TrainConfig cfg = small_config();
  const PairLoss pl = pair_loss(pair, MlpBundle::glorot(7), cfg, 3);
  ASSERT_EQ(pl.batches.size(), 4u);
  const double want = aggregate_loss(pl.batches, 0.1, 1.0 / 60.0) + std::pow(0.9, 4) * pl.initial_inlier;
  EXPECT_NEAR(pl.total, want, 1e-12);
  for (const BatchLoss& b : pl.batches) {
    EXPECT_GE(b.inlier, 0.0);
    EXPECT_GE(b.pose, 0.0);
    EXPECT_LE(b.pose, 30.0);
  }
  EXPECT_EQ(pair_loss(pair, MlpBundle::glorot(7), cfg, 3).total, pl.total);
}

// The pose terms reach the network only through refinement weights, which
// carry no gradient; they are held at their unperturbed values here.
TEST(PairLoss, GradientSignMatchesPerturbation) {
  const SyntheticPair pair = fixtures::make_pair(300, 0.4, 0.5, 77);
  TrainConfig cfg = small_config();
  cfg.train_alpha = false;
  const MlpBundle b = MlpBundle::glorot(3);
  MlpBundle g = MlpBundle::zeros();
  g.alpha = 0.0;
  const PairLoss base = pair_loss(pair, b, cfg, 5, &g);
  const double w0 = std::pow(1.0 - cfg.epsilon, cfg.engine.batches);
  const auto detached = [&](const PairLoss& pl) {
    std::vector<BatchLoss> bl = pl.batches;
    for (size_t q = 0; q < bl.size(); ++q) bl[q].pose = base.batches[q].pose;
    return aggregate_loss(bl, cfg.epsilon, cfg.lambda) + w0 * pl.initial_inlier;
  };
  const Eigen::VectorXd theta = flatten_parameters(b);
  const Eigen::VectorXd grad = flatten_parameters(g);
  std::mt19937_64 rng(1);
  int tested = 0;
  int agree = 0;
  for (int t = 0; t < 1000 && tested < 100; ++t) {
    const Eigen::Index k = std::uniform_int_distribution<Eigen::Index>(0, theta.size() - 1)(rng);
    if (std::abs(grad(k)) <= 1e-6) continue;
    MlpBundle p = b;
    Eigen::VectorXd moved = theta;
    moved(k) += 1e-4;
    assign_parameters(&p, moved);
    const double d = detached(pair_loss(pair, p, cfg, 5)) - detached(base);
    ++tested;
    agree += (d > 0.0) == (grad(k) > 0.0);
  }
  EXPECT_EQ(tested, 100);
  EXPECT_EQ(agree, tested);
}

TEST(Train, OneEpochLowersTrainingLoss) {
  const std::vector<SyntheticPair> data = suite(12, 0.5, 0.5, 8);
  TrainConfig cfg = small_config();
  cfg.epochs = 1;
  cfg.learning_rate = 1e-2;
  const double before = dataset_loss(data, MlpBundle::glorot(0), cfg);
  const TrainResult r = train(data, data, MlpBundle::glorot(0), cfg);
  ASSERT_EQ(r.log.size(), 1u);
  EXPECT_LT(r.log[0].val_loss, before);
  EXPECT_LE(r.best_val_loss, before);
}

// Alpha only matters when the probabilities differ between points, so the
// networks are first fitted to separable side info. The alpha gradient is
// scaled by lambda, hence the large step.
TEST(Train, AlphaOnlyMovesAlpha) {
  TrainConfig cfg = small_config();
  cfg.epochs = 6;
  cfg.learning_rate = 3e-2;
  cfg.train_alpha = false;
  const MlpBundle warm = train(suite(16, 0.0, 0.5, 10), {}, MlpBundle::glorot(1), cfg).bundle;
  ASSERT_EQ(warm.alpha, 1.0);

  SuiteSpec s;
  s.pairs = 12;
  s.n_min = 150;
  s.n_max = 250;
  s.rate_min = 0.5;
  s.rate_max = 0.8;
  s.side_overlap = 0.3;
  s.noise_px = 3.0;
  s.seed = 9;
  cfg.epochs = 3;
  cfg.train_alpha = true;
  cfg.train_networks = false;
  cfg.learning_rate = 0.5;
  double last_alpha = 1.0;
  const TrainResult r =
      train(generate_suite(s), {}, warm, cfg, [&](const TrainLogEntry& e) { last_alpha = e.alpha; });
  EXPECT_GT(std::abs(last_alpha - 1.0), 1e-3);
  EXPECT_EQ(flatten_parameters(r.bundle), flatten_parameters(warm));
}

TEST(Train, SeparableSideInfoIsLearned) {
  const std::vector<SyntheticPair> train_set = suite(16, 0.0, 0.5, 10);
  const std::vector<SyntheticPair> val = suite(8, 0.0, 0.5, 11);
  TrainConfig cfg = small_config();
  cfg.epochs = 10;
  cfg.learning_rate = 3e-2;
  const TrainResult r = train(train_set, val, MlpBundle::glorot(0), cfg);
  double ce = 0.0;
  double recall = 0.0;
  for (size_t i = 0; i < val.size(); ++i) {
    EngineConfig ec = cfg.engine;
    ec.sampler.rng_seed = i;
    const PreparedData d = prepare_data(val[i].correspondences, ec, val[i].calib);
    CaTrace trace;
    ca_ransac(d, r.bundle, ec, &trace);
    const std::vector<bool> labels = inlier_labels(val[i], 1.0);
    ce += loss_inlier(trace.probs[1], labels);
    int hit = 0;
    int pos = 0;
    for (bool l : labels) pos += l;
    for (int k : build_pool(trace.probs[0], ec.sampler)) hit += labels[static_cast<size_t>(k)];
    recall += static_cast<double>(hit) / pos;
  }
  EXPECT_LT(ce / static_cast<double>(val.size()), 0.1);
  EXPECT_GE(recall / static_cast<double>(val.size()), 0.9);
}

TEST(Train, DeterministicGivenSeed) {
  const std::vector<SyntheticPair> data = suite(4, 0.5, 0.5, 12);
  TrainConfig cfg = small_config();
  cfg.epochs = 1;
  const TrainResult a = train(data, data, MlpBundle::glorot(0), cfg);
  const TrainResult b = train(data, data, MlpBundle::glorot(0), cfg);
  EXPECT_EQ(a.log[0].train_loss, b.log[0].train_loss);
  EXPECT_EQ(flatten_parameters(a.bundle), flatten_parameters(b.bundle));
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.epsilon = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.lambda = 0.0;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_THROW(train({}, {}, MlpBundle::zeros(), TrainConfig{}), Error);
}
