#include "carsac/evaluation.h"
#include "carsac/training.h"

#include "test_util.h"

#include <gtest/gtest.h>

#include <random>

using namespace carsac;

TEST(Auc, Examples) {
  const std::vector<double> zeros(7, 0.0);
  EXPECT_EQ(auc_at(zeros, 5.0), 100.0);
  const std::vector<double> big = {5.0, 7.0, 180.0};
  EXPECT_EQ(auc_at(big, 5.0), 0.0);
  const std::vector<double> two = {0.0, 2.5};
  EXPECT_DOUBLE_EQ(auc_at(two, 5.0), 75.0);
  const std::vector<double> three = {0.5, 1.0, 4.0};
  EXPECT_DOUBLE_EQ(auc_at(three, 2.0), 100.0 * (0.75 + 0.5 + 0.0) / 3.0);
}

TEST(Auc, RejectsBadInput) {
  EXPECT_THROW(auc_at({}, 5.0), Error);
  const std::vector<double> neg = {1.0, -0.1};
  EXPECT_THROW(auc_at(neg, 5.0), Error);
  const std::vector<double> ok = {1.0};
  EXPECT_THROW(auc_at(ok, 0.0), Error);
}

TEST(Map, Examples) {
  const std::vector<double> all_below = {0.0, 3.0, 19.9};
  EXPECT_EQ(map_at(all_below, 20.0), 100.0);
  const std::vector<double> half = {1.0, 25.0, 19.0, 20.0};
  EXPECT_EQ(map_at(half, 20.0), 50.0);
  EXPECT_THROW(map_at({}, 20.0), Error);
}

TEST(Median, Examples) {
  const std::vector<double> odd = {3.0, 1.0, 2.0};
  EXPECT_EQ(median_of(odd), 2.0);
  const std::vector<double> even = {4.0, 1.0, 3.0, 2.0};
  EXPECT_EQ(median_of(even), 2.5);
  EXPECT_THROW(median_of({}), Error);
}

TEST(Metrics, RandomProperties) {
  std::mt19937_64 rng(3);
  std::exponential_distribution<double> err(0.2);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> e(static_cast<size_t>(1 + t % 40));
    for (double& x : e) x = std::min(err(rng), 180.0);
    const MetricReport r = make_report("x", e, 0, {});
    EXPECT_LE(0.0, r.auc1);
    EXPECT_LE(r.auc1, r.auc5);
    EXPECT_LE(r.auc5, 100.0);
    EXPECT_LE(0.0, r.map20);
    EXPECT_LE(r.map20, 100.0);

    std::vector<double> good = e;
    good.push_back(0.0);
    const MetricReport rg = make_report("x", good, 0, {});
    EXPECT_GE(rg.auc5, r.auc5);
    EXPECT_GE(rg.auc1, r.auc1);
    EXPECT_GE(rg.map20, r.map20);
    EXPECT_LE(rg.median_deg, r.median_deg);
    EXPECT_LE(rg.avg_deg, r.avg_deg);

    std::vector<double> bad = e;
    bad.push_back(kFailureErrorDeg);
    const MetricReport rb = make_report("x", bad, 1, {});
    EXPECT_LE(rb.auc5, r.auc5);
    EXPECT_LE(rb.auc1, r.auc1);
    EXPECT_LE(rb.map20, r.map20);
    EXPECT_GE(rb.median_deg, r.median_deg);
    EXPECT_GE(rb.avg_deg, r.avg_deg);
  }
}

TEST(MakeReport, Fields) {
  TimingBreakdown t;
  t.decoder = 2.0;
  t.total = 5.0;
  const MetricReport r = make_report("msac", {0.0, 10.0, 30.0}, 1, t);
  EXPECT_EQ(r.method, "msac");
  EXPECT_EQ(r.median_deg, 10.0);
  EXPECT_DOUBLE_EQ(r.avg_deg, 40.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.map20, 200.0 / 3.0);
  EXPECT_EQ(r.failures, 1);
  EXPECT_EQ(r.per_pair_errors.size(), 3u);
  EXPECT_EQ(r.timing.decoder, 2.0);
}

TEST(Method, Names) {
  for (Method m : {Method::kCa, Method::kMsac, Method::kLmLo, Method::kOracle}) {
    EXPECT_EQ(method_from_string(to_string(m)), m);
  }
  try {
    method_from_string("ransac");
    FAIL() << "no error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
    const std::string msg = e.what();
    for (const char* name : {"ransac", "ca", "msac", "lmlo"}) {
      EXPECT_NE(msg.find(name), std::string::npos) << msg;
    }
  }
}

namespace {

std::vector<SyntheticPair> small_suite(int pairs, double rate, double overlap, std::uint64_t seed) {
  SuiteSpec s;
  s.pairs = pairs;
  s.n_min = 200;
  s.n_max = 300;
  s.rate_min = rate;
  s.rate_max = rate;
  s.side_overlap = overlap;
  s.seed = seed;
  return generate_suite(s);
}

BenchmarkConfig quick_config() {
  BenchmarkConfig cfg;
  cfg.engine.batches = 2;
  cfg.engine.batch_size = 64;
  cfg.seeds = {0, 5};
  return cfg;
}

}  // namespace

TEST(Benchmark, OracleScoresPerfectly) {
  const std::vector<SyntheticPair> data = small_suite(3, 0.5, 0.5, 1);
  const std::vector<Method> methods = {Method::kOracle};
  const std::vector<MetricReport> r = benchmark(methods, data, nullptr, quick_config());
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].auc5, 100.0);
  EXPECT_EQ(r[0].map20, 100.0);
  EXPECT_EQ(r[0].failures, 0);
  EXPECT_EQ(r[0].per_pair_errors.size(), 6u);
}

TEST(Benchmark, RepeatsAreIdentical) {
  const std::vector<SyntheticPair> data = small_suite(4, 0.5, 0.5, 2);
  const std::vector<Method> methods = {Method::kCa, Method::kMsac, Method::kLmLo};
  const MlpBundle b = MlpBundle::glorot(4);
  const std::vector<MetricReport> a = benchmark(methods, data, &b, quick_config());
  const std::vector<MetricReport> c = benchmark(methods, data, &b, quick_config());
  ASSERT_EQ(a.size(), 3u);
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].method, to_string(methods[i]));
    EXPECT_EQ(a[i].per_pair_errors, c[i].per_pair_errors);
    EXPECT_EQ(a[i].per_pair_errors.size(), 8u);
  }
}

TEST(Benchmark, RunSeedIsSeedPlusPairIndex) {
  const std::vector<SyntheticPair> data = small_suite(3, 0.5, 0.5, 3);
  BenchmarkConfig cfg = quick_config();
  cfg.seeds = {10};
  const std::vector<Method> methods = {Method::kMsac};
  const MetricReport r = benchmark(methods, data, nullptr, cfg)[0];
  for (size_t i = 0; i < data.size(); ++i) {
    EngineConfig e = cfg.engine;
    e.sampler.rng_seed = 10 + i;
    EXPECT_EQ(run_method(Method::kMsac, data[i], nullptr, e).error_deg, r.per_pair_errors[i]);
  }
}

TEST(Benchmark, FailuresScoreTheClamp) {
  SyntheticPair pair = fixtures::make_pair(60, 0.5, 0.5, 4);
  for (Correspondence& c : pair.correspondences) {
    c.p1 = pair.correspondences[0].p1;
    c.p2 = pair.correspondences[0].p2;
  }
  const std::vector<SyntheticPair> data = {pair};
  const std::vector<Method> methods = {Method::kMsac};
  const MetricReport r = benchmark(methods, data, nullptr, quick_config())[0];
  EXPECT_EQ(r.failures, 2);
  for (double e : r.per_pair_errors) EXPECT_EQ(e, kFailureErrorDeg);
}

TEST(Benchmark, Validation) {
  const std::vector<SyntheticPair> data = small_suite(1, 0.5, 0.5, 5);
  const std::vector<Method> ca = {Method::kCa};
  EXPECT_THROW(benchmark(ca, data, nullptr, quick_config()), Error);
  EXPECT_THROW(benchmark(ca, {}, nullptr, quick_config()), Error);
  BenchmarkConfig no_seeds = quick_config();
  no_seeds.seeds.clear();
  const std::vector<Method> msac = {Method::kMsac};
  EXPECT_THROW(benchmark(msac, data, nullptr, no_seeds), Error);
}

// Small-scale version of the ablation: a network trained on informative side
// info against uniform sampling at 20% inliers.
TEST(Benchmark, TrainedCaBeatsMsacAtLowInlierRate) {
  TrainConfig tc;
  tc.epochs = 10;
  tc.learning_rate = 3e-2;
  const TrainResult trained = train(small_suite(16, 0.4, 0.0, 6), {}, MlpBundle::glorot(0), tc);

  BenchmarkConfig cfg;
  cfg.seeds = {0};
  const std::vector<Method> methods = {Method::kCa, Method::kMsac};
  const std::vector<MetricReport> r =
      benchmark(methods, small_suite(20, 0.2, 0.0, 7), &trained.bundle, cfg);
  EXPECT_GT(r[0].map20, r[1].map20);
  EXPECT_LT(r[0].median_deg, r[1].median_deg);
}
