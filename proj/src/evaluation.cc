#include "carsac/evaluation.h"

#include "carsac/geometry.h"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace carsac {

namespace {

void check_errors(std::span<const double> errors, double threshold) {
  if (errors.empty()) throw Error(ErrorCode::kInvalidArgument, "no pose errors to aggregate");
  if (!(threshold > 0.0)) throw Error(ErrorCode::kInvalidArgument, "threshold must be positive");
  for (double e : errors) {
    if (!(e >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "pose errors must be >= 0");
  }
}

}  // namespace

double auc_at(std::span<const double> errors_deg, double threshold_deg) {
  check_errors(errors_deg, threshold_deg);
  double sum = 0.0;
  for (double e : errors_deg) sum += std::max(0.0, 1.0 - e / threshold_deg);
  return 100.0 * sum / static_cast<double>(errors_deg.size());
}

double map_at(std::span<const double> errors_deg, double threshold_deg) {
  check_errors(errors_deg, threshold_deg);
  const auto below = std::count_if(errors_deg.begin(), errors_deg.end(),
                                   [&](double e) { return e < threshold_deg; });
  return 100.0 * static_cast<double>(below) / static_cast<double>(errors_deg.size());
}

double median_of(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::kInvalidArgument, "median of an empty list");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

MetricReport make_report(const std::string& method, std::vector<double> errors, int failures,
                         const TimingBreakdown& timing) {
  MetricReport r;
  r.method = method;
  r.auc5 = auc_at(errors, 5.0);
  r.auc1 = auc_at(errors, 1.0);
  r.map20 = map_at(errors, 20.0);
  r.median_deg = median_of(errors);
  r.avg_deg = std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(errors.size());
  r.per_pair_errors = std::move(errors);
  r.failures = failures;
  r.timing = timing;
  return r;
}

const char* to_string(Method m) {
  switch (m) {
    case Method::kCa: return "ca";
    case Method::kMsac: return "msac";
    case Method::kLmLo: return "lmlo";
    case Method::kOracle: return "oracle";
  }
  return "ca";
}

Method method_from_string(const std::string& name) {
  for (Method m : {Method::kCa, Method::kMsac, Method::kLmLo, Method::kOracle}) {
    if (name == to_string(m)) return m;
  }
  throw Error(ErrorCode::kInvalidArgument,
              "unknown method '" + name + "'; valid methods: ca, msac, lmlo, oracle");
}

RunOutcome run_method(Method method, const SyntheticPair& pair, const MlpBundle* bundle,
                      const EngineConfig& cfg) {
  RunOutcome out;
  if (method == Method::kOracle) {
    out.error_deg = 0.0;
    out.failed = false;
    return out;
  }
  const PreparedData data = prepare_data(pair.correspondences, cfg, pair.calib);
  switch (method) {
    case Method::kCa:
      if (!bundle) throw Error(ErrorCode::kInvalidArgument, "the ca method needs trained weights");
      out.result = ca_ransac(data, *bundle, cfg);
      break;
    case Method::kMsac:
      out.result = msac_ransac_baseline(data, cfg);
      break;
    case Method::kLmLo: {
      Eigen::VectorXd quality(static_cast<Eigen::Index>(data.points.size()));
      for (size_t i = 0; i < data.points.size(); ++i) {
        quality(static_cast<Eigen::Index>(i)) = -data.points[i].side_info;
      }
      out.result = lm_lo_baseline(data, quality, cfg);
      break;
    }
    case Method::kOracle:
      break;
  }
  out.timing = out.result.timing;
  try {
    out.error_deg = pose_error_deg(pose_from_model(out.result.model, data, pair.calib), pair.pose);
    out.failed = !std::isfinite(out.error_deg);
    if (out.failed) out.error_deg = kFailureErrorDeg;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kPoseUndecidable) throw;
  }
  return out;
}

std::vector<MetricReport> benchmark(std::span<const Method> methods,
                                    std::span<const SyntheticPair> dataset, const MlpBundle* bundle,
                                    const BenchmarkConfig& cfg) {
  if (dataset.empty()) throw Error(ErrorCode::kInvalidArgument, "benchmark dataset is empty");
  if (cfg.seeds.empty()) throw Error(ErrorCode::kInvalidArgument, "benchmark needs at least one seed");
  std::vector<MetricReport> reports;
  for (Method m : methods) {
    std::vector<double> errors;
    int failures = 0;
    TimingBreakdown timing;
    for (std::uint64_t seed : cfg.seeds) {
      for (size_t i = 0; i < dataset.size(); ++i) {
        EngineConfig ecfg = cfg.engine;
        ecfg.sampler.rng_seed = seed + i;
        const RunOutcome run = run_method(m, dataset[i], bundle, ecfg);
        errors.push_back(run.error_deg);
        failures += run.failed;
        timing += run.timing;
      }
    }
    reports.push_back(make_report(to_string(m), std::move(errors), failures, timing));
  }
  return reports;
}

}  // namespace carsac
