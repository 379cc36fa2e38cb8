#pragma once

#include "carsac/engine.h"
#include "carsac/neural.h"
#include "carsac/synthetic.h"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace carsac {

inline constexpr double kFailureErrorDeg = 180.0;

// Mean over pairs of max(0, 1 - err / threshold), in percent.
double auc_at(std::span<const double> errors_deg, double threshold_deg);
// Percentage of pairs with error < threshold.
double map_at(std::span<const double> errors_deg, double threshold_deg);
double median_of(std::span<const double> values);

struct MetricReport {
  std::string method;
  double auc5 = 0.0;
  double auc1 = 0.0;
  double map20 = 0.0;
  double median_deg = 0.0;
  double avg_deg = 0.0;
  std::vector<double> per_pair_errors;
  int failures = 0;
  TimingBreakdown timing;  // summed over all runs
};

MetricReport make_report(const std::string& method, std::vector<double> errors, int failures,
                         const TimingBreakdown& timing);

enum class Method { kCa, kMsac, kLmLo, kOracle };

const char* to_string(Method m);
// Throws kInvalidArgument listing the valid names.
Method method_from_string(const std::string& name);

struct BenchmarkConfig {
  EngineConfig engine;
  // Every pair runs once per seed; the run seed is seed + pair index for all methods.
  std::vector<std::uint64_t> seeds{0};
};

// Pose error of one run; failures (no decomposable model) score 180 degrees.
struct RunOutcome {
  double error_deg = kFailureErrorDeg;
  bool failed = true;
  TimingBreakdown timing;
  EstimationResult result;
};

RunOutcome run_method(Method method, const SyntheticPair& pair, const MlpBundle* bundle,
                      const EngineConfig& cfg);

/// One report per method on a shared dataset and shared per-pair seeds.
/// `bundle` is required for the ca method.
std::vector<MetricReport> benchmark(std::span<const Method> methods,
                                    std::span<const SyntheticPair> dataset, const MlpBundle* bundle,
                                    const BenchmarkConfig& cfg);

}  // namespace carsac
