#include "carsac/sampling.h"

#include "carsac/types.h"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace carsac {

void SamplerConfig::validate() const {
  if (!(pool_threshold > 0.0 && pool_threshold < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "pool_threshold must lie in (0, 1)");
  }
  if (sample_size < 1) throw Error(ErrorCode::kInvalidArgument, "sample_size must be positive");
  if (min_pool < sample_size) {
    throw Error(ErrorCode::kInvalidArgument, "min_pool must be at least sample_size");
  }
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be positive");
}

std::vector<int> build_pool(const Eigen::VectorXd& probs, const SamplerConfig& cfg) {
  const int n = static_cast<int>(probs.size());
  if (n < cfg.sample_size) {
    throw Error(ErrorCode::kInsufficientData,
                "need at least " + std::to_string(cfg.sample_size) + " correspondences, got " +
                    std::to_string(n));
  }
  std::vector<int> pool;
  for (int i = 0; i < n; ++i) {
    if (probs(i) > cfg.pool_threshold) pool.push_back(i);
  }
  if (static_cast<int>(pool.size()) >= cfg.min_pool) return pool;

  const int keep = std::min(cfg.min_pool, n);
  pool.resize(static_cast<size_t>(n));
  std::iota(pool.begin(), pool.end(), 0);
  std::partial_sort(pool.begin(), pool.begin() + keep, pool.end(), [&](int a, int b) {
    return probs(a) > probs(b) || (probs(a) == probs(b) && a < b);
  });
  pool.resize(static_cast<size_t>(keep));
  std::sort(pool.begin(), pool.end());
  return pool;
}

namespace {

// Floyd's algorithm: a uniform k-subset of [0, n) using k draws.
void sample_subset(int n, int k, std::mt19937_64& rng, std::vector<int>* out) {
  const size_t start = out->size();
  for (int j = n - k; j < n; ++j) {
    const int t = std::uniform_int_distribution<int>(0, j)(rng);
    const bool taken = std::find(out->begin() + static_cast<std::ptrdiff_t>(start), out->end(), t) !=
                       out->end();
    out->push_back(taken ? j : t);
  }
}

}  // namespace

SampleBatch draw_minimal_batch(std::span<const int> pool, const SamplerConfig& cfg,
                               std::mt19937_64& rng) {
  if (static_cast<int>(pool.size()) < cfg.sample_size) {
    throw Error(ErrorCode::kInsufficientData, "sampling pool smaller than the minimal sample");
  }
  SampleBatch batch;
  batch.sample_size = cfg.sample_size;
  batch.indices.reserve(static_cast<size_t>(cfg.batch_size) * cfg.sample_size);
  std::vector<int> local;
  local.reserve(static_cast<size_t>(cfg.sample_size));
  for (int r = 0; r < cfg.batch_size; ++r) {
    local.clear();
    sample_subset(static_cast<int>(pool.size()), cfg.sample_size, rng, &local);
    for (int k : local) batch.indices.push_back(pool[static_cast<size_t>(k)]);
  }
  return batch;
}

ProsacSampler::ProsacSampler(const Eigen::VectorXd& quality, int sample_size, int growth_horizon,
                             std::mt19937_64& rng)
    : rng_(rng),
      sample_size_(sample_size),
      n_(static_cast<int>(quality.size())),
      subset_(sample_size),
      horizon_(std::max(growth_horizon, 1)) {
  if (n_ < sample_size_) {
    throw Error(ErrorCode::kInsufficientData, "PROSAC needs at least sample_size points");
  }
  order_.resize(static_cast<size_t>(n_));
  std::iota(order_.begin(), order_.end(), 0);
  std::shuffle(order_.begin(), order_.end(), rng_);
  std::stable_sort(order_.begin(), order_.end(),
                   [&](int a, int b) { return quality(a) > quality(b); });

  const bool all_equal = quality.size() == 0 || quality.maxCoeff() == quality.minCoeff();
  if (all_equal) {
    subset_ = n_;
    t_n_prime_ = 0.0;
    return;
  }
  t_n_ = static_cast<double>(horizon_);
  for (int i = 0; i < sample_size_; ++i) {
    t_n_ *= static_cast<double>(sample_size_ - i) / static_cast<double>(n_ - i);
  }
  // The first draw is exactly the top sample_size points; growth starts at t = 2.
  t_n_prime_ = 2.0;
}

std::vector<int> ProsacSampler::next() {
  ++t_;
  if (static_cast<double>(t_) >= t_n_prime_ && subset_ < n_) {
    const double next_t_n = t_n_ * (subset_ + 1.0) / (subset_ + 1.0 - sample_size_);
    t_n_prime_ += std::ceil(next_t_n - t_n_);
    t_n_ = next_t_n;
    ++subset_;
  }

  // Rounding in the schedule can lag by a step; the horizon is a hard limit.
  if (t_ >= horizon_ && subset_ < n_) {
    subset_ = n_;
    t_n_prime_ = 0.0;
  }

  std::vector<int> local;
  local.reserve(static_cast<size_t>(sample_size_));
  if (subset_ == n_ && t_n_prime_ < t_) {
    sample_subset(n_, sample_size_, rng_, &local);
  } else if (t_n_prime_ < t_) {
    sample_subset(subset_, sample_size_, rng_, &local);
  } else {
    // sample_size - 1 points from the top subset - 1, plus the newest point.
    sample_subset(subset_ - 1, sample_size_ - 1, rng_, &local);
    local.push_back(subset_ - 1);
  }
  std::vector<int> out;
  out.reserve(local.size());
  for (int k : local) out.push_back(order_[static_cast<size_t>(k)]);
  return out;
}

}  // namespace carsac
