#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace carsac {

struct SamplerConfig {
  double pool_threshold = 0.4;  // points with p_i > threshold form the pool
  int min_pool = 15;            // fallback pool size (best-probability points)
  int batch_size = 256;
  int sample_size = 8;
  std::uint64_t rng_seed = 0;

  // Throws ErrorCode::kInvalidArgument when an invariant is violated.
  void validate() const;
};

// Row-major batch of minimal samples.
struct SampleBatch {
  int sample_size = 0;
  std::vector<int> indices;

  int size() const { return sample_size == 0 ? 0 : static_cast<int>(indices.size()) / sample_size; }
  std::span<const int> row(int r) const {
    return std::span<const int>(indices).subspan(static_cast<size_t>(r) * sample_size, sample_size);
  }
};

/// Indices with p_i > pool_threshold, in ascending order. When that set has
/// fewer than min_pool members the min_pool most probable points are used
/// instead (ties to the lower index). Throws kInsufficientData when there
/// are fewer points than sample_size.
std::vector<int> build_pool(const Eigen::VectorXd& probs, const SamplerConfig& cfg);

// batch_size independent samples, each drawn uniformly without replacement.
SampleBatch draw_minimal_batch(std::span<const int> pool, const SamplerConfig& cfg,
                               std::mt19937_64& rng);

/// PROSAC progressive sampling. Points are ranked by quality (descending);
/// hypothesis generation starts on the top sample_size points and the
/// subset grows following the standard schedule so that after
/// `growth_horizon` draws every point is eligible. Equal qualities are
/// ordered randomly; when all qualities are equal the sampler is uniform
/// from the start.
class ProsacSampler {
 public:
  ProsacSampler(const Eigen::VectorXd& quality, int sample_size, int growth_horizon,
                std::mt19937_64& rng);

  std::vector<int> next();
  int subset_size() const { return subset_; }
  int iteration() const { return t_; }
  const std::vector<int>& ranking() const { return order_; }

 private:
  std::mt19937_64& rng_;
  std::vector<int> order_;
  int sample_size_;
  int n_;
  int subset_;
  int t_ = 0;
  double t_n_ = 0.0;     // T_n of the current subset
  double t_n_prime_ = 0.0;  // T'_n
  int horizon_;
};

}  // namespace carsac
