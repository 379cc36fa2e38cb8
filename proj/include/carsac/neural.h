#pragma once

#include "carsac/scoring.h"
#include "carsac/types.h"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace carsac {

inline constexpr int kStateDim = 128;
inline constexpr int kFourierFrequencies = 8;
inline constexpr int kFourierDim = 2 * kFourierFrequencies;
inline constexpr double kLeakyReluSlope = 0.01;

// Per-correspondence latent states, one row per correspondence (n x 128).
using StateMatrix = Eigen::MatrixXd;

enum class Activation { kLeakyRelu, kTanh, kSigmoid, kNone };

const char* to_string(Activation a);

struct LinearLayer {
  Eigen::MatrixXd w;  // out x in
  Eigen::VectorXd b;  // out
  Activation activation = Activation::kNone;

  Eigen::Index in() const { return w.cols(); }
  Eigen::Index out() const { return w.rows(); }
};

struct LayerCache {
  Eigen::MatrixXd input;
  Eigen::MatrixXd output;  // post-activation
};
using MlpCache = std::vector<LayerCache>;

// Row-wise MLP: every row of the input is one correspondence, weights shared.
struct Mlp {
  std::vector<LinearLayer> layers;

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, MlpCache* cache = nullptr) const;
  // Accumulates parameter gradients into `grads` (same architecture) and
  // returns the gradient with respect to the input.
  Eigen::MatrixXd backward(const MlpCache& cache, const Eigen::MatrixXd& grad_out,
                           Mlp* grads) const;
};

/// Parameters of the three learned components.
///
///  - init_state      16 -> 128 -> 128, leaky ReLU on the hidden layer
///  - inlier_decoder 128 -> 64 -> 32 -> 1, leaky ReLU hidden, sigmoid output
///  - mlp3, mlp2     128 -> 128 -> 128 -> 128, tanh hidden, linear output
///  - mlp1           256 -> 128 -> 128 -> 128, leaky ReLU hidden, linear output
///  - alpha          refinement weight exponent, w_i = p_i^alpha
struct MlpBundle {
  Mlp init_state;
  Mlp inlier_decoder;
  Mlp mlp1;
  Mlp mlp2;
  Mlp mlp3;
  double alpha = 1.0;

  // Exact architecture with all weights and biases zero.
  static MlpBundle zeros();
  // Glorot-uniform weights, zero biases, alpha = 1.
  static MlpBundle glorot(std::uint64_t seed);

  // Fixed serialization order.
  std::vector<std::pair<std::string, const Mlp*>> named() const;
  std::vector<std::pair<std::string, Mlp*>> named();
};

Eigen::Index parameter_count(const MlpBundle& bundle);
// All weights and biases in serialization order; alpha excluded.
Eigen::VectorXd flatten_parameters(const MlpBundle& bundle);
void assign_parameters(MlpBundle* bundle, const Eigen::VectorXd& params);

// [sin(2^k pi x), cos(2^k pi x)] for k = 0..7, sin first within each frequency.
Eigen::RowVectorXd fourier_lift(double x);
Eigen::MatrixXd fourier_lift(const Eigen::VectorXd& x);

/// Records what backward() needs from a chain of forward calls on one image
/// pair: the initialization, every state transform and every decode. Decodes
/// are attached to the state produced by the most recent recorded call.
struct ForwardTape {
  struct TransformStep {
    MlpCache mlp3;
    MlpCache mlp2;
    MlpCache mlp1;
    AttentionOperator attention;
  };
  struct DecodeStep {
    MlpCache cache;
    size_t state_index = 0;  // 0 = initial state, k = after k transforms
  };

  std::optional<MlpCache> init;
  std::vector<TransformStep> transforms;
  std::vector<DecodeStep> decodes;

  bool empty() const { return !init.has_value(); }
  void clear();
};

StateMatrix init_state(const MlpBundle& bundle, const Eigen::VectorXd& side_info,
                       ForwardTape* tape = nullptr);
// Inlier probabilities, strictly inside (0, 1).
Eigen::VectorXd decode_inliers(const MlpBundle& bundle, const StateMatrix& f,
                               ForwardTape* tape = nullptr);
// F <- MLP1([F, MLP2(A MLP3(F))])
StateMatrix state_transform(const MlpBundle& bundle, const StateMatrix& f,
                            const AttentionOperator& a, ForwardTape* tape = nullptr);
StateMatrix state_transform(const MlpBundle& bundle, const StateMatrix& f,
                            const AttentionMatrix& a, ForwardTape* tape = nullptr);

/// Reverse-mode pass over a recorded tape. `prob_grads[k]` is dL/dp for the
/// k-th recorded decode. Attention is a constant. Returns gradients shaped
/// like the bundle (alpha gradient left at zero).
MlpBundle backward(const MlpBundle& bundle, const ForwardTape& tape,
                   std::span<const Eigen::VectorXd> prob_grads);

std::string save_weights(const MlpBundle& bundle);
MlpBundle load_weights(std::string_view text);
void save_weights_file(const MlpBundle& bundle, const std::string& path);
MlpBundle load_weights_file(const std::string& path);

}  // namespace carsac
