#include "carsac/neural.h"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace carsac {

namespace {

constexpr double kProbFloor = 1e-15;
constexpr const char* kWeightsMagic = "carsac-weights";
constexpr int kWeightsVersion = 1;

void activate(Activation a, Eigen::MatrixXd* z) {
  switch (a) {
    case Activation::kLeakyRelu:
      *z = z->unaryExpr([](double v) { return v > 0.0 ? v : kLeakyReluSlope * v; });
      break;
    case Activation::kTanh:
      *z = z->array().tanh().matrix();
      break;
    case Activation::kSigmoid:
      *z = z->unaryExpr([](double v) {
        const double p = 1.0 / (1.0 + std::exp(-v));
        return std::clamp(p, kProbFloor, 1.0 - kProbFloor);
      });
      break;
    case Activation::kNone:
      break;
  }
}

// dL/dz from dL/dy and the cached post-activation output y.
Eigen::MatrixXd activation_backward(Activation a, const Eigen::MatrixXd& y,
                                    const Eigen::MatrixXd& grad) {
  switch (a) {
    case Activation::kLeakyRelu:
      return grad.binaryExpr(y, [](double g, double v) { return v > 0.0 ? g : kLeakyReluSlope * g; });
    case Activation::kTanh:
      return (grad.array() * (1.0 - y.array().square())).matrix();
    case Activation::kSigmoid:
      return (grad.array() * y.array() * (1.0 - y.array())).matrix();
    case Activation::kNone:
      break;
  }
  return grad;
}

LinearLayer make_layer(Eigen::Index in, Eigen::Index out, Activation a) {
  return LinearLayer{Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out), a};
}

Mlp make_mlp(std::initializer_list<Eigen::Index> dims, Activation hidden, Activation last) {
  Mlp mlp;
  const std::vector<Eigen::Index> d(dims);
  for (size_t i = 0; i + 1 < d.size(); ++i) {
    mlp.layers.push_back(make_layer(d[i], d[i + 1], i + 2 == d.size() ? last : hidden));
  }
  return mlp;
}

}  // namespace

const char* to_string(Activation a) {
  switch (a) {
    case Activation::kLeakyRelu: return "leaky_relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kNone: return "none";
  }
  return "none";
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, MlpCache* cache) const {
  if (cache) {
    cache->clear();
    cache->reserve(layers.size());
  }
  Eigen::MatrixXd h = x;
  for (const LinearLayer& layer : layers) {
    Eigen::MatrixXd z(h.rows(), layer.out());
    z.noalias() = h * layer.w.transpose();
    z.rowwise() += layer.b.transpose();
    activate(layer.activation, &z);
    if (cache) cache->push_back(LayerCache{std::move(h), z});
    h = std::move(z);
  }
  return h;
}

Eigen::MatrixXd Mlp::backward(const MlpCache& cache, const Eigen::MatrixXd& grad_out,
                              Mlp* grads) const {
  Eigen::MatrixXd g = grad_out;
  for (size_t k = layers.size(); k-- > 0;) {
    const LinearLayer& layer = layers[k];
    const Eigen::MatrixXd dz = activation_backward(layer.activation, cache[k].output, g);
    grads->layers[k].w.noalias() += dz.transpose() * cache[k].input;
    grads->layers[k].b += dz.colwise().sum().transpose();
    g.resize(dz.rows(), layer.in());
    g.noalias() = dz * layer.w;
  }
  return g;
}

MlpBundle MlpBundle::zeros() {
  MlpBundle b;
  b.init_state = make_mlp({kFourierDim, kStateDim, kStateDim}, Activation::kLeakyRelu,
                          Activation::kNone);
  b.inlier_decoder = make_mlp({kStateDim, 64, 32, 1}, Activation::kLeakyRelu, Activation::kSigmoid);
  b.mlp1 = make_mlp({2 * kStateDim, kStateDim, kStateDim, kStateDim}, Activation::kLeakyRelu,
                    Activation::kNone);
  b.mlp2 = make_mlp({kStateDim, kStateDim, kStateDim, kStateDim}, Activation::kTanh,
                    Activation::kNone);
  b.mlp3 = b.mlp2;
  b.alpha = 1.0;
  return b;
}

MlpBundle MlpBundle::glorot(std::uint64_t seed) {
  MlpBundle b = zeros();
  std::mt19937_64 rng(seed);
  for (auto& [name, mlp] : b.named()) {
    for (LinearLayer& layer : mlp->layers) {
      const double bound = std::sqrt(6.0 / static_cast<double>(layer.in() + layer.out()));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Eigen::Index r = 0; r < layer.w.rows(); ++r) {
        for (Eigen::Index c = 0; c < layer.w.cols(); ++c) layer.w(r, c) = dist(rng);
      }
    }
  }
  return b;
}

std::vector<std::pair<std::string, const Mlp*>> MlpBundle::named() const {
  return {{"init_state", &init_state}, {"inlier_decoder", &inlier_decoder},
          {"mlp1", &mlp1}, {"mlp2", &mlp2}, {"mlp3", &mlp3}};
}

std::vector<std::pair<std::string, Mlp*>> MlpBundle::named() {
  return {{"init_state", &init_state}, {"inlier_decoder", &inlier_decoder},
          {"mlp1", &mlp1}, {"mlp2", &mlp2}, {"mlp3", &mlp3}};
}

Eigen::Index parameter_count(const MlpBundle& bundle) {
  Eigen::Index count = 0;
  for (const auto& [name, mlp] : bundle.named()) {
    for (const LinearLayer& layer : mlp->layers) count += layer.w.size() + layer.b.size();
  }
  return count;
}

Eigen::VectorXd flatten_parameters(const MlpBundle& bundle) {
  Eigen::VectorXd out(parameter_count(bundle));
  Eigen::Index k = 0;
  for (const auto& [name, mlp] : bundle.named()) {
    for (const LinearLayer& layer : mlp->layers) {
      for (Eigen::Index r = 0; r < layer.w.rows(); ++r) {
        for (Eigen::Index c = 0; c < layer.w.cols(); ++c) out(k++) = layer.w(r, c);
      }
      for (Eigen::Index r = 0; r < layer.b.size(); ++r) out(k++) = layer.b(r);
    }
  }
  return out;
}

void assign_parameters(MlpBundle* bundle, const Eigen::VectorXd& params) {
  if (params.size() != parameter_count(*bundle)) {
    throw Error(ErrorCode::kShapeMismatch, "parameter vector has wrong length");
  }
  Eigen::Index k = 0;
  for (auto& [name, mlp] : bundle->named()) {
    for (LinearLayer& layer : mlp->layers) {
      for (Eigen::Index r = 0; r < layer.w.rows(); ++r) {
        for (Eigen::Index c = 0; c < layer.w.cols(); ++c) layer.w(r, c) = params(k++);
      }
      for (Eigen::Index r = 0; r < layer.b.size(); ++r) layer.b(r) = params(k++);
    }
  }
}

Eigen::RowVectorXd fourier_lift(double x) {
  Eigen::RowVectorXd out(kFourierDim);
  double freq = M_PI;
  for (int k = 0; k < kFourierFrequencies; ++k) {
    out(2 * k) = std::sin(freq * x);
    out(2 * k + 1) = std::cos(freq * x);
    freq *= 2.0;
  }
  return out;
}

Eigen::MatrixXd fourier_lift(const Eigen::VectorXd& x) {
  Eigen::MatrixXd out(x.size(), kFourierDim);
  for (Eigen::Index i = 0; i < x.size(); ++i) out.row(i) = fourier_lift(x(i));
  return out;
}

void ForwardTape::clear() {
  init.reset();
  transforms.clear();
  decodes.clear();
}

StateMatrix init_state(const MlpBundle& bundle, const Eigen::VectorXd& side_info,
                       ForwardTape* tape) {
  if (tape) {
    tape->clear();
    tape->init.emplace();
    return bundle.init_state.forward(fourier_lift(side_info), &*tape->init);
  }
  return bundle.init_state.forward(fourier_lift(side_info));
}

Eigen::VectorXd decode_inliers(const MlpBundle& bundle, const StateMatrix& f, ForwardTape* tape) {
  if (tape) {
    ForwardTape::DecodeStep step;
    step.state_index = tape->transforms.size();
    Eigen::MatrixXd p = bundle.inlier_decoder.forward(f, &step.cache);
    tape->decodes.push_back(std::move(step));
    return p.col(0);
  }
  return bundle.inlier_decoder.forward(f).col(0);
}

StateMatrix state_transform(const MlpBundle& bundle, const StateMatrix& f,
                            const AttentionOperator& a, ForwardTape* tape) {
  if (a.size() != f.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "attention size does not match state rows");
  }
  ForwardTape::TransformStep step;
  const bool record = tape != nullptr;
  const Eigen::MatrixXd h = bundle.mlp3.forward(f, record ? &step.mlp3 : nullptr);
  const Eigen::MatrixXd gated = bundle.mlp2.forward(a.apply(h), record ? &step.mlp2 : nullptr);
  Eigen::MatrixXd joined(f.rows(), f.cols() + gated.cols());
  joined << f, gated;
  StateMatrix out = bundle.mlp1.forward(joined, record ? &step.mlp1 : nullptr);
  if (record) {
    step.attention = a;
    tape->transforms.push_back(std::move(step));
  }
  return out;
}

StateMatrix state_transform(const MlpBundle& bundle, const StateMatrix& f,
                            const AttentionMatrix& a, ForwardTape* tape) {
  return state_transform(bundle, f, AttentionOperator::dense(a), tape);
}

MlpBundle backward(const MlpBundle& bundle, const ForwardTape& tape,
                   std::span<const Eigen::VectorXd> prob_grads) {
  if (tape.empty()) throw Error(ErrorCode::kMissingTape, "backward called without a forward tape");
  if (prob_grads.size() != tape.decodes.size()) {
    throw Error(ErrorCode::kShapeMismatch, "expected one probability gradient per recorded decode");
  }
  MlpBundle grads = MlpBundle::zeros();
  grads.alpha = 0.0;

  const Eigen::Index n = tape.init->back().output.rows();
  std::vector<Eigen::MatrixXd> state_grads(tape.transforms.size() + 1,
                                           Eigen::MatrixXd::Zero(n, kStateDim));
  for (size_t k = 0; k < tape.decodes.size(); ++k) {
    const ForwardTape::DecodeStep& step = tape.decodes[k];
    if (prob_grads[k].size() != n) {
      throw Error(ErrorCode::kShapeMismatch, "probability gradient has wrong length");
    }
    state_grads[step.state_index] +=
        bundle.inlier_decoder.backward(step.cache, prob_grads[k], &grads.inlier_decoder);
  }

  for (size_t s = tape.transforms.size(); s > 0; --s) {
    const ForwardTape::TransformStep& step = tape.transforms[s - 1];
    const Eigen::MatrixXd joined = bundle.mlp1.backward(step.mlp1, state_grads[s], &grads.mlp1);
    state_grads[s - 1] += joined.leftCols(kStateDim);
    const Eigen::MatrixXd d_gated = joined.rightCols(joined.cols() - kStateDim);
    const Eigen::MatrixXd d_attended = bundle.mlp2.backward(step.mlp2, d_gated, &grads.mlp2);
    state_grads[s - 1] +=
        bundle.mlp3.backward(step.mlp3, step.attention.apply(d_attended), &grads.mlp3);
  }

  bundle.init_state.backward(*tape.init, state_grads[0], &grads.init_state);
  return grads;
}

// ---------------------------------------------------------------------------
// Weight files
//
//   carsac-weights 1
//   leaky_relu_slope 0.01
//   alpha <value>
//   layer <mlp>.<index> <out> <in> <activation>
//   <out lines of `in` weights, row-major>
//   <one line of `out` biases>
//   ...
//   end
//
// Numbers use the shortest decimal form that round-trips exactly.

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

class TokenReader {
 public:
  explicit TokenReader(std::string_view text) : text_(text) {}

  std::string_view next(const char* what) {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (pos_ >= text_.size()) {
      throw Error(ErrorCode::kParse,
                  std::string("weight file truncated: expected ") + what);
    }
    const size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    return text_.substr(start, pos_ - start);
  }

  void expect(std::string_view token) {
    const std::string_view got = next(std::string(token).c_str());
    if (got != token) {
      throw Error(ErrorCode::kParse, "weight file: expected '" + std::string(token) + "', got '" +
                                         std::string(got) + "'");
    }
  }

  double number(const char* what) {
    const std::string_view tok = next(what);
    double v = 0.0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || !std::isfinite(v)) {
      throw Error(ErrorCode::kParse, "weight file: bad number '" + std::string(tok) + "' for " + what);
    }
    return v;
  }

  long integer(const char* what) {
    const std::string_view tok = next(what);
    long v = 0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
      throw Error(ErrorCode::kParse, "weight file: bad integer '" + std::string(tok) + "' for " + what);
    }
    return v;
  }

 private:
  std::string_view text_;
  size_t pos_ = 0;
};

}  // namespace

std::string save_weights(const MlpBundle& bundle) {
  std::ostringstream os;
  os << kWeightsMagic << ' ' << kWeightsVersion << '\n';
  os << "leaky_relu_slope " << format_double(kLeakyReluSlope) << '\n';
  os << "alpha " << format_double(bundle.alpha) << '\n';
  for (const auto& [name, mlp] : bundle.named()) {
    for (size_t k = 0; k < mlp->layers.size(); ++k) {
      const LinearLayer& layer = mlp->layers[k];
      os << "layer " << name << '.' << k << ' ' << layer.out() << ' ' << layer.in() << ' '
         << to_string(layer.activation) << '\n';
      for (Eigen::Index r = 0; r < layer.w.rows(); ++r) {
        for (Eigen::Index c = 0; c < layer.w.cols(); ++c) {
          if (c) os << ' ';
          os << format_double(layer.w(r, c));
        }
        os << '\n';
      }
      for (Eigen::Index r = 0; r < layer.b.size(); ++r) {
        if (r) os << ' ';
        os << format_double(layer.b(r));
      }
      os << '\n';
    }
  }
  os << "end\n";
  return os.str();
}

MlpBundle load_weights(std::string_view text) {
  TokenReader in(text);
  in.expect(kWeightsMagic);
  const long version = in.integer("version");
  if (version != kWeightsVersion) {
    throw Error(ErrorCode::kVersionMismatch, "weight file version " + std::to_string(version) +
                                                 ", expected " + std::to_string(kWeightsVersion));
  }
  in.expect("leaky_relu_slope");
  if (in.number("leaky_relu_slope") != kLeakyReluSlope) {
    throw Error(ErrorCode::kVersionMismatch, "weight file uses a different leaky ReLU slope");
  }
  MlpBundle bundle = MlpBundle::zeros();
  in.expect("alpha");
  bundle.alpha = in.number("alpha");
  if (!(bundle.alpha > 0.0)) throw Error(ErrorCode::kParse, "weight file: alpha must be positive");

  for (auto& [name, mlp] : bundle.named()) {
    for (size_t k = 0; k < mlp->layers.size(); ++k) {
      LinearLayer& layer = mlp->layers[k];
      const std::string label = name + "." + std::to_string(k);
      in.expect("layer");
      in.expect(label);
      const long out = in.integer("layer rows");
      const long inputs = in.integer("layer columns");
      const std::string_view act = in.next("activation");
      if (out != layer.out() || inputs != layer.in()) {
        throw Error(ErrorCode::kShapeMismatch,
                    "layer " + label + " has shape " + std::to_string(out) + "x" +
                        std::to_string(inputs) + ", expected " + std::to_string(layer.out()) + "x" +
                        std::to_string(layer.in()));
      }
      if (act != to_string(layer.activation)) {
        throw Error(ErrorCode::kShapeMismatch, "layer " + label + " has activation " +
                                                   std::string(act) + ", expected " +
                                                   to_string(layer.activation));
      }
      for (Eigen::Index r = 0; r < layer.w.rows(); ++r) {
        for (Eigen::Index c = 0; c < layer.w.cols(); ++c) layer.w(r, c) = in.number(label.c_str());
      }
      for (Eigen::Index r = 0; r < layer.b.size(); ++r) layer.b(r) = in.number(label.c_str());
    }
  }
  in.expect("end");
  return bundle;
}

void save_weights_file(const MlpBundle& bundle, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path + " for writing");
  out << save_weights(bundle);
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path);
}

MlpBundle load_weights_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open weights file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return load_weights(ss.str());
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

}  // namespace carsac
