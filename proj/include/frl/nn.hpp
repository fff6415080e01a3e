#pragma once

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "frl/rng.hpp"

namespace frl {

inline constexpr double kSoftmaxFloor = 1e-30;

/// Softmax with max-subtraction and a positivity floor so log-probabilities
/// stay finite.
inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  Eigen::VectorXd z = (logits.array() - logits.maxCoeff()).exp();
  Eigen::VectorXd p = z / z.sum();
  return p.cwiseMax(kSoftmaxFloor);
}

/// Two-head perceptron over one-hot state encodings: a ReLU trunk shared by
/// a softmax policy head and a linear action-value head. Parameters live in
/// one flat vector (trunk, then policy head, then value head) so the
/// optimizer, the checkpoints, and the finite-difference harnesses all see
/// the same coordinates.
struct MlpShape {
  int n_inputs = 0;
  std::vector<int> hidden;
  int n_actions = 0;

  int n_params() const {
    int total = 0;
    int in = n_inputs;
    for (int h : hidden) {
      total += h * in + h;
      in = h;
    }
    total += 2 * (n_actions * in + n_actions);
    return total;
  }

  bool operator==(const MlpShape&) const = default;
};

struct MlpCache {
  int state = 0;
  std::vector<Eigen::VectorXd> activations;     // post-ReLU per trunk layer
  std::vector<Eigen::VectorXd> preactivations;  // pre-ReLU, for kink checks
  Eigen::VectorXd policy;                       // softmax output
  Eigen::VectorXd q;

  /// Distance from the nearest ReLU kink; finite-difference probes are only
  /// trustworthy when this exceeds the step size.
  double kink_distance() const {
    double closest = std::numeric_limits<double>::infinity();
    for (const auto& z : preactivations)
      for (double x : z) closest = std::min(closest, std::abs(x));
    return closest;
  }
};

class Mlp {
 public:
  Mlp() = default;

  /// Weights drawn uniformly in +-sqrt(6 / (fan_in + fan_out)), biases zero;
  /// initial logits are near zero so the initial policy is near uniform.
  Mlp(MlpShape shape, Rng& rng) : shape_(std::move(shape)) {
    if (shape_.n_inputs <= 0 || shape_.n_actions <= 0 || shape_.hidden.empty())
      throw std::invalid_argument("Mlp: bad shape");
    params_ = Eigen::VectorXd::Zero(shape_.n_params());
    int offset = 0;
    int in = shape_.n_inputs;
    auto init_layer = [&](int out) {
      double lim = std::sqrt(6.0 / (in + out));
      for (int i = 0; i < out * in; ++i) params_(offset + i) = rng.uniform(-lim, lim);
      offset += out * in + out;  // biases stay zero
      in = out;
    };
    for (int h : shape_.hidden) init_layer(h);
    int trunk_out = in;
    init_layer(shape_.n_actions);
    in = trunk_out;
    init_layer(shape_.n_actions);
  }

  Mlp(MlpShape shape, Eigen::VectorXd params) : shape_(std::move(shape)), params_(std::move(params)) {
    if (params_.size() != shape_.n_params())
      throw std::invalid_argument("Mlp: parameter vector does not match the shape");
  }

  const MlpShape& shape() const { return shape_; }
  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }
  int n_params() const { return static_cast<int>(params_.size()); }

  MlpCache forward(int state) const {
    if (state < 0 || state >= shape_.n_inputs)
      throw std::invalid_argument("Mlp::forward: state out of range");
    MlpCache cache;
    cache.state = state;
    int offset = 0;
    int in = shape_.n_inputs;
    Eigen::VectorXd h;
    for (std::size_t l = 0; l < shape_.hidden.size(); ++l) {
      int out = shape_.hidden[l];
      auto W = weight(offset, out, in);
      auto b = bias(offset, out, in);
      Eigen::VectorXd z = l == 0 ? Eigen::VectorXd(W.col(state) + b)  // one-hot: column pick
                                 : Eigen::VectorXd(W * h + b);
      h = z.cwiseMax(0.0);
      cache.preactivations.push_back(std::move(z));
      cache.activations.push_back(h);
      offset += out * in + out;
      in = out;
    }
    auto Wp = weight(offset, shape_.n_actions, in);
    auto bp = bias(offset, shape_.n_actions, in);
    Eigen::VectorXd logits = Wp * h + bp;
    offset += shape_.n_actions * in + shape_.n_actions;
    auto Wq = weight(offset, shape_.n_actions, in);
    auto bq = bias(offset, shape_.n_actions, in);
    cache.q = Wq * h + bq;
    if (!logits.allFinite() || !cache.q.allFinite()) {
      std::ostringstream msg;
      msg << "Mlp::forward: non-finite head output at state " << state;
      throw std::runtime_error(msg.str());
    }
    cache.policy = softmax(logits);
    return cache;
  }

  /// Accumulates scale * d(dlogits' logits + dq' q)/dparams into grad.
  void backward_logits(const MlpCache& cache, const Eigen::VectorXd& dlogits,
                       const Eigen::VectorXd& dq, Eigen::VectorXd& grad,
                       double scale = 1.0) const {
    if (dlogits.size() != shape_.n_actions || dq.size() != shape_.n_actions)
      throw std::invalid_argument("Mlp::backward_logits: head gradient shape mismatch");
    if (grad.size() != params_.size())
      throw std::invalid_argument("Mlp::backward_logits: accumulator shape mismatch");

    const int n_trunk = static_cast<int>(shape_.hidden.size());
    std::vector<int> offsets(n_trunk + 2);
    {
      int off = 0, in = shape_.n_inputs;
      for (int l = 0; l < n_trunk; ++l) {
        offsets[l] = off;
        off += shape_.hidden[l] * in + shape_.hidden[l];
        in = shape_.hidden[l];
      }
      offsets[n_trunk] = off;
      off += shape_.n_actions * in + shape_.n_actions;
      offsets[n_trunk + 1] = off;
    }
    const int top = shape_.hidden.back();
    const Eigen::VectorXd& h_top = cache.activations.back();

    auto add_head = [&](int off, const Eigen::VectorXd& d) {
      Eigen::Map<Eigen::MatrixXd> gW(grad.data() + off, shape_.n_actions, top);
      Eigen::Map<Eigen::VectorXd> gb(grad.data() + off + shape_.n_actions * top,
                                     shape_.n_actions);
      gW.noalias() += scale * d * h_top.transpose();
      gb += scale * d;
    };
    add_head(offsets[n_trunk], dlogits);
    add_head(offsets[n_trunk + 1], dq);

    Eigen::VectorXd dh = head_weight(offsets[n_trunk], top).transpose() * dlogits +
                         head_weight(offsets[n_trunk + 1], top).transpose() * dq;

    for (int l = n_trunk - 1; l >= 0; --l) {
      int in = l == 0 ? shape_.n_inputs : shape_.hidden[l - 1];
      int out = shape_.hidden[l];
      dh = dh.cwiseProduct((cache.activations[l].array() > 0.0).cast<double>().matrix());
      Eigen::Map<Eigen::MatrixXd> gW(grad.data() + offsets[l], out, in);
      Eigen::Map<Eigen::VectorXd> gb(grad.data() + offsets[l] + out * in, out);
      if (l == 0) {
        gW.col(cache.state) += scale * dh;
      } else {
        gW.noalias() += scale * dh * cache.activations[l - 1].transpose();
      }
      gb += scale * dh;
      if (l > 0) dh = weight(offsets[l], out, in).transpose() * dh;
    }
  }

  /// Head-space backward: dpolicy is a gradient with respect to the softmax
  /// probabilities, dq with respect to the value head. The softmax Jacobian
  /// is applied here.
  void backward(const MlpCache& cache, const Eigen::VectorXd& dpolicy,
                const Eigen::VectorXd& dq, Eigen::VectorXd& grad, double scale = 1.0) const {
    Eigen::VectorXd dlogits =
        cache.policy.cwiseProduct(dpolicy - Eigen::VectorXd::Constant(dpolicy.size(),
                                                                      cache.policy.dot(dpolicy)));
    backward_logits(cache, dlogits, dq, grad, scale);
  }

 private:
  Eigen::Map<const Eigen::MatrixXd> weight(int offset, int out, int in) const {
    return {params_.data() + offset, out, in};
  }
  Eigen::Map<const Eigen::VectorXd> bias(int offset, int out, int in) const {
    return {params_.data() + offset + out * in, out};
  }
  Eigen::Map<const Eigen::MatrixXd> head_weight(int offset, int top) const {
    return {params_.data() + offset, shape_.n_actions, top};
  }

  MlpShape shape_;
  Eigen::VectorXd params_;
};

// --- optimizer ---------------------------------------------------------------

enum class UpdateDirection { Ascend, Descend };

/// RMSProp running state: v tracks a decayed average of squared gradients.
struct RmsPropState {
  Eigen::VectorXd v;
  double decay = 0.99;
  double epsilon = 1e-8;

  explicit RmsPropState(int n = 0) : v(Eigen::VectorXd::Zero(n)) {}
};

/// v <- decay v + (1 - decay) g^2;  p <- p +- lr g / (sqrt(v) + eps).
inline void rmsprop_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad,
                         RmsPropState& state, double learning_rate,
                         UpdateDirection direction) {
  if (params.size() != grad.size() || params.size() != state.v.size())
    throw std::invalid_argument("rmsprop_step: shape mismatch");
  if (!(learning_rate > 0.0))
    throw std::invalid_argument("rmsprop_step: learning rate must be positive");
  if (!grad.allFinite()) throw std::runtime_error("rmsprop_step: non-finite gradient");
  state.v = state.decay * state.v + (1.0 - state.decay) * grad.cwiseAbs2();
  double sign = direction == UpdateDirection::Ascend ? 1.0 : -1.0;
  params += sign * learning_rate *
            grad.cwiseQuotient(state.v.cwiseSqrt().array().matrix() +
                               Eigen::VectorXd::Constant(params.size(), state.epsilon));
}

/// Rescales so the global L2 norm is at most max_norm; direction preserved.
inline void clip_gradients(Eigen::VectorXd& grad, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_gradients: max_norm must be positive");
  double norm = grad.norm();
  if (norm > max_norm) grad *= max_norm / norm;
}

// --- checkpoint format -------------------------------------------------------
//
// Text manifest, then one blank line, then the raw parameter vector as
// little-endian IEEE-754 doubles:
//
//   frlckpt 1
//   <key> <value...>     (one line per manifest entry)
//   params <count>
//
// Round-trips are bit exact.

struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> manifest;
  Eigen::VectorXd params;

  std::string lookup(const std::string& key) const {
    for (const auto& [k, v] : manifest)
      if (k == key) return v;
    throw std::invalid_argument("checkpoint: missing manifest key '" + key + "'");
  }
};

namespace detail {

inline void write_le_doubles(std::ostream& os, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::uint64_t bits;
    double x = v(i);
    std::memcpy(&bits, &x, sizeof bits);
    if constexpr (std::endian::native == std::endian::big) {
      std::uint64_t swapped = 0;
      for (int b = 0; b < 8; ++b) swapped |= ((bits >> (8 * b)) & 0xffULL) << (8 * (7 - b));
      bits = swapped;
    }
    char buf[8];
    std::memcpy(buf, &bits, 8);
    os.write(buf, 8);
  }
}

inline Eigen::VectorXd read_le_doubles(std::istream& is, int count) {
  Eigen::VectorXd v(count);
  for (int i = 0; i < count; ++i) {
    char buf[8];
    if (!is.read(buf, 8)) throw std::invalid_argument("checkpoint: truncated parameter block");
    std::uint64_t bits;
    std::memcpy(&bits, buf, 8);
    if constexpr (std::endian::native == std::endian::big) {
      std::uint64_t swapped = 0;
      for (int b = 0; b < 8; ++b) swapped |= ((bits >> (8 * b)) & 0xffULL) << (8 * (7 - b));
      bits = swapped;
    }
    double x;
    std::memcpy(&x, &bits, sizeof x);
    v(i) = x;
  }
  return v;
}

}  // namespace detail

inline void save_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  os << "frlckpt 1\n";
  for (const auto& [k, v] : ckpt.manifest) os << k << ' ' << v << '\n';
  os << "params " << ckpt.params.size() << '\n';
  detail::write_le_doubles(os, ckpt.params);
}

inline Checkpoint load_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "frlckpt 1")
    throw std::invalid_argument("checkpoint: bad magic line");
  Checkpoint ckpt;
  int count = -1;
  while (std::getline(is, line)) {
    auto space = line.find(' ');
    if (space == std::string::npos)
      throw std::invalid_argument("checkpoint: malformed manifest line '" + line + "'");
    std::string key = line.substr(0, space);
    std::string value = line.substr(space + 1);
    if (key == "params") {
      count = std::stoi(value);
      break;
    }
    ckpt.manifest.emplace_back(key, value);
  }
  if (count < 0) throw std::invalid_argument("checkpoint: missing params line");
  ckpt.params = detail::read_le_doubles(is, count);
  return ckpt;
}

}  // namespace frl
