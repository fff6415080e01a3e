#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "frl/nn.hpp"
#include "frl/rng.hpp"

namespace frl {

/// Joint policy/value parameterization over a finite state space. The policy
/// parameters and value parameters may share coordinates (the perceptron
/// trunk is shared between heads), so gradients are exposed as accumulation
/// into a flat vector per path: the log-policy path touches the trunk and
/// the policy head, the value path touches the trunk and the value head.
class PolicyValueModel {
 public:
  virtual ~PolicyValueModel() = default;

  virtual int n_states() const = 0;
  virtual int n_actions() const = 0;
  virtual std::string kind() const = 0;

  virtual Eigen::VectorXd policy(int s) const = 0;
  virtual Eigen::VectorXd q_row(int s) const = 0;
  double q(int s, int a) const { return q_row(s)(a); }

  virtual Eigen::VectorXd& params() = 0;
  virtual const Eigen::VectorXd& params() const = 0;
  int n_params() const { return static_cast<int>(params().size()); }

  /// grad += coeff * d log pi(a|s) / d params.
  virtual void add_logpi_grad(int s, int a, double coeff, Eigen::VectorXd& grad) const = 0;
  /// grad += coeff * d Q(s,a) / d params.
  virtual void add_q_grad(int s, int a, double coeff, Eigen::VectorXd& grad) const = 0;
  /// grad += coeff * sum_k weights(k) d Q(s,k) / d params. Used for
  /// bootstrap terms, where `weights` is a frozen policy row.
  virtual void add_weighted_q_grad(int s, const Eigen::VectorXd& weights, double coeff,
                                   Eigen::VectorXd& grad) const = 0;
  /// grad += coeff * d H(pi(.|s)) / d params, H the policy entropy.
  virtual void add_entropy_grad(int s, double coeff, Eigen::VectorXd& grad) const = 0;

  /// Indices of the coordinates the value path can touch; the
  /// finite-difference harnesses perturb exactly these.
  virtual std::vector<int> value_param_indices() const = 0;

  virtual std::unique_ptr<PolicyValueModel> clone() const = 0;

  Eigen::MatrixXd policy_table() const {
    Eigen::MatrixXd t(n_states(), n_actions());
    for (int s = 0; s < n_states(); ++s) t.row(s) = policy(s).transpose();
    return t;
  }
  Eigen::MatrixXd q_table() const {
    Eigen::MatrixXd t(n_states(), n_actions());
    for (int s = 0; s < n_states(); ++s) t.row(s) = q_row(s).transpose();
    return t;
  }

  Eigen::VectorXd zero_grad() const { return Eigen::VectorXd::Zero(n_params()); }
};

/// Softmax policy logits and a raw Q table, stored back to back in the flat
/// parameter vector.
class TabularModel final : public PolicyValueModel {
 public:
  TabularModel(int n_states, int n_actions)
      : S_(n_states), A_(n_actions), params_(Eigen::VectorXd::Zero(2 * n_states * n_actions)) {}

  TabularModel(int n_states, int n_actions, Eigen::VectorXd params)
      : S_(n_states), A_(n_actions), params_(std::move(params)) {
    if (params_.size() != 2 * S_ * A_)
      throw std::invalid_argument("TabularModel: parameter vector shape mismatch");
  }

  int n_states() const override { return S_; }
  int n_actions() const override { return A_; }
  std::string kind() const override { return "tabular"; }

  Eigen::VectorXd policy(int s) const override {
    return softmax(params_.segment(s * A_, A_));
  }
  Eigen::VectorXd q_row(int s) const override {
    return params_.segment(S_ * A_ + s * A_, A_);
  }

  Eigen::VectorXd& params() override { return params_; }
  const Eigen::VectorXd& params() const override { return params_; }

  void add_logpi_grad(int s, int a, double coeff, Eigen::VectorXd& grad) const override {
    Eigen::VectorXd pi = policy(s);
    grad.segment(s * A_, A_) -= coeff * pi;
    grad(s * A_ + a) += coeff;
  }

  void add_q_grad(int s, int a, double coeff, Eigen::VectorXd& grad) const override {
    grad(S_ * A_ + s * A_ + a) += coeff;
  }

  void add_weighted_q_grad(int s, const Eigen::VectorXd& weights, double coeff,
                           Eigen::VectorXd& grad) const override {
    grad.segment(S_ * A_ + s * A_, A_) += coeff * weights;
  }

  void add_entropy_grad(int s, double coeff, Eigen::VectorXd& grad) const override {
    Eigen::VectorXd pi = policy(s);
    Eigen::VectorXd logpi = pi.array().log().matrix();
    double mean_log = pi.dot(logpi);
    grad.segment(s * A_, A_) -=
        coeff * pi.cwiseProduct(logpi - Eigen::VectorXd::Constant(A_, mean_log));
  }

  std::vector<int> value_param_indices() const override {
    std::vector<int> idx(S_ * A_);
    for (int i = 0; i < S_ * A_; ++i) idx[i] = S_ * A_ + i;
    return idx;
  }

  std::unique_ptr<PolicyValueModel> clone() const override {
    return std::make_unique<TabularModel>(S_, A_, params_);
  }

 private:
  int S_, A_;
  Eigen::VectorXd params_;
};

/// Shared-trunk perceptron model over one-hot state encodings.
class MlpModel final : public PolicyValueModel {
 public:
  MlpModel(int n_states, int n_actions, const std::vector<int>& hidden, Rng& rng)
      : net_(MlpShape{n_states, hidden, n_actions}, rng) {}

  MlpModel(MlpShape shape, Eigen::VectorXd params) : net_(std::move(shape), std::move(params)) {}

  int n_states() const override { return net_.shape().n_inputs; }
  int n_actions() const override { return net_.shape().n_actions; }
  std::string kind() const override { return "mlp"; }

  Eigen::VectorXd policy(int s) const override { return net_.forward(s).policy; }
  Eigen::VectorXd q_row(int s) const override { return net_.forward(s).q; }

  Eigen::VectorXd& params() override { return net_.params(); }
  const Eigen::VectorXd& params() const override { return net_.params(); }

  void add_logpi_grad(int s, int a, double coeff, Eigen::VectorXd& grad) const override {
    MlpCache cache = net_.forward(s);
    Eigen::VectorXd dlogits = -cache.policy;
    dlogits(a) += 1.0;
    net_.backward_logits(cache, dlogits, Eigen::VectorXd::Zero(n_actions()), grad, coeff);
  }

  void add_q_grad(int s, int a, double coeff, Eigen::VectorXd& grad) const override {
    MlpCache cache = net_.forward(s);
    Eigen::VectorXd dq = Eigen::VectorXd::Zero(n_actions());
    dq(a) = 1.0;
    net_.backward_logits(cache, Eigen::VectorXd::Zero(n_actions()), dq, grad, coeff);
  }

  void add_weighted_q_grad(int s, const Eigen::VectorXd& weights, double coeff,
                           Eigen::VectorXd& grad) const override {
    MlpCache cache = net_.forward(s);
    net_.backward_logits(cache, Eigen::VectorXd::Zero(n_actions()), weights, grad, coeff);
  }

  void add_entropy_grad(int s, double coeff, Eigen::VectorXd& grad) const override {
    MlpCache cache = net_.forward(s);
    Eigen::VectorXd logpi = cache.policy.array().log().matrix();
    double mean_log = cache.policy.dot(logpi);
    Eigen::VectorXd dlogits =
        -cache.policy.cwiseProduct(logpi - Eigen::VectorXd::Constant(n_actions(), mean_log));
    net_.backward_logits(cache, dlogits, Eigen::VectorXd::Zero(n_actions()), grad, coeff);
  }

  std::vector<int> value_param_indices() const override {
    // trunk plus the value head; the policy head cannot influence Q
    const MlpShape& sh = net_.shape();
    std::vector<int> idx;
    int off = 0, in = sh.n_inputs;
    for (int h : sh.hidden) {
      for (int i = 0; i < h * in + h; ++i) idx.push_back(off + i);
      off += h * in + h;
      in = h;
    }
    off += sh.n_actions * in + sh.n_actions;  // skip the policy head
    for (int i = 0; i < sh.n_actions * in + sh.n_actions; ++i) idx.push_back(off + i);
    return idx;
  }

  std::unique_ptr<PolicyValueModel> clone() const override {
    return std::make_unique<MlpModel>(net_.shape(), net_.params());
  }

  const Mlp& net() const { return net_; }

 private:
  Mlp net_;
};

// --- checkpoint glue ----------------------------------------------------------

inline Checkpoint model_checkpoint(const PolicyValueModel& model) {
  Checkpoint ckpt;
  ckpt.manifest.emplace_back("model", model.kind());
  ckpt.manifest.emplace_back("states", std::to_string(model.n_states()));
  ckpt.manifest.emplace_back("actions", std::to_string(model.n_actions()));
  if (model.kind() == "mlp") {
    const auto& mlp = dynamic_cast<const MlpModel&>(model);
    std::ostringstream layers;
    for (std::size_t i = 0; i < mlp.net().shape().hidden.size(); ++i) {
      if (i) layers << ' ';
      layers << mlp.net().shape().hidden[i];
    }
    ckpt.manifest.emplace_back("hidden", layers.str());
  }
  ckpt.params = model.params();
  return ckpt;
}

inline std::unique_ptr<PolicyValueModel> model_from_checkpoint(const Checkpoint& ckpt) {
  const std::string kind = ckpt.lookup("model");
  const int S = std::stoi(ckpt.lookup("states"));
  const int A = std::stoi(ckpt.lookup("actions"));
  if (kind == "tabular") return std::make_unique<TabularModel>(S, A, ckpt.params);
  if (kind == "mlp") {
    std::istringstream layers(ckpt.lookup("hidden"));
    std::vector<int> hidden;
    for (int h; layers >> h;) hidden.push_back(h);
    return std::make_unique<MlpModel>(MlpShape{S, hidden, A}, ckpt.params);
  }
  throw std::invalid_argument("checkpoint: unknown model kind '" + kind + "'");
}

}  // namespace frl
