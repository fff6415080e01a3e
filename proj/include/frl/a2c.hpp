#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "frl/config.hpp"
#include "frl/frl_core.hpp"

namespace frl {

struct A2cConfig {
  int n_step = 5;
  double entropy_coefficient = 0.01;
  double value_loss_coefficient = 0.5;
  double lr_policy = 7e-4;
  double lr_value = 7e-4;
  int batch_size = 64;

  void validate() const {
    if (n_step < 1) throw std::invalid_argument("a2c: n_step must be at least 1");
    if (entropy_coefficient < 0.0 || value_loss_coefficient < 0.0)
      throw std::invalid_argument("a2c: coefficients must be nonnegative");
    if (!(lr_policy > 0.0) || !(lr_value > 0.0))
      throw std::invalid_argument("a2c: learning rates must be positive");
    if (batch_size < 1) throw std::invalid_argument("a2c: batch_size must be at least 1");
  }

  static A2cConfig from_config(const Config& cfg) {
    A2cConfig a;
    a.n_step = cfg.n_step;
    a.entropy_coefficient = cfg.entropy_coefficient;
    a.value_loss_coefficient = cfg.value_coefficient;
    a.lr_policy = cfg.lr_policy;
    a.lr_value = cfg.lr_q;
    a.batch_size = cfg.batch_size;
    a.validate();
    return a;
  }
};

/// Policy objective direction for one stream batch: mean over entries of
///   (R - V(s)) d log pi(a|s)  +  entropy_coefficient * d H(pi(.|s)),
/// with V(s) = sum_k pi(k|s) Q(s,k) and R the n-step window return.
inline Eigen::VectorXd a2c_policy_gradient(const std::vector<WindowEntry>& entries, double gamma,
                                           const PolicyValueModel& model,
                                           const Eigen::MatrixXd& pi, const Eigen::MatrixXd& q,
                                           double entropy_coefficient) {
  Eigen::VectorXd grad = model.zero_grad();
  if (entries.empty()) return grad;
  const double B = static_cast<double>(entries.size());
  for (const auto& w : entries) {
    double ret = window_return(w, gamma, q, pi);
    double baseline = pi.row(w.state).dot(q.row(w.state));
    model.add_logpi_grad(w.state, w.action, (ret - baseline) / B, grad);
    if (entropy_coefficient > 0.0) model.add_entropy_grad(w.state, entropy_coefficient / B, grad);
  }
  return grad;
}

/// Gradient of the critic loss mean_i coefficient * (V(s) - R)^2 / 2 with
/// respect to the value parameters; the policy weights inside V are frozen
/// and the window returns are fixed targets.
inline Eigen::VectorXd a2c_value_loss_gradient(const std::vector<WindowEntry>& entries,
                                               double gamma, const PolicyValueModel& model,
                                               const Eigen::MatrixXd& pi, const Eigen::MatrixXd& q,
                                               double coefficient) {
  Eigen::VectorXd grad = model.zero_grad();
  if (entries.empty()) return grad;
  const double B = static_cast<double>(entries.size());
  for (const auto& w : entries) {
    double ret = window_return(w, gamma, q, pi);
    double v = pi.row(w.state).dot(q.row(w.state));
    model.add_weighted_q_grad(w.state, pi.row(w.state), coefficient * (v - ret) / B, grad);
  }
  return grad;
}

/// Synchronous n-step advantage actor-critic on the shared model stack: one
/// on-policy rollout stream, advantage-weighted policy ascent with an
/// entropy bonus, and critic regression of sum_k pi(k|s) Q(s,k) onto the
/// n-step returns. Optimizer, clipping, logging, and determinism match the
/// paired-sampling trainer.
inline TrainResult a2c_train(const Config& cfg, long seed) {
  validate_config(cfg);
  if (cfg.algorithm != "a2c")
    throw std::invalid_argument("a2c_train: config selects algorithm '" + cfg.algorithm + "'");
  const A2cConfig a2c = A2cConfig::from_config(cfg);

  EnvSpec spec = env_spec_from_config(cfg);
  Mdp mdp = build_mdp(spec);
  const int S = mdp.n_states;

  Rng init_rng(static_cast<std::uint64_t>(seed), 1);
  Rng train_rng(static_cast<std::uint64_t>(seed), 2);

  TrainResult out;
  out.model = detail::make_model(cfg, S, mdp.n_actions, init_rng);
  PolicyValueModel& model = *out.model;

  RmsPropState opt_policy(model.n_params());
  RmsPropState opt_value(model.n_params());

  out.header.emplace_back("algorithm", "a2c");
  out.header.emplace_back("seed", std::to_string(seed));

  RolloutCursor cursor;
  long step = 0;
  long episodes = 0;
  double last_objective = 0.0;
  double last_policy_norm = 0.0, last_value_norm = 0.0;
  double last_entropy = 0.0, last_loss_value = 0.0;

  auto emit_row = [&](const Eigen::MatrixXd& pi_table) {
    Rng eval_rng(static_cast<std::uint64_t>(seed) ^ 0x5eedULL, 1000 + static_cast<std::uint64_t>(step));
    MetricsRow row;
    row.step = step;
    row.episodes_completed = episodes;
    row.mean_return = detail::evaluate_mean_return(mdp, pi_table, cfg.eval_episodes,
                                                   spec.max_episode_steps, eval_rng);
    TrajectoryBatch eval_batch = sample_trajectories(
        mdp, [&](int s) { return Eigen::VectorXd(pi_table.row(s)); },
        cfg.eval_episodes * spec.max_episode_steps / 2, spec.max_episode_steps, eval_rng);
    try {
      last_loss_value = loss_value(eval_batch, mdp.gamma, pi_table, model.q_table());
    } catch (const std::invalid_argument&) {
    }
    row.loss_value = last_loss_value;
    row.saddle_objective = last_objective;  // critic loss for this trainer
    row.fdiv_estimate = 0.0;                // sampling policy is the learning policy
    row.policy_grad_norm = last_policy_norm;
    row.q_grad_norm = last_value_norm;
    row.policy_entropy = last_entropy;
    row.wall_clock_ms = 0;
    out.rows.push_back(row);
  };

  {
    Eigen::MatrixXd pi_table = model.policy_table();
    double h = 0.0;
    for (int s = 0; s < S; ++s) h += policy_entropy(pi_table.row(s));
    last_entropy = h / S;
    emit_row(pi_table);
  }

  while (step < cfg.total_steps) {
    Eigen::MatrixXd pi_table = model.policy_table();
    Eigen::MatrixXd q_table = model.q_table();

    auto entries = collect_stream_windows(mdp, pi_table, a2c.batch_size, a2c.n_step,
                                          spec.max_episode_steps, train_rng, cursor, &episodes);

    Eigen::VectorXd g_policy = a2c_policy_gradient(entries, mdp.gamma, model, pi_table, q_table,
                                                   a2c.entropy_coefficient);
    Eigen::VectorXd g_value = a2c_value_loss_gradient(entries, mdp.gamma, model, pi_table,
                                                      q_table, a2c.value_loss_coefficient);
    last_policy_norm = g_policy.norm();
    last_value_norm = g_value.norm();
    clip_gradients(g_policy, cfg.grad_clip);
    clip_gradients(g_value, cfg.grad_clip);

    double critic_loss = 0.0;
    for (const auto& w : entries) {
      double diff = pi_table.row(w.state).dot(q_table.row(w.state)) -
                    window_return(w, mdp.gamma, q_table, pi_table);
      critic_loss += 0.5 * diff * diff;
    }
    last_objective = critic_loss / static_cast<double>(entries.size());
    if (!std::isfinite(last_objective))
      throw std::runtime_error("a2c_train: critic loss diverged at step " + std::to_string(step));

    rmsprop_step(model.params(), g_policy, opt_policy, a2c.lr_policy, UpdateDirection::Ascend);
    rmsprop_step(model.params(), g_value, opt_value, a2c.lr_value, UpdateDirection::Descend);

    {
      double h = 0.0;
      for (const auto& w : entries) h += policy_entropy(pi_table.row(w.state));
      last_entropy = h / static_cast<double>(entries.size());
    }

    long prev = step;
    step += a2c.batch_size;
    if (step / cfg.eval_interval > prev / cfg.eval_interval || step >= cfg.total_steps)
      emit_row(model.policy_table());
  }
  return out;
}

}  // namespace frl
