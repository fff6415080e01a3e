#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "frl/config.hpp"
#include "frl/convex.hpp"
#include "frl/envs.hpp"
#include "frl/metrics.hpp"
#include "frl/model.hpp"
#include "frl/nn.hpp"
#include "frl/rng.hpp"

namespace frl {

// --- sampling policy construction --------------------------------------------

enum class BehaviorKind { EpsilonGreedyOnQ, SnapshotOfPi, UniformMix };

struct BehaviorPolicyConfig {
  BehaviorKind kind = BehaviorKind::EpsilonGreedyOnQ;
  double epsilon = 0.1;     // EpsilonGreedyOnQ
  double mix_weight = 0.1;  // UniformMix
  int snapshot_interval = 100;

  static BehaviorPolicyConfig from_config(const Config& cfg) {
    BehaviorPolicyConfig b;
    if (cfg.behavior_policy == "epsilon_greedy") b.kind = BehaviorKind::EpsilonGreedyOnQ;
    else if (cfg.behavior_policy == "snapshot") b.kind = BehaviorKind::SnapshotOfPi;
    else if (cfg.behavior_policy == "uniform_mix") b.kind = BehaviorKind::UniformMix;
    else throw ConfigError("invalid value for behavior_policy: '" + cfg.behavior_policy + "'");
    b.epsilon = cfg.epsilon_behavior;
    b.mix_weight = cfg.mix_weight;
    b.snapshot_interval = cfg.snapshot_interval;
    return b;
  }
};

/// Instantiates the sampling policy from the current value and policy
/// tables. Every variant keeps all action probabilities strictly positive,
/// which the density ratios require; epsilon-greedy therefore rejects
/// epsilon = 0.
inline Eigen::MatrixXd make_behavior_policy(const BehaviorPolicyConfig& cfg,
                                            const Eigen::MatrixXd& q_table,
                                            const Eigen::MatrixXd& pi_table,
                                            const Eigen::MatrixXd* pi_snapshot = nullptr) {
  const int S = static_cast<int>(q_table.rows());
  const int A = static_cast<int>(q_table.cols());
  switch (cfg.kind) {
    case BehaviorKind::EpsilonGreedyOnQ: {
      if (!(cfg.epsilon > 0.0))
        throw std::invalid_argument(
            "make_behavior_policy: epsilon-greedy needs epsilon > 0 to stay strictly positive");
      Eigen::MatrixXd out = Eigen::MatrixXd::Constant(S, A, cfg.epsilon / A);
      for (int s = 0; s < S; ++s) {
        int best = 0;
        for (int a = 1; a < A; ++a)
          if (q_table(s, a) > q_table(s, best)) best = a;
        out(s, best) += 1.0 - cfg.epsilon;
      }
      return out;
    }
    case BehaviorKind::SnapshotOfPi:
      return pi_snapshot ? *pi_snapshot : pi_table;
    case BehaviorKind::UniformMix:
      return (1.0 - cfg.mix_weight) * pi_table +
             cfg.mix_weight * Eigen::MatrixXd::Constant(S, A, 1.0 / A);
  }
  throw std::logic_error("make_behavior_policy: unreachable");
}

// --- paired batches -----------------------------------------------------------

/// A state-action probe plus up to n_step observed rewards and the state
/// where the lookahead stopped. `terminal` means the lookahead entered a
/// terminal state, in which case no bootstrap applies.
struct WindowEntry {
  int state = 0;
  int action = 0;
  std::vector<double> rewards;
  int end_state = 0;
  bool terminal = false;
};

/// One shared decision state with its two probes: the stream transition of
/// the sampling policy and a branched rollout of the learning policy.
struct PairedEntry {
  WindowEntry on_policy;  // action drawn from the learning policy
  WindowEntry behavior;   // action drawn from the sampling policy
  int state() const { return behavior.state; }
};

struct PairedBatch {
  std::vector<PairedEntry> entries;
  double gamma = 0.99;
  int n_step = 5;
};

/// Persistent position of the sampling-policy rollout between batches.
struct RolloutCursor {
  int state = -1;  // negative: reset from rho0 before the next step
  int steps_in_episode = 0;
  long episode_serial = 0;
};

/// Discounted window sum plus (when the window did not end in a terminal
/// state) the bootstrap value sum_a pi(a|end) q(end, a).
inline double window_return(const WindowEntry& w, double gamma, const Eigen::MatrixXd& q,
                            const Eigen::MatrixXd& pi) {
  double acc = 0.0, disc = 1.0;
  for (double r : w.rewards) {
    acc += disc * r;
    disc *= gamma;
  }
  if (!w.terminal) acc += disc * pi.row(w.end_state).dot(q.row(w.end_state));
  return acc;
}

/// Same, with the action values supplied as a callback (used by the
/// finite-difference harnesses, which re-evaluate Q under perturbed
/// parameters while the policy weights stay frozen).
inline double window_return(const WindowEntry& w, double gamma,
                            const std::function<Eigen::VectorXd(int)>& q_row,
                            const Eigen::MatrixXd& pi) {
  double acc = 0.0, disc = 1.0;
  for (double r : w.rewards) {
    acc += disc * r;
    disc *= gamma;
  }
  if (!w.terminal) acc += disc * Eigen::VectorXd(pi.row(w.end_state)).dot(q_row(w.end_state));
  return acc;
}

/// Advances the rollout stream `batch_size` transitions under the sampling
/// policy and extracts an n-step reward window for every transition.
/// Windows stop at episode ends and at the fragment edge, where they
/// bootstrap at the first unobserved state. Episodes end on terminal entry
/// or after `horizon` steps; `episodes_done`, when given, counts completed
/// episodes.
inline std::vector<WindowEntry> collect_stream_windows(const Mdp& mdp,
                                                       const Eigen::MatrixXd& policy,
                                                       int batch_size, int n_step, int horizon,
                                                       Rng& rng, RolloutCursor& cursor,
                                                       long* episodes_done = nullptr) {
  if (batch_size < 1) throw std::invalid_argument("collect_stream_windows: batch_size >= 1");
  if (n_step < 1) throw std::invalid_argument("collect_stream_windows: n_step >= 1");
  if (horizon < 1) throw std::invalid_argument("collect_stream_windows: horizon >= 1");

  struct StreamStep {
    Transition tr;
    long episode;
  };

  std::vector<StreamStep> frag;
  frag.reserve(batch_size);
  for (int i = 0; i < batch_size; ++i) {
    if (cursor.state < 0) {
      cursor.state = sample_initial_state(mdp, rng);
      cursor.steps_in_episode = 0;
      ++cursor.episode_serial;
    }
    int s = cursor.state;
    int a = sample_categorical_row(policy, s, rng);
    Transition tr = branch_step(mdp, s, a, rng);
    frag.push_back({tr, cursor.episode_serial});
    ++cursor.steps_in_episode;
    if (tr.done || cursor.steps_in_episode >= horizon) {
      cursor.state = -1;
      if (episodes_done) ++*episodes_done;
    } else {
      cursor.state = tr.next_state;
    }
  }

  std::vector<WindowEntry> out(batch_size);
  for (int i = 0; i < batch_size; ++i) {
    WindowEntry& w = out[i];
    w.state = frag[i].tr.state;
    w.action = frag[i].tr.action;
    int j = i;
    while (j < batch_size && j - i < n_step && frag[j].episode == frag[i].episode) {
      w.rewards.push_back(frag[j].tr.reward);
      if (frag[j].tr.done) {
        w.terminal = true;
        break;
      }
      w.end_state = frag[j].tr.next_state;
      ++j;
    }
    if (!w.terminal) w.end_state = frag[j - 1].tr.next_state;
  }
  return out;
}

/// A branched n-step rollout of the learning policy from a given state; the
/// environment is re-stepped from `state` without disturbing the stream.
inline WindowEntry branch_rollout(const Mdp& mdp, const Eigen::MatrixXd& policy, int state,
                                  int n_step, Rng& rng) {
  WindowEntry w;
  w.state = state;
  int s = state;
  for (int k = 0; k < n_step; ++k) {
    int a = sample_categorical_row(policy, s, rng);
    if (k == 0) w.action = a;
    Transition tr = branch_step(mdp, s, a, rng);
    w.rewards.push_back(tr.reward);
    if (tr.done) {
      w.terminal = true;
      return w;
    }
    s = tr.next_state;
  }
  w.end_state = s;
  return w;
}

/// One batch of the paired construction: the sampling policy's rollout
/// supplies the shared states and the behavior probes; the learning policy
/// probes the same states through branched rollouts.
inline PairedBatch collect_paired_batch(const Mdp& mdp, const Eigen::MatrixXd& pi,
                                        const Eigen::MatrixXd& pi_tilde, int batch_size,
                                        int n_step, int horizon, Rng& rng, RolloutCursor& cursor,
                                        long* episodes_done = nullptr) {
  PairedBatch batch;
  batch.gamma = mdp.gamma;
  batch.n_step = n_step;
  auto stream =
      collect_stream_windows(mdp, pi_tilde, batch_size, n_step, horizon, rng, cursor, episodes_done);
  batch.entries.resize(batch_size);
  for (int i = 0; i < batch_size; ++i) {
    batch.entries[i].behavior = std::move(stream[i]);
    batch.entries[i].on_policy =
        branch_rollout(mdp, pi, batch.entries[i].behavior.state, n_step, rng);
  }
  return batch;
}

// --- the saddle objective and its two gradients -------------------------------

/// Empirical saddle objective for the quadratic generator:
///   mean_i [Q(s,a) - R]  -  mean_i [(Q(s,b) - Rt) + (Q(s,b) - Rt)^2 / 2],
/// with a the learning-policy probe, b the sampling-policy probe, and R, Rt
/// the n-step window returns.
inline double saddle_objective(const PairedBatch& batch,
                               const std::function<Eigen::VectorXd(int)>& q_row,
                               const Eigen::MatrixXd& pi) {
  if (batch.entries.empty()) return 0.0;
  double on = 0.0, behave = 0.0;
  for (const auto& e : batch.entries) {
    double qa = q_row(e.on_policy.state)(e.on_policy.action);
    double ra = window_return(e.on_policy, batch.gamma, q_row, pi);
    on += qa - ra;
    double qb = q_row(e.behavior.state)(e.behavior.action);
    double rb = window_return(e.behavior, batch.gamma, q_row, pi);
    double diff = qb - rb;
    behave += diff + 0.5 * diff * diff;
  }
  const double B = static_cast<double>(batch.entries.size());
  return on / B - behave / B;
}

inline double saddle_objective(const PairedBatch& batch, const Eigen::MatrixXd& q,
                               const Eigen::MatrixXd& pi) {
  return saddle_objective(batch, [&](int s) { return Eigen::VectorXd(q.row(s)); }, pi);
}

/// Policy-improvement gradient: mean over learning-policy probes of
///   (Q(s,a) - R) * d log pi(a|s),
/// with R the n-step window return bootstrapped by sum_k pi(k|s_n) Q(s_n, k).
/// Both Q and the bootstrap weights are the current numbers, treated as
/// constants with respect to the policy parameters.
inline Eigen::VectorXd policy_gradient(const PairedBatch& batch, const PolicyValueModel& model,
                                       const Eigen::MatrixXd& pi, const Eigen::MatrixXd& q) {
  Eigen::VectorXd grad = model.zero_grad();
  if (batch.entries.empty()) return grad;
  const double B = static_cast<double>(batch.entries.size());
  for (const auto& e : batch.entries) {
    const WindowEntry& w = e.on_policy;
    double coeff = q(w.state, w.action) - window_return(w, batch.gamma, q, pi);
    if (pi(w.state, w.action) <= 0.0)
      throw std::runtime_error("policy_gradient: zero probability at a taken action");
    model.add_logpi_grad(w.state, w.action, coeff / B, grad);
  }
  return grad;
}

enum class QGradMode {
  SemiGradient,         // window returns treated as fixed targets
  FullDifferentiation,  // differentiate through the bootstrap values too
};

/// Policy-evaluation gradient:
///   - mean_b [(Q(s,b) - Rt) dQ(s,b)] + mean_a [dQ(s,a)] - mean_b [dQ(s,b)].
/// In semi-gradient mode the window returns are fixed targets. Full
/// differentiation adds the bootstrap terms of both streams and exactly
/// matches finite differences of saddle_objective over the value
/// parameters (the policy weights stay frozen either way).
inline Eigen::VectorXd q_gradient(const PairedBatch& batch, const PolicyValueModel& model,
                                  const Eigen::MatrixXd& pi, const Eigen::MatrixXd& q,
                                  QGradMode mode = QGradMode::SemiGradient) {
  Eigen::VectorXd grad = model.zero_grad();
  if (batch.entries.empty()) return grad;
  const double B = static_cast<double>(batch.entries.size());
  for (const auto& e : batch.entries) {
    const WindowEntry& wb = e.behavior;
    const WindowEntry& wa = e.on_policy;
    double rb = window_return(wb, batch.gamma, q, pi);
    double diff = q(wb.state, wb.action) - rb;
    model.add_q_grad(wb.state, wb.action, (-diff - 1.0) / B, grad);
    model.add_q_grad(wa.state, wa.action, 1.0 / B, grad);
    if (mode == QGradMode::FullDifferentiation) {
      // d/dphi of the returns: gamma^m sum_k pi(k|end) dQ(end, k)
      if (!wa.terminal) {
        double disc = std::pow(batch.gamma, static_cast<double>(wa.rewards.size()));
        model.add_weighted_q_grad(wa.end_state, pi.row(wa.end_state), -disc / B, grad);
      }
      if (!wb.terminal) {
        double disc = std::pow(batch.gamma, static_cast<double>(wb.rewards.size()));
        model.add_weighted_q_grad(wb.end_state, pi.row(wb.end_state), (1.0 + diff) * disc / B,
                                  grad);
      }
    }
  }
  return grad;
}

// --- training loop -------------------------------------------------------------

struct TrainResult {
  std::vector<MetricsRow> rows;
  std::unique_ptr<PolicyValueModel> model;
  std::vector<std::pair<std::string, std::string>> header;  // echoed into the log
  bool diverged = false;
};

namespace detail {

inline std::unique_ptr<PolicyValueModel> make_model(const Config& cfg, int n_states,
                                                    int n_actions, Rng& rng) {
  if (cfg.model == "tabular") return std::make_unique<TabularModel>(n_states, n_actions);
  std::vector<int> hidden(cfg.hidden_layers, cfg.hidden_width);
  return std::make_unique<MlpModel>(n_states, n_actions, hidden, rng);
}

inline UpdateDirection direction_from(const std::string& name) {
  return name == "ascend" ? UpdateDirection::Ascend : UpdateDirection::Descend;
}

/// Mean discounted return of sampled evaluation episodes under the policy.
inline double evaluate_mean_return(const Mdp& mdp, const Eigen::MatrixXd& pi, int episodes,
                                   int horizon, Rng& rng) {
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    int s = sample_initial_state(mdp, rng);
    double disc = 1.0, ret = 0.0;
    for (int t = 0; t < horizon; ++t) {
      int a = sample_categorical_row(pi, s, rng);
      Transition tr = branch_step(mdp, s, a, rng);
      ret += disc * tr.reward;
      disc *= mdp.gamma;
      if (tr.done) break;
      s = tr.next_state;
    }
    total += ret;
  }
  return total / episodes;
}

}  // namespace detail

/// The paired-sampling trainer. Per iteration: refresh the policy/value
/// tables, rebuild the sampling policy, collect one paired batch, apply the
/// clipped policy-improvement and policy-evaluation updates through RMSProp,
/// and advance the step counter by the batch size (the stream transitions
/// consumed). Deterministic for a fixed (config, seed).
///
/// The metrics rows are evaluated from dedicated seeded streams so the
/// training trajectory does not depend on the evaluation cadence.
/// loss_value is measured on trajectories of the sampling policy, whose
/// recorded rewards are the run's "true value" record.
inline TrainResult train(const Config& cfg, long seed,
                         const std::string& checkpoint_on_divergence = "") {
  validate_config(cfg);
  if (cfg.algorithm != "frl")
    throw std::invalid_argument("train: config selects algorithm '" + cfg.algorithm + "'");

  EnvSpec spec = env_spec_from_config(cfg);
  Mdp mdp = build_mdp(spec);
  const int S = mdp.n_states, A = mdp.n_actions;

  Rng init_rng(static_cast<std::uint64_t>(seed), 1);
  Rng train_rng(static_cast<std::uint64_t>(seed), 2);

  TrainResult out;
  out.model = detail::make_model(cfg, S, A, init_rng);
  PolicyValueModel& model = *out.model;

  RmsPropState opt_policy(model.n_params());
  RmsPropState opt_q(model.n_params());
  const UpdateDirection dir_policy = detail::direction_from(cfg.policy_update_direction);
  const UpdateDirection dir_q = detail::direction_from(cfg.q_update_direction);
  const BehaviorPolicyConfig behavior = BehaviorPolicyConfig::from_config(cfg);

  out.header.emplace_back("algorithm", "frl");
  out.header.emplace_back("seed", std::to_string(seed));
  out.header.emplace_back("policy_update_direction", cfg.policy_update_direction);
  out.header.emplace_back("q_update_direction", cfg.q_update_direction);

  RolloutCursor cursor;
  Eigen::MatrixXd pi_snapshot = model.policy_table();
  long step = 0;
  long episodes = 0;
  long iteration = 0;
  double last_objective = 0.0;
  double last_policy_norm = 0.0, last_q_norm = 0.0;
  double last_fdiv = 0.0, last_entropy = 0.0, last_loss_value = 0.0;

  auto emit_row = [&](Eigen::MatrixXd pi_table, const Eigen::MatrixXd& pi_tilde) {
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
      // no complete episodes this round; carry the previous estimate
    }
    row.loss_value = last_loss_value;
    row.saddle_objective = last_objective;
    row.fdiv_estimate = last_fdiv;
    row.policy_grad_norm = last_policy_norm;
    row.q_grad_norm = last_q_norm;
    row.policy_entropy = last_entropy;
    row.wall_clock_ms = 0;  // kept deterministic; see README
    out.rows.push_back(row);
  };

  {
    Eigen::MatrixXd pi_table = model.policy_table();
    Eigen::MatrixXd q_table = model.q_table();
    Eigen::MatrixXd pi_tilde = make_behavior_policy(behavior, q_table, pi_table, &pi_snapshot);
    std::vector<int> all_states(S);
    for (int s = 0; s < S; ++s) all_states[s] = s;
    last_fdiv = fdiv_track(pi_table, pi_tilde, all_states);
    double h = 0.0;
    for (int s = 0; s < S; ++s) h += policy_entropy(pi_table.row(s));
    last_entropy = h / S;
    emit_row(pi_table, pi_tilde);
  }

  while (step < cfg.total_steps) {
    Eigen::MatrixXd pi_table = model.policy_table();
    Eigen::MatrixXd q_table = model.q_table();
    if (behavior.kind == BehaviorKind::SnapshotOfPi &&
        iteration % behavior.snapshot_interval == 0)
      pi_snapshot = pi_table;
    Eigen::MatrixXd pi_tilde = make_behavior_policy(behavior, q_table, pi_table, &pi_snapshot);

    PairedBatch batch = collect_paired_batch(mdp, pi_table, pi_tilde, cfg.batch_size, cfg.n_step,
                                             spec.max_episode_steps, train_rng, cursor, &episodes);

    Eigen::VectorXd g_policy = policy_gradient(batch, model, pi_table, q_table);
    Eigen::VectorXd g_q = q_gradient(batch, model, pi_table, q_table, QGradMode::SemiGradient);
    last_policy_norm = g_policy.norm();
    last_q_norm = g_q.norm();
    clip_gradients(g_policy, cfg.grad_clip);
    clip_gradients(g_q, cfg.grad_clip);

    last_objective = saddle_objective(batch, q_table, pi_table);
    if (!std::isfinite(last_objective)) {
      if (!checkpoint_on_divergence.empty()) {
        std::ofstream os(checkpoint_on_divergence, std::ios::binary);
        save_checkpoint(os, model_checkpoint(model));
      }
      out.diverged = true;
      throw std::runtime_error("train: saddle objective diverged at step " + std::to_string(step));
    }

    rmsprop_step(model.params(), g_policy, opt_policy, cfg.lr_policy, dir_policy);
    rmsprop_step(model.params(), g_q, opt_q, cfg.lr_q, dir_q);

    {
      std::vector<int> visited;
      visited.reserve(batch.entries.size());
      for (const auto& e : batch.entries) visited.push_back(e.state());
      last_fdiv = fdiv_track(pi_table, pi_tilde, visited);
      double h = 0.0;
      for (int s : visited) h += policy_entropy(pi_table.row(s));
      last_entropy = h / static_cast<double>(visited.size());
    }

    long prev = step;
    step += cfg.batch_size;
    ++iteration;
    if (step / cfg.eval_interval > prev / cfg.eval_interval || step >= cfg.total_steps) {
      Eigen::MatrixXd pi_now = model.policy_table();
      Eigen::MatrixXd pi_tilde_now =
          make_behavior_policy(behavior, model.q_table(), pi_now, &pi_snapshot);
      emit_row(pi_now, pi_tilde_now);
    }
  }
  return out;
}

}  // namespace frl
