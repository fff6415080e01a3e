#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "frl/mdp.hpp"
#include "frl/rng.hpp"

namespace frl {

enum class EnvKind { Gridworld, ChainMdp, CliffWalk };

/// Desk-scale environment descriptions. Every environment is realized as an
/// exact tabular Mdp, so the linear-algebra solvers apply to all of them and
/// sampled quantities always have closed-form oracles.
struct EnvSpec {
  EnvKind kind = EnvKind::Gridworld;
  int width = 5;    // grid columns (Gridworld / CliffWalk)
  int height = 5;   // grid rows
  int length = 10;  // ChainMdp cells before the goal
  double slip_prob = 0.0;
  double gamma = 0.99;
  int max_episode_steps = 100;

  static EnvSpec gridworld(int w, int h, double slip = 0.0) {
    EnvSpec s;
    s.kind = EnvKind::Gridworld;
    s.width = w;
    s.height = h;
    s.slip_prob = slip;
    return s;
  }
  static EnvSpec chain(int length) {
    EnvSpec s;
    s.kind = EnvKind::ChainMdp;
    s.length = length;
    return s;
  }
  static EnvSpec cliffwalk() {
    EnvSpec s;
    s.kind = EnvKind::CliffWalk;
    s.width = 12;
    s.height = 4;
    s.max_episode_steps = 200;
    return s;
  }
};

namespace detail {

// Grid actions: 0 = up, 1 = down, 2 = left, 3 = right. Moves off the grid
// bounce back onto the same cell.
inline int grid_move(int s, int a, int width, int height) {
  static constexpr int dr[4] = {-1, 1, 0, 0};
  static constexpr int dc[4] = {0, 0, -1, 1};
  int row = s / width, col = s % width;
  int nr = row + dr[a], nc = col + dc[a];
  if (nr < 0 || nr >= height || nc < 0 || nc >= width) return s;
  return nr * width + nc;
}

// With slip, the commanded move happens with probability 1 - slip and each
// perpendicular move with slip / 2.
inline void grid_outcomes(int s, int a, double slip, int width, int height,
                          std::vector<std::pair<int, double>>& out) {
  out.clear();
  out.emplace_back(grid_move(s, a, width, height), 1.0 - slip);
  if (slip > 0.0) {
    int perp0 = a < 2 ? 2 : 0;
    out.emplace_back(grid_move(s, perp0, width, height), slip / 2.0);
    out.emplace_back(grid_move(s, perp0 + 1, width, height), slip / 2.0);
  }
}

}  // namespace detail

/// Exact tabular realization of an EnvSpec.
///
/// Gridworld: width x height cells, start at the top-left corner, terminal
/// goal at the bottom-right; reward 1 on any transition that lands on the
/// goal, 0 otherwise.
///
/// ChainMdp: cells 0..length-1 plus a terminal goal; moving right from the
/// last cell enters the goal with reward 1, every other step pays 0, so a
/// length-L chain emits the reward sequence (0, ..., 0, 1) over L steps.
///
/// CliffWalk: width x height grid, start bottom-left, terminal goal
/// bottom-right, cliff cells between them on the bottom row. Every step
/// pays -1 except a step into the cliff, which pays -100 and teleports back
/// to the start.
inline Mdp build_mdp(const EnvSpec& spec) {
  Mdp mdp;
  mdp.gamma = spec.gamma;
  switch (spec.kind) {
    case EnvKind::Gridworld: {
      if (spec.width < 2 || spec.height < 1 || (spec.width * spec.height) < 2)
        throw std::invalid_argument("build_mdp: gridworld needs at least two cells");
      if (!(spec.slip_prob >= 0.0 && spec.slip_prob < 1.0))
        throw std::invalid_argument("build_mdp: slip_prob must lie in [0, 1)");
      const int S = spec.width * spec.height;
      const int goal = S - 1;
      mdp.n_states = S;
      mdp.n_actions = 4;
      mdp.transition.assign(4, Eigen::MatrixXd::Zero(S, S));
      mdp.reward = Eigen::MatrixXd::Zero(S, 4);
      mdp.terminal.assign(S, false);
      mdp.terminal[goal] = true;
      std::vector<std::pair<int, double>> outcomes;
      for (int s = 0; s < S; ++s) {
        for (int a = 0; a < 4; ++a) {
          if (s == goal) {
            mdp.transition[a](s, s) = 1.0;
            continue;
          }
          detail::grid_outcomes(s, a, spec.slip_prob, spec.width, spec.height, outcomes);
          for (auto [s2, prob] : outcomes) {
            mdp.transition[a](s, s2) += prob;
            if (s2 == goal) mdp.reward(s, a) += prob;  // expected goal-entry reward
          }
        }
      }
      mdp.rho0 = Eigen::VectorXd::Zero(S);
      mdp.rho0(0) = 1.0;
      break;
    }
    case EnvKind::ChainMdp: {
      if (spec.length < 1) throw std::invalid_argument("build_mdp: chain needs length >= 1");
      const int S = spec.length + 1;  // cells plus terminal goal
      const int goal = S - 1;
      mdp.n_states = S;
      mdp.n_actions = 2;  // 0 = left, 1 = right
      mdp.transition.assign(2, Eigen::MatrixXd::Zero(S, S));
      mdp.reward = Eigen::MatrixXd::Zero(S, 2);
      mdp.terminal.assign(S, false);
      mdp.terminal[goal] = true;
      for (int s = 0; s < goal; ++s) {
        mdp.transition[0](s, std::max(s - 1, 0)) = 1.0;
        mdp.transition[1](s, s + 1) = 1.0;
        if (s + 1 == goal) mdp.reward(s, 1) = 1.0;
      }
      mdp.transition[0](goal, goal) = 1.0;
      mdp.transition[1](goal, goal) = 1.0;
      mdp.rho0 = Eigen::VectorXd::Zero(S);
      mdp.rho0(0) = 1.0;
      break;
    }
    case EnvKind::CliffWalk: {
      if (spec.width < 3 || spec.height < 2)
        throw std::invalid_argument("build_mdp: cliffwalk needs at least a 3x2 grid");
      const int S = spec.width * spec.height;
      const int start = (spec.height - 1) * spec.width;
      const int goal = S - 1;
      auto is_cliff = [&](int s) {
        return s > start && s < goal && s / spec.width == spec.height - 1;
      };
      mdp.n_states = S;
      mdp.n_actions = 4;
      mdp.transition.assign(4, Eigen::MatrixXd::Zero(S, S));
      mdp.reward = Eigen::MatrixXd::Zero(S, 4);
      mdp.terminal.assign(S, false);
      mdp.terminal[goal] = true;
      std::vector<std::pair<int, double>> outcomes;
      for (int s = 0; s < S; ++s) {
        for (int a = 0; a < 4; ++a) {
          if (s == goal) {
            mdp.transition[a](s, s) = 1.0;
            continue;
          }
          detail::grid_outcomes(s, a, spec.slip_prob, spec.width, spec.height, outcomes);
          for (auto [s2, prob] : outcomes) {
            if (is_cliff(s2)) {
              mdp.transition[a](s, start) += prob;
              mdp.reward(s, a) += -100.0 * prob;
            } else {
              mdp.transition[a](s, s2) += prob;
              mdp.reward(s, a) += -1.0 * prob;
            }
          }
        }
      }
      mdp.rho0 = Eigen::VectorXd::Zero(S);
      mdp.rho0(start) = 1.0;
      break;
    }
  }
  mdp.validate();
  return mdp;
}

struct Transition {
  int state = 0;
  int action = 0;
  double reward = 0.0;
  int next_state = 0;
  bool done = false;
};

struct Episode {
  std::vector<Transition> transitions;
  bool truncated = false;  // hit the horizon without entering a terminal state
};

/// Episode-grouped transitions plus per-transition discounted returns
/// (filled in by discounted_returns).
struct TrajectoryBatch {
  std::vector<Episode> episodes;
  std::vector<double> returns;  // one entry per transition, episode-major

  int n_transitions() const {
    int n = 0;
    for (const auto& ep : episodes) n += static_cast<int>(ep.transitions.size());
    return n;
  }
};

/// One environment step from an arbitrary state. This is the branch
/// capability: paired sampling in the trainer re-steps the simulator from
/// states of an existing rollout.
inline Transition branch_step(const Mdp& mdp, int state, int action, Rng& rng) {
  if (state < 0 || state >= mdp.n_states || action < 0 || action >= mdp.n_actions)
    throw std::invalid_argument("branch_step: state or action id out of range");
  const Eigen::MatrixXd& P = mdp.transition[action];
  double u = rng.uniform();
  double acc = 0.0;
  int next = mdp.n_states - 1;
  for (int s2 = 0; s2 < mdp.n_states; ++s2) {
    acc += P(state, s2);
    if (u < acc) {
      next = s2;
      break;
    }
  }
  return Transition{state, action, mdp.r(state, action), next, mdp.terminal[next]};
}

using PolicyFn = std::function<Eigen::VectorXd(int state)>;

/// Inverse-CDF draw over one row of a probability matrix. Matrix rows are
/// not contiguous in memory, so this walks the row explicitly.
inline int sample_categorical_row(const Eigen::MatrixXd& probs, int row, Rng& rng) {
  double u = rng.uniform() * probs.row(row).sum();
  double acc = 0.0;
  for (int a = 0; a + 1 < probs.cols(); ++a) {
    acc += probs(row, a);
    if (u < acc) return a;
  }
  return static_cast<int>(probs.cols()) - 1;
}

inline PolicyFn policy_fn_from_table(const PolicyTable& pi) {
  return [probs = pi.probs](int s) { return Eigen::VectorXd(probs.row(s)); };
}

inline int sample_initial_state(const Mdp& mdp, Rng& rng) {
  double u = rng.uniform();
  double acc = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    acc += mdp.rho0(s);
    if (u < acc) return s;
  }
  return mdp.n_states - 1;
}

/// Collects whole episodes from rho0 under the policy until at least
/// n_transitions transitions are recorded; the final episode always runs to
/// its natural end (terminal entry or the horizon).
inline TrajectoryBatch sample_trajectories(const Mdp& mdp, const PolicyFn& policy,
                                           int n_transitions, int horizon, Rng& rng) {
  if (horizon < 1) throw std::invalid_argument("sample_trajectories: horizon must be >= 1");
  if (n_transitions < 1)
    throw std::invalid_argument("sample_trajectories: need at least one transition");
  TrajectoryBatch batch;
  int collected = 0;
  while (collected < n_transitions) {
    Episode ep;
    int s = sample_initial_state(mdp, rng);
    for (int t = 0; t < horizon; ++t) {
      Eigen::VectorXd probs = policy(s);
      int a = rng.categorical({probs.data(), static_cast<std::size_t>(probs.size())});
      Transition tr = branch_step(mdp, s, a, rng);
      ep.transitions.push_back(tr);
      ++collected;
      if (tr.done) break;
      s = tr.next_state;
    }
    ep.truncated = !ep.transitions.empty() && !ep.transitions.back().done;
    batch.episodes.push_back(std::move(ep));
  }
  return batch;
}

inline TrajectoryBatch sample_trajectories(const Mdp& mdp, const PolicyTable& pi,
                                           int n_transitions, int horizon, Rng& rng) {
  return sample_trajectories(mdp, policy_fn_from_table(pi), n_transitions, horizon, rng);
}

using StateValueFn = std::function<double(int state)>;

/// Backward recursion R_t = r_t + gamma * R_{t+1} per episode. Episodes cut
/// by the horizon bootstrap their tail with `tail_value` evaluated at the
/// state after the last transition; terminal endings use a zero tail.
inline std::vector<double> discounted_returns(const TrajectoryBatch& batch, double gamma,
                                              const StateValueFn& tail_value = nullptr) {
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw std::invalid_argument("discounted_returns: gamma must lie in [0, 1)");
  std::vector<double> out;
  out.resize(batch.n_transitions());
  int base = 0;
  for (const auto& ep : batch.episodes) {
    const int T = static_cast<int>(ep.transitions.size());
    double tail = 0.0;
    if (ep.truncated && tail_value) tail = tail_value(ep.transitions.back().next_state);
    for (int t = T - 1; t >= 0; --t) {
      tail = ep.transitions[t].reward + gamma * tail;
      out[base + t] = tail;
    }
    base += T;
  }
  return out;
}

inline TrajectoryBatch sampled_batch_with_returns(const Mdp& mdp, const PolicyFn& policy,
                                                  int n_transitions, int horizon, Rng& rng,
                                                  const StateValueFn& tail_value = nullptr) {
  TrajectoryBatch batch = sample_trajectories(mdp, policy, n_transitions, horizon, rng);
  batch.returns = discounted_returns(batch, mdp.gamma, tail_value);
  return batch;
}

}  // namespace frl
