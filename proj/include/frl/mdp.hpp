#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace frl {

/// Finite MDP. Transitions are stored per action as row-stochastic
/// state-by-state matrices. Terminal states self-loop with zero reward, so
/// every operator below is total.
struct Mdp {
  int n_states = 0;
  int n_actions = 0;
  std::vector<Eigen::MatrixXd> transition;  // transition[a](s, s')
  Eigen::MatrixXd reward;                   // reward(s, a)
  double gamma = 0.99;
  Eigen::VectorXd rho0;
  std::vector<bool> terminal;

  double p(int s, int a, int s2) const { return transition[a](s, s2); }
  double r(int s, int a) const { return reward(s, a); }

  double max_abs_reward() const { return reward.cwiseAbs().maxCoeff(); }

  void validate() const {
    if (n_states <= 0 || n_actions <= 0)
      throw std::invalid_argument("mdp: empty state or action set");
    if (!(gamma >= 0.0 && gamma < 1.0))
      throw std::invalid_argument("mdp: gamma must lie in [0, 1)");
    if (static_cast<int>(transition.size()) != n_actions)
      throw std::invalid_argument("mdp: transition tensor shape mismatch");
    for (const auto& P : transition) {
      if (P.rows() != n_states || P.cols() != n_states)
        throw std::invalid_argument("mdp: transition tensor shape mismatch");
      for (int s = 0; s < n_states; ++s) {
        if (P.row(s).minCoeff() < -1e-15)
          throw std::invalid_argument("mdp: negative transition probability");
        if (std::abs(P.row(s).sum() - 1.0) > 1e-12)
          throw std::invalid_argument("mdp: transition rows must sum to 1");
      }
    }
    if (reward.rows() != n_states || reward.cols() != n_actions)
      throw std::invalid_argument("mdp: reward table shape mismatch");
    if (rho0.size() != n_states || std::abs(rho0.sum() - 1.0) > 1e-12)
      throw std::invalid_argument("mdp: initial distribution must sum to 1");
    if (static_cast<int>(terminal.size()) != n_states)
      throw std::invalid_argument("mdp: terminal mask shape mismatch");
    for (int s = 0; s < n_states; ++s) {
      if (!terminal[s]) continue;
      for (int a = 0; a < n_actions; ++a)
        if (transition[a](s, s) != 1.0 || reward(s, a) != 0.0)
          throw std::invalid_argument("mdp: terminal states must self-loop with zero reward");
    }
  }
};

/// Stochastic tabular policy; probs(s, a).
struct PolicyTable {
  Eigen::MatrixXd probs;

  int n_states() const { return static_cast<int>(probs.rows()); }
  int n_actions() const { return static_cast<int>(probs.cols()); }

  void validate() const {
    for (int s = 0; s < probs.rows(); ++s) {
      if (probs.row(s).minCoeff() < 0.0)
        throw std::invalid_argument("policy: negative probability");
      if (std::abs(probs.row(s).sum() - 1.0) > 1e-12)
        throw std::invalid_argument("policy: rows must sum to 1");
    }
  }

  static PolicyTable uniform(int n_states, int n_actions) {
    PolicyTable pi;
    pi.probs = Eigen::MatrixXd::Constant(n_states, n_actions, 1.0 / n_actions);
    return pi;
  }
};

struct QTable {
  Eigen::MatrixXd values;  // values(s, a)

  int n_states() const { return static_cast<int>(values.rows()); }
  int n_actions() const { return static_cast<int>(values.cols()); }
};

/// State-transition matrix and expected one-step reward induced by a policy.
inline Eigen::MatrixXd policy_transition_matrix(const Mdp& mdp, const PolicyTable& pi) {
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_states);
  for (int a = 0; a < mdp.n_actions; ++a)
    P += pi.probs.col(a).asDiagonal() * mdp.transition[a];
  return P;
}

/// Q^pi as the solution of the linear Bellman expectation system. Solving
/// for the state values first keeps the system n_states wide; the result is
/// exact to solver precision, which downstream gradient oracles rely on.
inline QTable policy_evaluation_exact(const Mdp& mdp, const PolicyTable& pi) {
  mdp.validate();
  pi.validate();
  const int S = mdp.n_states;
  Eigen::VectorXd r_pi = (pi.probs.array() * mdp.reward.array()).rowwise().sum();
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(S, S) - mdp.gamma * policy_transition_matrix(mdp, pi);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
  if (lu.determinant() == 0.0)
    throw std::runtime_error("policy_evaluation_exact: singular Bellman system");
  Eigen::VectorXd v = lu.solve(r_pi);

  QTable q;
  q.values.resize(S, mdp.n_actions);
  for (int a = 0; a < mdp.n_actions; ++a)
    q.values.col(a) = mdp.reward.col(a) + mdp.gamma * (mdp.transition[a] * v);
  return q;
}

struct ValueIterationResult {
  QTable q;
  int iterations = 0;
  std::vector<double> residuals;  // sup-norm change per sweep
};

/// Synchronous value iteration to sup-norm Bellman residual <= tol.
inline ValueIterationResult value_iteration(const Mdp& mdp, double tol,
                                            int max_sweeps = 1000000) {
  if (!(tol > 0.0)) throw std::invalid_argument("value_iteration: tol must be positive");
  mdp.validate();
  const int S = mdp.n_states, A = mdp.n_actions;
  ValueIterationResult out;
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(S, A);
  Eigen::MatrixXd next(S, A);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    Eigen::VectorXd v = q.rowwise().maxCoeff();
    for (int a = 0; a < A; ++a)
      next.col(a) = mdp.reward.col(a) + mdp.gamma * (mdp.transition[a] * v);
    double residual = (next - q).cwiseAbs().maxCoeff();
    out.residuals.push_back(residual);
    ++out.iterations;
    q = next;
    if (residual <= tol) break;
  }
  out.q.values = q;
  return out;
}

/// Deterministic greedy policy; ties broken toward the lowest action index.
inline PolicyTable greedy_policy(const QTable& q) {
  PolicyTable pi;
  pi.probs = Eigen::MatrixXd::Zero(q.n_states(), q.n_actions());
  for (int s = 0; s < q.n_states(); ++s) {
    int best = 0;
    for (int a = 1; a < q.n_actions(); ++a)
      if (q.values(s, a) > q.values(s, best)) best = a;
    pi.probs(s, best) = 1.0;
  }
  return pi;
}

/// Max over (s, a) of the gap between the expectation backup under the
/// greedy policy of q and the max backup. Zero by construction of the
/// greedy policy, independent of how accurate q is.
inline double greedy_consistency_residual(const Mdp& mdp, const QTable& q_star) {
  if (q_star.n_states() != mdp.n_states || q_star.n_actions() != mdp.n_actions)
    throw std::invalid_argument("greedy_consistency_residual: shape mismatch");
  PolicyTable greedy = greedy_policy(q_star);
  Eigen::VectorXd v_greedy = (greedy.probs.array() * q_star.values.array()).rowwise().sum();
  Eigen::VectorXd v_max = q_star.values.rowwise().maxCoeff();
  double worst = 0.0;
  for (int a = 0; a < mdp.n_actions; ++a) {
    Eigen::VectorXd lhs = mdp.reward.col(a) + mdp.gamma * (mdp.transition[a] * v_greedy);
    Eigen::VectorXd rhs = mdp.reward.col(a) + mdp.gamma * (mdp.transition[a] * v_max);
    worst = std::max(worst, (lhs - rhs).cwiseAbs().maxCoeff());
  }
  return worst;
}

/// Same residual but with the expectation taken under an arbitrary policy;
/// strictly positive whenever the policy disagrees with the greedy one on
/// states that matter.
inline double bellman_consistency_gap(const Mdp& mdp, const QTable& q, const PolicyTable& pi) {
  Eigen::VectorXd v_pi = (pi.probs.array() * q.values.array()).rowwise().sum();
  Eigen::VectorXd v_max = q.values.rowwise().maxCoeff();
  double worst = 0.0;
  for (int a = 0; a < mdp.n_actions; ++a) {
    Eigen::VectorXd diff = mdp.gamma * (mdp.transition[a] * (v_pi - v_max));
    worst = std::max(worst, diff.cwiseAbs().maxCoeff());
  }
  return worst;
}

/// Normalized discounted state occupancy (1 - gamma) * rho0' (I - gamma P_pi)^-1.
inline Eigen::VectorXd discounted_occupancy(const Mdp& mdp, const PolicyTable& pi) {
  Eigen::MatrixXd P = policy_transition_matrix(mdp, pi);
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(mdp.n_states, mdp.n_states) - mdp.gamma * P.transpose();
  Eigen::VectorXd d = A.partialPivLu().solve(Eigen::VectorXd(mdp.rho0));
  return (1.0 - mdp.gamma) * d;
}

/// Expected number of times each state is occupied at a decision point
/// within one episode of at most `horizon` steps (episodes stop on entering
/// a terminal state). Matches the visit counts a step sampler records.
inline Eigen::VectorXd expected_visit_counts(const Mdp& mdp, const PolicyTable& pi, int horizon) {
  Eigen::MatrixXd P = policy_transition_matrix(mdp, pi);
  Eigen::VectorXd mu = mdp.rho0;
  for (int s = 0; s < mdp.n_states; ++s)
    if (mdp.terminal[s]) mu(s) = 0.0;
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(mdp.n_states);
  for (int t = 0; t < horizon; ++t) {
    counts += mu;
    mu = P.transpose() * mu;
    for (int s = 0; s < mdp.n_states; ++s)
      if (mdp.terminal[s]) mu(s) = 0.0;  // entering a terminal state ends the episode
  }
  return counts;
}

struct EnumeratedTrajectory {
  std::vector<int> states;   // horizon + 1 entries
  std::vector<int> actions;  // horizon entries
  double probability = 0.0;
  double discounted_return = 0.0;
};

inline void check_enumeration_guard(const Mdp& mdp, int horizon) {
  double log_paths = horizon * (std::log(static_cast<double>(mdp.n_states)) +
                                std::log(static_cast<double>(mdp.n_actions)));
  if (log_paths > std::log(1e7))
    throw std::length_error("enumerate_trajectories: state-action tree exceeds the 1e7 guard");
}

namespace detail {

inline void enumerate_rec(const Mdp& mdp, const PolicyTable& pi, int horizon,
                          EnumeratedTrajectory& cur, double disc,
                          std::vector<EnumeratedTrajectory>& out) {
  int t = static_cast<int>(cur.actions.size());
  if (t == horizon) {
    out.push_back(cur);
    return;
  }
  int s = cur.states.back();
  for (int a = 0; a < mdp.n_actions; ++a) {
    double pa = pi.probs(s, a);
    if (pa == 0.0) continue;
    for (int s2 = 0; s2 < mdp.n_states; ++s2) {
      double ps = mdp.p(s, a, s2);
      if (ps == 0.0) continue;
      EnumeratedTrajectory next = cur;
      next.actions.push_back(a);
      next.states.push_back(s2);
      next.probability *= pa * ps;
      next.discounted_return += disc * mdp.r(s, a);
      enumerate_rec(mdp, pi, horizon, next, disc * mdp.gamma, out);
    }
  }
}

}  // namespace detail

/// Exhaustive enumeration of all positive-probability trajectories of the
/// given horizon. Probabilities sum to 1; terminal self-loops are walked
/// through explicitly so no mass is lost.
inline std::vector<EnumeratedTrajectory> enumerate_trajectories(const Mdp& mdp,
                                                                const PolicyTable& pi,
                                                                int horizon) {
  if (horizon < 1) throw std::invalid_argument("enumerate_trajectories: horizon must be >= 1");
  check_enumeration_guard(mdp, horizon);
  pi.validate();
  std::vector<EnumeratedTrajectory> out;
  for (int s0 = 0; s0 < mdp.n_states; ++s0) {
    if (mdp.rho0(s0) == 0.0) continue;
    EnumeratedTrajectory cur;
    cur.states.push_back(s0);
    cur.probability = mdp.rho0(s0);
    detail::enumerate_rec(mdp, pi, horizon, cur, 1.0, out);
  }
  return out;
}

/// Enumeration conditioned on a fixed root state-action pair.
inline std::vector<EnumeratedTrajectory> enumerate_from(const Mdp& mdp, const PolicyTable& pi,
                                                        int s0, int a0, int horizon) {
  if (horizon < 1) throw std::invalid_argument("enumerate_from: horizon must be >= 1");
  check_enumeration_guard(mdp, horizon);
  std::vector<EnumeratedTrajectory> out;
  for (int s1 = 0; s1 < mdp.n_states; ++s1) {
    double ps = mdp.p(s0, a0, s1);
    if (ps == 0.0) continue;
    EnumeratedTrajectory cur;
    cur.states = {s0, s1};
    cur.actions = {a0};
    cur.probability = ps;
    cur.discounted_return = mdp.r(s0, a0);
    detail::enumerate_rec(mdp, pi, horizon, cur, mdp.gamma, out);
  }
  return out;
}

// --- plain-text serialization ----------------------------------------------
//
// Header line:  mdp <n_states> <n_actions> <gamma>
// Then one line per (s, a):  <s> <a> <r> <p(s0)> ... <p(S-1)>
//
// The loader infers the terminal mask (zero-reward self-loop under every
// action) and uses a uniform initial distribution.

inline void save_mdp(const Mdp& mdp, std::ostream& os) {
  os.precision(17);
  os << "mdp " << mdp.n_states << ' ' << mdp.n_actions << ' ' << mdp.gamma << '\n';
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) {
      os << s << ' ' << a << ' ' << mdp.r(s, a);
      for (int s2 = 0; s2 < mdp.n_states; ++s2) os << ' ' << mdp.p(s, a, s2);
      os << '\n';
    }
}

inline Mdp load_mdp(std::istream& is) {
  std::string tag;
  Mdp mdp;
  if (!(is >> tag) || tag != "mdp")
    throw std::invalid_argument("load_mdp: missing 'mdp' header");
  if (!(is >> mdp.n_states >> mdp.n_actions >> mdp.gamma))
    throw std::invalid_argument("load_mdp: malformed header");
  if (mdp.n_states <= 0 || mdp.n_actions <= 0)
    throw std::invalid_argument("load_mdp: bad dimensions");
  mdp.transition.assign(mdp.n_actions, Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_states));
  mdp.reward = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_actions);
  for (int line = 0; line < mdp.n_states * mdp.n_actions; ++line) {
    int s, a;
    if (!(is >> s >> a))
      throw std::invalid_argument("load_mdp: truncated at row " + std::to_string(line + 2));
    if (s < 0 || s >= mdp.n_states || a < 0 || a >= mdp.n_actions)
      throw std::invalid_argument("load_mdp: state or action id out of range at row " +
                                  std::to_string(line + 2));
    if (!(is >> mdp.reward(s, a)))
      throw std::invalid_argument("load_mdp: malformed reward at row " + std::to_string(line + 2));
    for (int s2 = 0; s2 < mdp.n_states; ++s2)
      if (!(is >> mdp.transition[a](s, s2)))
        throw std::invalid_argument("load_mdp: malformed probabilities at row " +
                                    std::to_string(line + 2));
  }
  mdp.rho0 = Eigen::VectorXd::Constant(mdp.n_states, 1.0 / mdp.n_states);
  mdp.terminal.assign(mdp.n_states, false);
  for (int s = 0; s < mdp.n_states; ++s) {
    bool term = true;
    for (int a = 0; a < mdp.n_actions && term; ++a)
      term = mdp.transition[a](s, s) == 1.0 && mdp.reward(s, a) == 0.0;
    mdp.terminal[s] = term;
  }
  mdp.validate();
  return mdp;
}

}  // namespace frl
