#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "frl/convex.hpp"
#include "frl/envs.hpp"

namespace frl {

/// One line of the training log CSV.
struct MetricsRow {
  long step = 0;
  long episodes_completed = 0;
  double mean_return = 0.0;
  double loss_value = 0.0;
  double saddle_objective = 0.0;
  double fdiv_estimate = 0.0;
  double policy_grad_norm = 0.0;
  double q_grad_norm = 0.0;
  double policy_entropy = 0.0;
  long wall_clock_ms = 0;
};

inline const char* metrics_csv_header() {
  return "step,episodes_completed,mean_return,loss_value,saddle_objective,"
         "fdiv_estimate,policy_grad_norm,q_grad_norm,policy_entropy,wall_clock_ms";
}

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string metrics_csv_row(const MetricsRow& row) {
  std::string out;
  out += std::to_string(row.step);
  out += ',';
  out += std::to_string(row.episodes_completed);
  for (double x : {row.mean_return, row.loss_value, row.saddle_objective, row.fdiv_estimate,
                   row.policy_grad_norm, row.q_grad_norm, row.policy_entropy}) {
    out += ',';
    out += format_double(x);
  }
  out += ',';
  out += std::to_string(row.wall_clock_ms);
  return out;
}

/// Gap between the policy/value inner product and the recorded Monte-Carlo
/// value: mean over all visits in complete episodes of
///   sum_a pi(a|s_t) Q(s_t, a)  -  sum_{i>=t} gamma^(i-t) r_i.
/// Positive values flag overestimation. Episodes cut by the horizon are
/// skipped because their recorded reward tails are incomplete.
inline double loss_value(const TrajectoryBatch& batch, double gamma,
                         const Eigen::MatrixXd& pi, const Eigen::MatrixXd& q) {
  if (batch.episodes.empty()) throw std::invalid_argument("loss_value: empty batch");
  double total = 0.0;
  long visits = 0;
  for (const auto& ep : batch.episodes) {
    if (ep.truncated || ep.transitions.empty()) continue;
    const int T = static_cast<int>(ep.transitions.size());
    double tail = 0.0;
    std::vector<double> true_value(T);
    for (int t = T - 1; t >= 0; --t) {
      tail = ep.transitions[t].reward + gamma * tail;
      true_value[t] = tail;
    }
    for (int t = 0; t < T; ++t) {
      int s = ep.transitions[t].state;
      total += pi.row(s).dot(q.row(s)) - true_value[t];
      ++visits;
    }
  }
  if (visits == 0) throw std::invalid_argument("loss_value: no complete episodes in batch");
  return total / static_cast<double>(visits);
}

/// Mean chi-square-type divergence between the two policies' action
/// distributions over the visited states.
inline double fdiv_track(const Eigen::MatrixXd& pi, const Eigen::MatrixXd& pi_tilde,
                         const std::vector<int>& visited_states) {
  if (visited_states.empty()) throw std::invalid_argument("fdiv_track: no visited states");
  static const ConvexFunction quad = ConvexFunction::quadratic_shifted();
  double total = 0.0;
  for (int s : visited_states) {
    DiscreteDistributionPair pair;
    pair.p.assign(pi.row(s).begin(), pi.row(s).end());
    pair.q.assign(pi_tilde.row(s).begin(), pi_tilde.row(s).end());
    // softmax rows carry float rounding; renormalize to the pair contract
    double sp = 0.0, sq = 0.0;
    for (double v : pair.p) sp += v;
    for (double v : pair.q) sq += v;
    for (auto& v : pair.p) v /= sp;
    for (auto& v : pair.q) v /= sq;
    total += fdiv_direct(quad, pair);
  }
  return total / static_cast<double>(visited_states.size());
}

inline double policy_entropy(const Eigen::VectorXd& probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

}  // namespace frl
