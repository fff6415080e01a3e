#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "frl/frl_core.hpp"
#include "frl/metrics.hpp"

namespace frl {

/// Machine-readable result of one checker, serialized as a single
/// key=value line for run logs.
struct CheckReport {
  std::string name;
  bool pass = false;
  std::vector<std::pair<std::string, double>> stats;

  std::string line() const {
    std::ostringstream os;
    os << "check=" << name << " pass=" << (pass ? 1 : 0);
    os.precision(6);
    for (const auto& [k, v] : stats) os << ' ' << k << '=' << v;
    return os.str();
  }
};

// --- policy-evaluation gradient check -----------------------------------------

/// Compares the full-differentiation policy-evaluation gradient against
/// central finite differences of the empirical saddle objective over the
/// value parameters, on freshly sampled paired batches. `use_mlp` switches
/// between the tabular and perceptron parameterizations.
inline CheckReport policy_evaluation_gradcheck(const Mdp& mdp, long seed, bool use_mlp,
                                      int n_trials = 20, double threshold = 1e-5) {
  const int S = mdp.n_states, A = mdp.n_actions;
  Rng rng(static_cast<std::uint64_t>(seed), use_mlp ? 51 : 50);
  double worst = 0.0;

  for (int trial = 0; trial < n_trials; ++trial) {
    std::unique_ptr<PolicyValueModel> model;
    if (use_mlp) {
      // redraw until every hidden unit sits clear of its ReLU kink at every
      // state, otherwise the central differences below are not trustworthy
      for (int attempt = 0; attempt < 200; ++attempt) {
        auto candidate = std::make_unique<MlpModel>(S, A, std::vector<int>{16, 16}, rng);
        for (int i = 0; i < candidate->n_params(); ++i)
          candidate->params()(i) += rng.uniform(-0.05, 0.05);
        double closest = std::numeric_limits<double>::infinity();
        for (int s = 0; s < S; ++s)
          closest = std::min(closest, candidate->net().forward(s).kink_distance());
        if (closest > 1e-3) {
          model = std::move(candidate);
          break;
        }
      }
      if (!model)
        throw std::runtime_error("policy_evaluation_gradcheck: no kink-free draw found");
    } else {
      model = std::make_unique<TabularModel>(S, A);
      for (int i = 0; i < model->n_params(); ++i) model->params()(i) = rng.uniform(-0.5, 0.5);
    }
    Eigen::MatrixXd pi = model->policy_table();
    Eigen::MatrixXd q = model->q_table();

    Eigen::MatrixXd pi_tilde(S, A);
    for (int s = 0; s < S; ++s) {
      double total = 0.0;
      for (int a = 0; a < A; ++a) {
        pi_tilde(s, a) = rng.uniform(0.05, 1.0);
        total += pi_tilde(s, a);
      }
      pi_tilde.row(s) /= total;
    }

    RolloutCursor cursor;
    PairedBatch batch = collect_paired_batch(mdp, pi, pi_tilde, 8, 3, 50, rng, cursor);

    Eigen::VectorXd analytic = q_gradient(batch, *model, pi, q, QGradMode::FullDifferentiation);
    auto clone = model->clone();
    Eigen::VectorXd numeric = model->zero_grad();
    Eigen::VectorXd p = model->params();
    const double step = 1e-5;
    for (int i : model->value_param_indices()) {
      double keep = p(i);
      p(i) = keep + step;
      clone->params() = p;
      double hi = saddle_objective(batch, [&](int s) { return clone->q_row(s); }, pi);
      p(i) = keep - step;
      clone->params() = p;
      double lo = saddle_objective(batch, [&](int s) { return clone->q_row(s); }, pi);
      p(i) = keep;
      numeric(i) = (hi - lo) / (2.0 * step);
    }
    double rel = (analytic - numeric).norm() / std::max(numeric.norm(), 1e-12);
    worst = std::max(worst, rel);
  }

  CheckReport report;
  report.name = use_mlp ? "policy_evaluation_gradcheck_mlp" : "policy_evaluation_gradcheck_tabular";
  report.pass = worst < threshold;
  report.stats = {{"max_rel_err", worst}, {"threshold", threshold},
                  {"trials", static_cast<double>(n_trials)}};
  return report;
}

// --- policy-improvement estimator check ----------------------------------------

namespace detail {

/// Exact fixed-policy n-step target table
///   T(s,a) = E[ sum_{k<n} gamma^k r_k + gamma^n sum_b pi(b|s_n) Q(s_n,b) | s,a ]
/// by exhaustive trajectory enumeration under the frozen policy.
inline Eigen::MatrixXd exact_nstep_target(const Mdp& mdp, const Eigen::MatrixXd& pi_frozen,
                                          const Eigen::MatrixXd& q, int n_step) {
  PolicyTable frozen;
  frozen.probs = pi_frozen;
  Eigen::VectorXd bootstrap(mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s) bootstrap(s) = pi_frozen.row(s).dot(q.row(s));
  const double disc = std::pow(mdp.gamma, n_step);

  Eigen::MatrixXd target(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) {
      double acc = 0.0;
      for (const auto& traj : enumerate_from(mdp, frozen, s, a, n_step))
        acc += traj.probability * (traj.discounted_return + disc * bootstrap(traj.states.back()));
      target(s, a) = acc;
    }
  return target;
}

}  // namespace detail

/// Statistical unbiasedness check of the policy-improvement estimator with a
/// frozen value table. The estimator draws a root action from the learning
/// policy and an n-step target along it; its expectation must match, to
/// sampling error, the finite-difference gradient of
///   F(theta) = E_{s ~ rho0, a ~ pi_theta}[ Q(s,a) - T(s,a) ]
/// where the target table T is held at the base point (the target is data,
/// not a function of theta). Reports the largest |z| over policy
/// coordinates.
inline CheckReport policy_improvement_estimator_check_at(const Mdp& mdp, const Eigen::MatrixXd& theta,
                                               const Eigen::MatrixXd& q, int horizon,
                                               long n_samples, long seed,
                                               double z_threshold = 3.0) {
  const int S = mdp.n_states, A = mdp.n_actions;
  check_enumeration_guard(mdp, horizon);
  Rng rng(static_cast<std::uint64_t>(seed), 41);

  auto policy_of = [&](const Eigen::MatrixXd& th) {
    Eigen::MatrixXd pi(S, A);
    for (int s = 0; s < S; ++s) pi.row(s) = softmax(th.row(s)).transpose();
    return pi;
  };
  Eigen::MatrixXd pi0 = policy_of(theta);
  Eigen::MatrixXd target = detail::exact_nstep_target(mdp, pi0, q, horizon);

  // exact gradient by central differences over the policy logits
  const double step = 1e-6;
  Eigen::MatrixXd exact(S, A);
  auto F = [&](const Eigen::MatrixXd& th) {
    Eigen::MatrixXd pi = policy_of(th);
    double acc = 0.0;
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) acc += mdp.rho0(s) * pi(s, a) * (q(s, a) - target(s, a));
    return acc;
  };
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      Eigen::MatrixXd th = theta;
      th(s, a) = theta(s, a) + step;
      double hi = F(th);
      th(s, a) = theta(s, a) - step;
      double lo = F(th);
      exact(s, a) = (hi - lo) / (2.0 * step);
    }

  // Monte-Carlo mean of the estimator. The lookahead walks terminal
  // self-loops like the enumeration does, so both sides weight the
  // bootstrap identically.
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(S, A);
  Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(S, A);
  Eigen::MatrixXd sample = Eigen::MatrixXd::Zero(S, A);
  for (long i = 0; i < n_samples; ++i) {
    int s0 = sample_initial_state(mdp, rng);
    int a0 = sample_categorical_row(pi0, s0, rng);
    double acc = 0.0, disc = 1.0;
    int s = s0, a = a0;
    for (int k = 0; k < horizon; ++k) {
      Transition tr = branch_step(mdp, s, a, rng);
      acc += disc * tr.reward;
      disc *= mdp.gamma;
      s = tr.next_state;
      if (k + 1 < horizon) a = sample_categorical_row(pi0, s, rng);
    }
    acc += disc * pi0.row(s).dot(q.row(s));
    double coeff = q(s0, a0) - acc;

    sample.setZero();
    sample.row(s0) = -coeff * pi0.row(s0);
    sample(s0, a0) += coeff;
    Eigen::MatrixXd delta = sample - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta.cwiseProduct(sample - mean);
  }

  double zmax = 0.0;
  double worst_abs = 0.0;
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      double var = m2(s, a) / static_cast<double>(n_samples - 1);
      double se = std::sqrt(var / static_cast<double>(n_samples));
      double diff = mean(s, a) - exact(s, a);
      if (se < 1e-12) {
        worst_abs = std::max(worst_abs, std::abs(diff));
      } else {
        zmax = std::max(zmax, std::abs(diff) / se);
      }
    }

  CheckReport report;
  report.name = "policy_improvement_estimator";
  report.pass = zmax <= z_threshold && worst_abs <= 1e-9;
  report.stats = {{"max_abs_z", zmax},
                  {"degenerate_abs_err", worst_abs},
                  {"samples", static_cast<double>(n_samples)},
                  {"horizon", static_cast<double>(horizon)}};
  return report;
}

/// Same check at randomly drawn policy logits and value table.
inline CheckReport policy_improvement_estimator_check(const Mdp& mdp, int horizon, long n_samples,
                                            long seed, double z_threshold = 3.0) {
  Rng rng(static_cast<std::uint64_t>(seed), 40);
  Eigen::MatrixXd theta(mdp.n_states, mdp.n_actions), q(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) {
      theta(s, a) = rng.uniform(-1.0, 1.0);
      q(s, a) = rng.uniform(-1.0, 1.0);
    }
  return policy_improvement_estimator_check_at(mdp, theta, q, horizon, n_samples, seed, z_threshold);
}

// --- squared-gap return substitution check --------------------------------------

struct ReturnSubstitutionReport {
  double lhs = 0.0;       // E[(Q - R)^2] by trajectory enumeration
  double rhs = 0.0;       // E[(Q - Q_H)^2] with the exact truncated value table
  double gap = 0.0;       // lhs - rhs
  double variance = 0.0;  // enumerated E[Var(R | s, a)]
};

/// Both sides of the squared-gap identity at the root state-action measure
/// (rho0 x sampling policy), horizon-truncated. The identity is exact only
/// when the return given (s, a) is deterministic; in general the gap equals
/// the mean conditional return variance, which is reported, not asserted
/// away.
inline ReturnSubstitutionReport return_substitution_check(const Mdp& mdp,
                                                                   const PolicyTable& pi_tilde,
                                                                   const Eigen::MatrixXd& q,
                                                                   int horizon) {
  check_enumeration_guard(mdp, horizon);
  pi_tilde.validate();

  // exact horizon-truncated value table under the sampling policy
  Eigen::MatrixXd q_h = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_actions);
  for (int k = 0; k < horizon; ++k) {
    Eigen::VectorXd v = (pi_tilde.probs.array() * q_h.array()).rowwise().sum();
    for (int a = 0; a < mdp.n_actions; ++a)
      q_h.col(a) = mdp.reward.col(a) + mdp.gamma * (mdp.transition[a] * v);
  }

  ReturnSubstitutionReport out;
  for (int s0 = 0; s0 < mdp.n_states; ++s0) {
    if (mdp.rho0(s0) == 0.0) continue;
    for (int a0 = 0; a0 < mdp.n_actions; ++a0) {
      double w = mdp.rho0(s0) * pi_tilde.probs(s0, a0);
      if (w == 0.0) continue;
      double e_r = 0.0, e_r2 = 0.0, e_sq = 0.0;
      for (const auto& traj : enumerate_from(mdp, pi_tilde, s0, a0, horizon)) {
        double r = traj.discounted_return;
        double diff = q(s0, a0) - r;
        e_r += traj.probability * r;
        e_r2 += traj.probability * r * r;
        e_sq += traj.probability * diff * diff;
      }
      out.lhs += w * e_sq;
      double mean_gap = q(s0, a0) - q_h(s0, a0);
      out.rhs += w * mean_gap * mean_gap;
      out.variance += w * (e_r2 - e_r * e_r);
    }
  }
  out.gap = out.lhs - out.rhs;
  return out;
}

}  // namespace frl
