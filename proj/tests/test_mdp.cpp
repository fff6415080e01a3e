#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <queue>
#include <sstream>

#include "frl/envs.hpp"
#include "frl/mdp.hpp"
#include "frl/rng.hpp"

using namespace frl;

namespace {

Mdp random_mdp(int S, int A, double gamma, Rng& rng) {
  Mdp mdp;
  mdp.n_states = S;
  mdp.n_actions = A;
  mdp.gamma = gamma;
  mdp.transition.assign(A, Eigen::MatrixXd::Zero(S, S));
  mdp.reward.resize(S, A);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      double total = 0.0;
      for (int s2 = 0; s2 < S; ++s2) {
        double w = rng.uniform(0.05, 1.0);
        mdp.transition[a](s, s2) = w;
        total += w;
      }
      mdp.transition[a].row(s) /= total;
      // exact renormalization so validate() passes at 1e-12
      mdp.transition[a](s, S - 1) += 1.0 - mdp.transition[a].row(s).sum();
      mdp.reward(s, a) = rng.uniform(-1.0, 1.0);
    }
  mdp.rho0 = Eigen::VectorXd::Constant(S, 1.0 / S);
  mdp.rho0(S - 1) += 1.0 - mdp.rho0.sum();
  mdp.terminal.assign(S, false);
  mdp.validate();
  return mdp;
}

// Independent oracle: fixed-point iteration of the Bellman expectation
// backup, run to sup-norm change below tol.
Eigen::MatrixXd power_iteration_q(const Mdp& mdp, const PolicyTable& pi, double tol) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_actions);
  for (int it = 0; it < 2000000; ++it) {
    Eigen::VectorXd v = (pi.probs.array() * q.array()).rowwise().sum();
    Eigen::MatrixXd next(mdp.n_states, mdp.n_actions);
    for (int a = 0; a < mdp.n_actions; ++a)
      next.col(a) = mdp.reward.col(a) + mdp.gamma * (mdp.transition[a] * v);
    double change = (next - q).cwiseAbs().maxCoeff();
    q = next;
    if (change < tol) break;
  }
  return q;
}

double bellman_expectation_residual(const Mdp& mdp, const PolicyTable& pi, const QTable& q) {
  Eigen::VectorXd v = (pi.probs.array() * q.values.array()).rowwise().sum();
  double worst = 0.0;
  for (int a = 0; a < mdp.n_actions; ++a) {
    Eigen::VectorXd rhs = mdp.reward.col(a) + mdp.gamma * (mdp.transition[a] * v);
    worst = std::max(worst, (q.values.col(a) - rhs).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace

TEST_CASE("policy evaluation: single self-loop state is a geometric series") {
  Mdp mdp;
  mdp.n_states = 1;
  mdp.n_actions = 1;
  mdp.gamma = 0.9;
  mdp.transition = {Eigen::MatrixXd::Ones(1, 1)};
  mdp.reward = Eigen::MatrixXd::Ones(1, 1);
  mdp.rho0 = Eigen::VectorXd::Ones(1);
  mdp.terminal = {false};
  auto q = policy_evaluation_exact(mdp, PolicyTable::uniform(1, 1));
  CHECK(q.values(0, 0) == Catch::Approx(10.0).margin(1e-10));
}

TEST_CASE("policy evaluation: gamma = 0 returns the reward table") {
  Rng rng(11);
  Mdp mdp = random_mdp(4, 3, 0.0, rng);
  auto q = policy_evaluation_exact(mdp, PolicyTable::uniform(4, 3));
  CHECK((q.values - mdp.reward).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("policy evaluation: two-state chain with rewarding absorber") {
  // state 1 absorbs with reward 1 under both actions; state 0 pays 0.
  Mdp mdp;
  mdp.n_states = 2;
  mdp.n_actions = 2;
  mdp.gamma = 0.5;
  mdp.transition.assign(2, Eigen::MatrixXd::Zero(2, 2));
  mdp.transition[0](0, 0) = 1.0;  // left stays
  mdp.transition[1](0, 1) = 1.0;  // right advances
  mdp.transition[0](1, 1) = 1.0;
  mdp.transition[1](1, 1) = 1.0;
  mdp.reward = Eigen::MatrixXd::Zero(2, 2);
  mdp.reward(1, 0) = 1.0;
  mdp.reward(1, 1) = 1.0;
  mdp.rho0 = Eigen::VectorXd::Zero(2);
  mdp.rho0(0) = 1.0;
  mdp.terminal = {false, false};

  auto pi = PolicyTable::uniform(2, 2);
  auto q = policy_evaluation_exact(mdp, pi);
  Eigen::MatrixXd oracle = power_iteration_q(mdp, pi, 1e-13);
  CHECK((q.values - oracle).cwiseAbs().maxCoeff() < 1e-11);
  CHECK(bellman_expectation_residual(mdp, pi, q) < 1e-10);
}

TEST_CASE("policy evaluation: residual and value bound on random mdps") {
  Rng rng(202);
  for (int trial = 0; trial < 20; ++trial) {
    Mdp mdp = random_mdp(2 + rng.uniform_int(6), 2 + rng.uniform_int(3), 0.95, rng);
    PolicyTable pi = PolicyTable::uniform(mdp.n_states, mdp.n_actions);
    auto q = policy_evaluation_exact(mdp, pi);
    CHECK(bellman_expectation_residual(mdp, pi, q) < 1e-10);
    CHECK(q.values.cwiseAbs().maxCoeff() <= mdp.max_abs_reward() / (1.0 - mdp.gamma) + 1e-9);
  }
}

TEST_CASE("value iteration: gamma = 0 gives the reward table in one sweep") {
  Rng rng(3);
  Mdp mdp = random_mdp(5, 2, 0.0, rng);
  auto res = value_iteration(mdp, 1e-12);
  CHECK((res.q.values - mdp.reward).cwiseAbs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(value_iteration(mdp, 0.0), std::invalid_argument);
}

TEST_CASE("value iteration: 3x3 gridworld matches the shortest-path oracle") {
  Mdp mdp = build_mdp(EnvSpec::gridworld(3, 3));
  mdp.gamma = 0.9;
  auto res = value_iteration(mdp, 1e-12);

  // BFS distances to the goal over deterministic moves.
  const int W = 3, S = 9, goal = 8;
  std::vector<int> dist(S, -1);
  std::queue<int> frontier;
  dist[goal] = 0;
  frontier.push(goal);
  while (!frontier.empty()) {
    int s = frontier.front();
    frontier.pop();
    for (int s2 = 0; s2 < S; ++s2)
      for (int a = 0; a < 4; ++a)
        if (detail::grid_move(s2, a, W, 3) == s && dist[s2] < 0 && s2 != goal) {
          dist[s2] = dist[s] + 1;
          frontier.push(s2);
        }
  }
  for (int s = 0; s < S; ++s) {
    if (s == goal) continue;
    for (int a = 0; a < 4; ++a) {
      int s2 = detail::grid_move(s, a, W, 3);
      double expect = std::pow(0.9, dist[s2]);
      CHECK(res.q.values(s, a) == Catch::Approx(expect).margin(1e-9));
    }
  }

  // greedy recovery points along shortest paths
  PolicyTable greedy = greedy_policy(res.q);
  for (int s = 0; s < S; ++s) {
    if (s == goal) continue;
    int a = 0;
    greedy.probs.row(s).maxCoeff(&a);
    CHECK(dist[detail::grid_move(s, a, W, 3)] == dist[s] - 1);
  }
}

TEST_CASE("value iteration: two-armed bandit with self-loop") {
  Mdp mdp;
  mdp.n_states = 1;
  mdp.n_actions = 2;
  mdp.gamma = 0.9;
  mdp.transition.assign(2, Eigen::MatrixXd::Ones(1, 1));
  mdp.reward.resize(1, 2);
  mdp.reward << 1.0, 2.0;
  mdp.rho0 = Eigen::VectorXd::Ones(1);
  mdp.terminal = {false};
  auto res = value_iteration(mdp, 1e-12);
  CHECK(res.q.values(0, 1) == Catch::Approx(2.0 / 0.1).margin(1e-8));
  CHECK(res.q.values(0, 0) == Catch::Approx(1.0 + 0.9 * 2.0 / 0.1).margin(1e-8));
}

TEST_CASE("value iteration: residuals contract at rate gamma") {
  Rng rng(77);
  Mdp mdp = random_mdp(6, 3, 0.9, rng);
  auto res = value_iteration(mdp, 1e-10);
  REQUIRE(res.iterations >= 3);
  for (std::size_t k = 0; k + 1 < res.residuals.size(); ++k)
    CHECK(res.residuals[k + 1] <= mdp.gamma * res.residuals[k] + 1e-12);
}

TEST_CASE("greedy policy tie-breaking") {
  QTable q;
  q.values.resize(2, 2);
  q.values << 0.0, 0.0, 1.0, 2.0;
  PolicyTable pi = greedy_policy(q);
  CHECK(pi.probs(0, 0) == 1.0);  // tie goes to the lowest index
  CHECK(pi.probs(1, 1) == 1.0);
}

TEST_CASE("greedy backup equals max backup for any table") {
  Mdp mdp = build_mdp(EnvSpec::gridworld(4, 4));
  auto res = value_iteration(mdp, 1e-10);
  CHECK(greedy_consistency_residual(mdp, res.q) <= 1e-12);

  Rng rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    QTable q;
    q.values = Eigen::MatrixXd::NullaryExpr(mdp.n_states, mdp.n_actions,
                                            [&]() { return rng.uniform(-2.0, 2.0); });
    CHECK(greedy_consistency_residual(mdp, q) <= 1e-12);
  }

  // expectation under a non-greedy policy leaves a strictly positive gap
  CHECK(bellman_consistency_gap(mdp, res.q, PolicyTable::uniform(mdp.n_states, mdp.n_actions)) >
        1e-4);

  QTable wrong;
  wrong.values = Eigen::MatrixXd::Zero(2, 2);
  CHECK_THROWS_AS(greedy_consistency_residual(mdp, wrong), std::invalid_argument);
}

TEST_CASE("policy improvement is monotone") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    Mdp mdp = random_mdp(5, 3, 0.9, rng);
    PolicyTable pi = PolicyTable::uniform(5, 3);
    auto q_pi = policy_evaluation_exact(mdp, pi);
    PolicyTable improved = greedy_policy(q_pi);
    auto q_improved = policy_evaluation_exact(mdp, improved);
    Eigen::VectorXd v_old = (pi.probs.array() * q_pi.values.array()).rowwise().sum();
    Eigen::VectorXd v_new =
        (improved.probs.array() * q_improved.values.array()).rowwise().sum();
    CHECK((v_new - v_old).minCoeff() >= -1e-10);
  }
}

TEST_CASE("trajectory enumeration: counts, normalization, guard") {
  Mdp chain = build_mdp(EnvSpec::chain(2));
  PolicyTable always_right;
  always_right.probs.resize(3, 2);
  always_right.probs << 0, 1, 0, 1, 0, 1;

  auto det = enumerate_trajectories(chain, always_right, 1);
  REQUIRE(det.size() == 1);
  CHECK(det[0].probability == 1.0);

  Rng rng(13);
  Mdp mdp = random_mdp(2, 2, 0.9, rng);
  auto trajs = enumerate_trajectories(mdp, PolicyTable::uniform(2, 2), 2);
  double total = 0.0;
  for (const auto& t : trajs) total += t.probability;
  CHECK(total == Catch::Approx(1.0).margin(1e-10));

  CHECK_THROWS_AS(enumerate_trajectories(random_mdp(10, 10, 0.9, rng),
                                         PolicyTable::uniform(10, 10), 8),
                  std::length_error);
}

TEST_CASE("trajectory enumeration matches the exact evaluator and sampling") {
  Rng rng(99);
  Mdp mdp = random_mdp(2, 2, 0.8, rng);
  PolicyTable pi = PolicyTable::uniform(2, 2);
  const int horizon = 6;

  auto trajs = enumerate_trajectories(mdp, pi, horizon);
  double expected = 0.0;
  for (const auto& t : trajs) expected += t.probability * t.discounted_return;

  auto q = policy_evaluation_exact(mdp, pi);
  Eigen::VectorXd v = (pi.probs.array() * q.values.array()).rowwise().sum();
  double exact = mdp.rho0.dot(v);
  double truncation = std::pow(mdp.gamma, horizon) * mdp.max_abs_reward() / (1.0 - mdp.gamma);
  CHECK(std::abs(expected - exact) <= truncation + 1e-12);

  // Monte-Carlo oracle over one million episodes.
  const int n = 1000000;
  Rng sampler(4242);
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    int s = sample_initial_state(mdp, sampler);
    double disc = 1.0, ret = 0.0;
    for (int t = 0; t < horizon; ++t) {
      int a = sample_categorical_row(pi.probs, s, sampler);
      Transition tr = branch_step(mdp, s, a, sampler);
      ret += disc * tr.reward;
      disc *= mdp.gamma;
      s = tr.next_state;
    }
    sum += ret;
    sum_sq += ret * ret;
  }
  double mean = sum / n;
  double se = std::sqrt((sum_sq / n - mean * mean) / n);
  CHECK(std::abs(mean - expected) <= 3.0 * se + 1e-12);
}

TEST_CASE("mdp text round-trip and loader errors") {
  Mdp mdp = build_mdp(EnvSpec::gridworld(3, 3, 0.2));
  std::stringstream ss;
  save_mdp(mdp, ss);
  Mdp back = load_mdp(ss);
  CHECK(back.n_states == mdp.n_states);
  CHECK(back.n_actions == mdp.n_actions);
  CHECK(back.gamma == mdp.gamma);
  for (int a = 0; a < mdp.n_actions; ++a)
    CHECK((back.transition[a] - mdp.transition[a]).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.reward - mdp.reward).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.terminal == mdp.terminal);

  std::stringstream bad1("mdp 2 1");
  CHECK_THROWS_AS(load_mdp(bad1), std::invalid_argument);
  std::stringstream bad2("mdp 1 1 0.5\n0 0 1.0");  // missing probabilities
  CHECK_THROWS_AS(load_mdp(bad2), std::invalid_argument);
  std::stringstream bad3("notanmdp 1 1 0.5");
  CHECK_THROWS_AS(load_mdp(bad3), std::invalid_argument);
}
