#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>

#include "frl/a2c.hpp"
#include "frl/frl_core.hpp"

using namespace frl;

namespace {

Eigen::VectorXd fd_over_indices(const std::function<double(const Eigen::VectorXd&)>& f,
                                Eigen::VectorXd p, const std::vector<int>& indices,
                                double step = 1e-5) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(p.size());
  for (int i : indices) {
    double keep = p(i);
    p(i) = keep + step;
    double hi = f(p);
    p(i) = keep - step;
    double lo = f(p);
    p(i) = keep;
    g(i) = (hi - lo) / (2.0 * step);
  }
  return g;
}

PolicyTable deterministic_policy(int n_states, const std::vector<int>& actions, int n_actions) {
  PolicyTable pi;
  pi.probs = Eigen::MatrixXd::Zero(n_states, n_actions);
  for (int s = 0; s < n_states; ++s) pi.probs(s, actions[s]) = 1.0;
  return pi;
}

}  // namespace

TEST_CASE("behavior policy variants") {
  Eigen::MatrixXd q(1, 2);
  q << 1.0, 2.0;
  Eigen::MatrixXd pi(1, 2);
  pi << 0.7, 0.3;

  BehaviorPolicyConfig eg;
  eg.kind = BehaviorKind::EpsilonGreedyOnQ;
  eg.epsilon = 1.0;
  Eigen::MatrixXd uniform = make_behavior_policy(eg, q, pi);
  CHECK(uniform(0, 0) == Catch::Approx(0.5));
  CHECK(uniform(0, 1) == Catch::Approx(0.5));

  eg.epsilon = 0.1;
  Eigen::MatrixXd greedy = make_behavior_policy(eg, q, pi);
  CHECK(greedy(0, 0) == Catch::Approx(0.05));
  CHECK(greedy(0, 1) == Catch::Approx(0.95));

  eg.epsilon = 0.0;
  CHECK_THROWS_AS(make_behavior_policy(eg, q, pi), std::invalid_argument);

  BehaviorPolicyConfig mix;
  mix.kind = BehaviorKind::UniformMix;
  mix.mix_weight = 0.0;
  CHECK(make_behavior_policy(mix, q, pi) == pi);
  mix.mix_weight = 0.4;
  Eigen::MatrixXd mixed = make_behavior_policy(mix, q, pi);
  CHECK(mixed(0, 0) == Catch::Approx(0.6 * 0.7 + 0.2));
  CHECK(mixed.minCoeff() > 0.0);

  BehaviorPolicyConfig snap;
  snap.kind = BehaviorKind::SnapshotOfPi;
  Eigen::MatrixXd stored(1, 2);
  stored << 0.2, 0.8;
  CHECK(make_behavior_policy(snap, q, pi, &stored) == stored);
}

TEST_CASE("paired collection on a deterministic chain") {
  Mdp chain = build_mdp(EnvSpec::chain(3));
  Eigen::MatrixXd right = Eigen::MatrixXd::Zero(4, 2);
  right.col(1).setOnes();

  Rng rng(4);
  RolloutCursor cursor;
  PairedBatch batch = collect_paired_batch(chain, right, right, 6, 2, 100, rng, cursor);
  REQUIRE(batch.entries.size() == 6);
  for (const auto& e : batch.entries) {
    CHECK(e.on_policy.state == e.behavior.state);
    // identical deterministic policies on a deterministic environment
    CHECK(e.on_policy.action == e.behavior.action);
    CHECK(e.on_policy.rewards[0] == e.behavior.rewards[0]);
  }
  // the stream walks 0 -> 1 -> 2 -> goal and resets
  CHECK(batch.entries[0].state() == 0);
  CHECK(batch.entries[1].state() == 1);
  CHECK(batch.entries[2].state() == 2);
  CHECK(batch.entries[2].behavior.terminal);
  CHECK(batch.entries[3].state() == 0);

  RolloutCursor c2;
  Rng r2(4);
  PairedBatch single = collect_paired_batch(chain, right, right, 1, 1, 100, r2, c2);
  CHECK(single.entries.size() == 1);
}

TEST_CASE("stream states match the sampling policy's visit profile") {
  Mdp grid = build_mdp(EnvSpec::gridworld(3, 3, 0.2));
  Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(9, 4, 0.25);
  const int horizon = 12;

  Rng rng(777);
  RolloutCursor cursor;
  long episodes = 0;
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(9);
  const int total = 200000;
  for (int chunk = 0; chunk < total / 1000; ++chunk) {
    auto windows = collect_stream_windows(grid, uniform, 1000, 5, horizon, rng, cursor, &episodes);
    for (const auto& w : windows) counts(w.state) += 1.0;
  }
  PolicyTable pi;
  pi.probs = uniform;
  Eigen::VectorXd oracle = expected_visit_counts(grid, pi, horizon);
  Eigen::VectorXd f_emp = counts / counts.sum();
  Eigen::VectorXd f_exact = oracle / oracle.sum();
  CHECK((f_emp - f_exact).cwiseAbs().maxCoeff() < 0.01);
}

TEST_CASE("saddle objective hand values") {
  // both probes see Q equal to their observed returns -> every bracket is 0
  PairedBatch batch;
  batch.gamma = 0.9;
  batch.n_step = 1;
  PairedEntry e;
  e.on_policy = {0, 0, {1.0}, 0, true};
  e.behavior = {0, 1, {0.5}, 0, true};
  batch.entries.push_back(e);

  Eigen::MatrixXd q(1, 2);
  q << 1.0, 0.5;
  Eigen::MatrixXd pi = Eigen::MatrixXd::Constant(1, 2, 0.5);
  CHECK(saddle_objective(batch, q, pi) == Catch::Approx(0.0).margin(1e-15));

  // Q - R = 1 on both probes -> 1 - (1 + 1/2) = -1/2
  q << 2.0, 1.5;
  CHECK(saddle_objective(batch, q, pi) == Catch::Approx(-0.5).margin(1e-15));
}

TEST_CASE("saddle objective equals its exact tabular expansion") {
  // 2x2 gridworld, deterministic policies that both reach the goal
  Mdp grid = build_mdp(EnvSpec::gridworld(2, 2));
  // actions: 0 up, 1 down, 2 left, 3 right; ids row-major, goal = 3
  PolicyTable pit = deterministic_policy(4, {3, 1, 3, 0}, 4);  // right then down
  PolicyTable pil = deterministic_policy(4, {1, 1, 3, 0}, 4);  // down, then right along the bottom

  Rng rng(12);
  RolloutCursor cursor;
  PairedBatch batch =
      collect_paired_batch(grid, pil.probs, pit.probs, 8, 10, 10, rng, cursor);
  for (const auto& e : batch.entries) {
    CHECK(e.on_policy.terminal);
    CHECK(e.behavior.terminal);
  }

  Eigen::MatrixXd q = Eigen::MatrixXd::NullaryExpr(4, 4, [&]() { return rng.uniform(-1.0, 1.0); });
  QTable q_learn = policy_evaluation_exact(grid, pil);
  QTable q_sample = policy_evaluation_exact(grid, pit);

  double expected = 0.0;
  for (const auto& e : batch.entries) {
    double first = q(e.on_policy.state, e.on_policy.action) -
                   q_learn.values(e.on_policy.state, e.on_policy.action);
    double diff = q(e.behavior.state, e.behavior.action) -
                  q_sample.values(e.behavior.state, e.behavior.action);
    expected += first - diff - 0.5 * diff * diff;
  }
  expected /= static_cast<double>(batch.entries.size());
  CHECK(saddle_objective(batch, q, pil.probs) == Catch::Approx(expected).margin(1e-10));
}

TEST_CASE("policy gradient vanishes at a Bellman-consistent Q") {
  Mdp chain = build_mdp(EnvSpec::chain(4));
  PolicyTable right = deterministic_policy(5, {1, 1, 1, 1, 0}, 2);
  QTable q_exact = policy_evaluation_exact(chain, right);

  Rng rng(3);
  RolloutCursor cursor;
  PairedBatch batch =
      collect_paired_batch(chain, right.probs, right.probs, 12, 1, 100, rng, cursor);

  TabularModel model(5, 2);
  Eigen::VectorXd g = policy_gradient(batch, model, right.probs, q_exact.values);
  CHECK(g.norm() == 0.0);
}

TEST_CASE("policy gradient closed form for a single tabular sample") {
  PairedBatch batch;
  batch.gamma = 0.9;
  batch.n_step = 1;
  PairedEntry e;
  e.on_policy = {1, 0, {0.25}, 2, false};  // bootstraps at state 2
  e.behavior = {1, 1, {0.0}, 2, false};
  batch.entries.push_back(e);

  TabularModel model(3, 2);
  Rng rng(5);
  for (int i = 0; i < model.n_params(); ++i) model.params()(i) = rng.uniform(-1.0, 1.0);
  Eigen::MatrixXd pi = model.policy_table();
  Eigen::MatrixXd q = model.q_table();

  double ret = 0.25 + 0.9 * pi.row(2).dot(q.row(2));
  double coeff = q(1, 0) - ret;
  Eigen::VectorXd g = policy_gradient(batch, model, pi, q);

  // logit-space score: coeff * (one_hot(a) - pi(.|s)) in the state-1 row
  CHECK(g(2) == Catch::Approx(coeff * (1.0 - pi(1, 0))).margin(1e-12));
  CHECK(g(3) == Catch::Approx(coeff * (0.0 - pi(1, 1))).margin(1e-12));
  for (int i : {0, 1, 4, 5}) CHECK(g(i) == 0.0);          // other states untouched
  for (int i = 6; i < 12; ++i) CHECK(g(i) == 0.0);        // value block untouched

  Eigen::MatrixXd broken = pi;
  broken(1, 0) = 0.0;
  CHECK_THROWS_AS(policy_gradient(batch, model, broken, q), std::runtime_error);
}

TEST_CASE("q gradient hand values and stream collapse") {
  // single pair with distinct probe actions
  PairedBatch batch;
  batch.gamma = 0.9;
  batch.n_step = 1;
  PairedEntry e;
  e.on_policy = {0, 0, {1.0}, 0, true};
  e.behavior = {0, 1, {2.0}, 0, true};
  batch.entries.push_back(e);

  TabularModel model(1, 2);
  model.params() << 0.0, 0.0, 3.0, 4.0;  // q = (3, 4)
  Eigen::MatrixXd pi = model.policy_table();
  Eigen::MatrixXd q = model.q_table();

  Eigen::VectorXd g = q_gradient(batch, model, pi, q);
  // at (s,b): -(q - R) - 1 = -(4 - 2) - 1 = -3 ; at (s,a): +1
  CHECK(g(3) == Catch::Approx(-3.0).margin(1e-15));
  CHECK(g(2) == Catch::Approx(1.0).margin(1e-15));
  CHECK(g(0) == 0.0);
  CHECK(g(1) == 0.0);

  // identical probes with Q equal to the observed return -> exact zero
  PairedBatch same;
  same.gamma = 0.9;
  same.n_step = 1;
  PairedEntry s;
  s.on_policy = {0, 1, {4.0}, 0, true};
  s.behavior = {0, 1, {4.0}, 0, true};
  same.entries.push_back(s);
  Eigen::VectorXd gz = q_gradient(same, model, pi, q);
  CHECK(gz.norm() == 0.0);
}

TEST_CASE("stream collapse leaves only the regression term") {
  Mdp chain = build_mdp(EnvSpec::chain(3));
  PolicyTable right = deterministic_policy(4, {1, 1, 1, 0}, 2);
  Rng rng(8);
  RolloutCursor cursor;
  PairedBatch batch =
      collect_paired_batch(chain, right.probs, right.probs, 9, 3, 100, rng, cursor);

  TabularModel model(4, 2);
  Rng pr(44);
  for (int i = 0; i < model.n_params(); ++i) model.params()(i) = pr.uniform(-1.0, 1.0);
  Eigen::MatrixXd pi = right.probs;  // identical learning and sampling policies
  Eigen::MatrixXd q = model.q_table();

  Eigen::VectorXd g = q_gradient(batch, model, pi, q);
  Eigen::VectorXd regression_only = model.zero_grad();
  const double B = static_cast<double>(batch.entries.size());
  for (const auto& e : batch.entries) {
    double diff = q(e.behavior.state, e.behavior.action) -
                  window_return(e.behavior, batch.gamma, q, pi);
    model.add_q_grad(e.behavior.state, e.behavior.action, -diff / B, regression_only);
  }
  // the windows may differ in length between the probes, but the +-dQ(s,.)
  // terms use only the probe actions, which coincide here
  CHECK((g - regression_only).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("full-differentiation q gradient matches finite differences") {
  Mdp grid = build_mdp(EnvSpec::gridworld(3, 3, 0.1));
  Rng rng(15);
  TabularModel model(9, 4);
  for (int i = 0; i < model.n_params(); ++i) model.params()(i) = rng.uniform(-0.5, 0.5);
  Eigen::MatrixXd pi = model.policy_table();
  Eigen::MatrixXd q_now = model.q_table();
  Eigen::MatrixXd pi_tilde = Eigen::MatrixXd::Constant(9, 4, 0.25);

  RolloutCursor cursor;
  PairedBatch batch = collect_paired_batch(grid, pi, pi_tilde, 16, 3, 40, rng, cursor);

  Eigen::VectorXd analytic =
      q_gradient(batch, model, pi, q_now, QGradMode::FullDifferentiation);

  auto clone = model.clone();
  auto objective = [&](const Eigen::VectorXd& p) {
    clone->params() = p;
    return saddle_objective(batch, [&](int s) { return clone->q_row(s); }, pi);
  };
  Eigen::VectorXd numeric = fd_over_indices(objective, model.params(), model.value_param_indices());
  CHECK((analytic - numeric).norm() / std::max(numeric.norm(), 1e-12) < 1e-6);
}

TEST_CASE("constrained witness obeys weak duality under the exact value gap") {
  Mdp grid = build_mdp(EnvSpec::gridworld(3, 3, 0.2));
  Rng rng(29);
  PolicyTable pi, pit;
  pi.probs.resize(9, 4);
  pit.probs.resize(9, 4);
  for (int s = 0; s < 9; ++s) {
    double sp = 0.0, sq = 0.0;
    for (int a = 0; a < 4; ++a) {
      pi.probs(s, a) = rng.uniform(0.05, 1.0);
      pit.probs(s, a) = rng.uniform(0.05, 1.0);
      sp += pi.probs(s, a);
      sq += pit.probs(s, a);
    }
    pi.probs.row(s) /= sp;
    pi.probs(s, 3) += 1.0 - pi.probs.row(s).sum();
    pit.probs.row(s) /= sq;
    pit.probs(s, 3) += 1.0 - pit.probs.row(s).sum();
  }

  QTable q_pi = policy_evaluation_exact(grid, pi);
  QTable q_pit = policy_evaluation_exact(grid, pit);
  auto quad = ConvexFunction::quadratic_shifted();

  Eigen::VectorXd occupancy = discounted_occupancy(grid, pit);
  double avg_variational = 0.0, avg_direct = 0.0;
  for (int s = 0; s < 9; ++s) {
    DiscreteDistributionPair pair;
    pair.p.assign(pi.probs.row(s).begin(), pi.probs.row(s).end());
    pair.q.assign(pit.probs.row(s).begin(), pit.probs.row(s).end());
    WitnessTable witness;
    for (int a = 0; a < 4; ++a)
      witness.values.push_back(q_pi.values(s, a) - q_pit.values(s, a));
    double variational = fdiv_variational(quad, pair, witness);
    double direct = fdiv_direct(quad, pair);
    CHECK(variational <= direct + 1e-9);  // per-state weak duality
    avg_variational += occupancy(s) * variational;
    avg_direct += occupancy(s) * direct;
  }
  CHECK(avg_variational <= avg_direct + 1e-9);
}

TEST_CASE("trainer basics: empty run, determinism, learning") {
  Config cfg;
  cfg.env = "gridworld3x3";
  cfg.model = "tabular";
  cfg.total_steps = 0;
  cfg.eval_interval = 1000;

  TrainResult empty = train(cfg, 0);
  REQUIRE(empty.rows.size() == 1);
  CHECK(empty.rows[0].step == 0);

  cfg.total_steps = 1920;
  cfg.eval_interval = 640;
  TrainResult a = train(cfg, 7);
  TrainResult b = train(cfg, 7);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(metrics_csv_row(a.rows[i]) == metrics_csv_row(b.rows[i]));
  }
  CHECK(a.model->params() == b.model->params());

  TrainResult c = train(cfg, 8);
  CHECK(c.model->params() != a.model->params());

  // short tabular run learns the 3x3 gridworld to most of the optimum
  Config learn = cfg;
  learn.total_steps = 30000;
  learn.eval_interval = 5000;
  TrainResult run = train(learn, 1);
  Mdp mdp = build_mdp(env_spec_from_config(learn));
  double optimal = mdp.rho0.dot(value_iteration(mdp, 1e-10).q.values.rowwise().maxCoeff());
  CHECK(run.rows.back().mean_return >= 0.8 * optimal);
}

TEST_CASE("diverging run aborts with a diagnostic checkpoint") {
  Config cfg;
  cfg.env = "gridworld3x3";
  cfg.model = "tabular";
  cfg.total_steps = 6400;
  cfg.lr_q = 1e308;
  const std::string ckpt_path = "divergence_probe.ckpt";
  std::remove(ckpt_path.c_str());
  CHECK_THROWS_AS(train(cfg, 0, ckpt_path), std::runtime_error);
  CHECK(std::filesystem::exists(ckpt_path));
  std::remove(ckpt_path.c_str());
}
