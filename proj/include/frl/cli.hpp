#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "frl/a2c.hpp"
#include "frl/config.hpp"
#include "frl/diagnostics.hpp"
#include "frl/frl_core.hpp"
#include "frl/mdp.hpp"

namespace frl {

inline constexpr const char* kVersion = "frl 1.0.0";

namespace cli_detail {

inline std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline std::string seed_out_path(const std::string& base, long seed) {
  auto dot = base.find_last_of('.');
  auto slash = base.find_last_of('/');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
    return base + "_seed" + std::to_string(seed);
  return base.substr(0, dot) + "_seed" + std::to_string(seed) + base.substr(dot);
}

inline void write_csv(const std::string& path, const Config& cfg, long seed,
                      const TrainResult& result) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open output file '" + path + "'");
  os << "# " << kVersion << " run log\n";
  std::istringstream echo(serialize_config(cfg));
  for (std::string line; std::getline(echo, line);) os << "# " << line << '\n';
  os << "# effective_seed = " << seed << '\n';
  os << metrics_csv_header() << '\n';
  for (const auto& row : result.rows) os << metrics_csv_row(row) << '\n';
}

inline TrainResult run_training(const Config& cfg, long seed, const std::string& out_path) {
  TrainResult result = cfg.algorithm == "a2c"
                           ? a2c_train(cfg, seed)
                           : train(cfg, seed, out_path + ".diverged.ckpt");
  write_csv(out_path, cfg, seed, result);
  std::ofstream ckpt(out_path + ".ckpt", std::ios::binary);
  save_checkpoint(ckpt, model_checkpoint(*result.model));
  return result;
}

}  // namespace cli_detail

struct CliOptions {
  std::optional<std::string> config_path;
  std::optional<long> seed;
  std::optional<std::string> out;
  std::optional<long> steps;
  std::optional<std::string> env;
  std::vector<long> seeds;          // train fan-out
  std::optional<std::string> ckpt;  // eval
  std::optional<std::string> mdp_file;  // solve input
  std::optional<std::string> dump_mdp;  // solve output
};

inline Config resolve_config(const CliOptions& opts) {
  Config cfg = opts.config_path ? parse_config(cli_detail::read_file(*opts.config_path)) : Config{};
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.out) cfg.out_path = *opts.out;
  if (opts.steps) cfg.total_steps = *opts.steps;
  if (opts.env) cfg.env = *opts.env;
  validate_config(cfg);
  return cfg;
}

inline int cmd_train(const Config& cfg, const CliOptions& opts) {
  std::vector<long> seeds = opts.seeds.empty() ? std::vector<long>{cfg.seed} : opts.seeds;
  for (long seed : seeds) {
    std::string out = seeds.size() == 1 ? cfg.out_path
                                        : cli_detail::seed_out_path(cfg.out_path, seed);
    TrainResult result = cli_detail::run_training(cfg, seed, out);
    const MetricsRow& last = result.rows.back();
    std::cout << cfg.algorithm << " seed=" << seed << " steps=" << last.step
              << " mean_return=" << format_double(last.mean_return)
              << " loss_value=" << format_double(last.loss_value) << " -> " << out << '\n';
  }
  return 0;
}

inline int cmd_eval(const Config& cfg, const CliOptions& opts) {
  std::string ckpt_path = opts.ckpt.value_or(cfg.out_path + ".ckpt");
  std::ifstream is(ckpt_path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint '" + ckpt_path + "'");
  auto model = model_from_checkpoint(load_checkpoint(is));

  EnvSpec spec = env_spec_from_config(cfg);
  Mdp mdp = build_mdp(spec);
  if (model->n_states() != mdp.n_states || model->n_actions() != mdp.n_actions)
    throw std::runtime_error("checkpoint does not match the configured environment");

  // greedy rollouts: the argmax of the policy head, ties to the lowest index
  Eigen::MatrixXd pi = model->policy_table();
  Eigen::MatrixXd greedy = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s) {
    int best = 0;
    for (int a = 1; a < mdp.n_actions; ++a)
      if (pi(s, a) > pi(s, best)) best = a;
    greedy(s, best) = 1.0;
  }

  Rng rng(static_cast<std::uint64_t>(cfg.seed), 3);
  std::ostringstream report;
  double total = 0.0;
  for (int e = 0; e < cfg.eval_episodes; ++e) {
    int s = sample_initial_state(mdp, rng);
    double ret = 0.0, disc = 1.0;
    for (int t = 0; t < spec.max_episode_steps; ++t) {
      int a = sample_categorical_row(greedy, s, rng);
      Transition tr = branch_step(mdp, s, a, rng);
      ret += disc * tr.reward;
      disc *= mdp.gamma;
      if (tr.done) break;
      s = tr.next_state;
    }
    total += ret;
    report << "episode " << e << " return " << format_double(ret) << '\n';
  }
  report << "mean_return " << format_double(total / cfg.eval_episodes) << '\n';
  std::cout << report.str();
  if (opts.out) {
    std::ofstream os(*opts.out, std::ios::binary);
    os << report.str();
  }
  return 0;
}

inline int cmd_solve(const Config& cfg, const CliOptions& opts) {
  Mdp mdp;
  if (opts.mdp_file) {
    std::ifstream is(*opts.mdp_file);
    if (!is) throw std::runtime_error("cannot open mdp file '" + *opts.mdp_file + "'");
    mdp = load_mdp(is);
  } else {
    mdp = build_mdp(env_spec_from_config(cfg));
  }
  if (opts.dump_mdp) {
    std::ofstream os(*opts.dump_mdp, std::ios::binary);
    save_mdp(mdp, os);
  }

  ValueIterationResult res = value_iteration(mdp, 1e-10);
  PolicyTable greedy = greedy_policy(res.q);
  QTable q_greedy = policy_evaluation_exact(mdp, greedy);

  std::ostringstream report;
  report << "# state action q_star q_greedy\n";
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      report << s << ' ' << a << ' ' << format_double(res.q.values(s, a)) << ' '
             << format_double(q_greedy.values(s, a)) << '\n';
  report << "# sweeps " << res.iterations << '\n';
  report << "# optimal_return " << format_double(mdp.rho0.dot(res.q.values.rowwise().maxCoeff()))
         << '\n';
  std::cout << report.str();
  if (opts.out) {
    std::ofstream os(*opts.out, std::ios::binary);
    os << report.str();
  }
  return 0;
}

inline int cmd_gradcheck(const Config& cfg, const CliOptions& opts) {
  Mdp mdp = build_mdp(env_spec_from_config(cfg));
  std::vector<CheckReport> reports;
  reports.push_back(policy_evaluation_gradcheck(mdp, cfg.seed, false));
  reports.push_back(policy_evaluation_gradcheck(mdp, cfg.seed, true));
  reports.push_back(policy_improvement_estimator_check(mdp, 3, 100000, cfg.seed));

  std::ostringstream out;
  bool all_pass = true;
  for (const auto& r : reports) {
    out << (r.pass ? "PASS " : "FAIL ") << r.line() << '\n';
    all_pass = all_pass && r.pass;
  }
  std::cout << out.str();
  if (opts.out) {
    std::ofstream os(*opts.out, std::ios::binary);
    os << out.str();
  }
  return all_pass ? 0 : 1;
}

inline int cmd_verify(const Config& cfg, const CliOptions& opts) {
  std::ostringstream out;
  bool all_pass = true;
  auto record = [&](const std::string& name, bool pass, const std::string& stats) {
    out << (pass ? "PASS " : "FAIL ") << "check=" << name << ' ' << stats << '\n';
    all_pass = all_pass && pass;
  };

  {
    auto quad = ConvexFunction::quadratic_shifted();
    std::vector<double> grid;
    for (int i = 0; i < 601; ++i) grid.push_back(-3.0 + 6.0 * i / 600.0);
    double err = double_conjugate_check(quad, grid);
    record("involution_quadratic", err < 1e-6, "max_abs_err=" + format_double(err));

    std::vector<double> xgrid;
    for (int i = 0; i < 100; ++i) xgrid.push_back(0.1 + 2.9 * i / 99.0);
    double xerr = double_conjugate_check(ConvexFunction::x_log_x(), xgrid);
    record("involution_xlogx", xerr < 1e-6, "max_abs_err=" + format_double(xerr));
  }

  {
    auto quad = ConvexFunction::quadratic_shifted();
    Rng rng(static_cast<std::uint64_t>(cfg.seed), 71);
    double worst_gap = 0.0, worst_violation = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
      int support = 2 + rng.uniform_int(9);
      DiscreteDistributionPair pair;
      auto draw = [&](std::vector<double>& v) {
        v.resize(support);
        double total = 0.0;
        for (auto& x : v) {
          x = rng.uniform(0.01, 1.0);
          total += x;
        }
        for (auto& x : v) x = 0.9 * (x / total) + 0.1 / support;
      };
      draw(pair.p);
      draw(pair.q);
      double direct = fdiv_direct(quad, pair);
      worst_gap = std::max(worst_gap,
                           std::abs(direct - fdiv_variational(quad, pair, optimal_witness(quad, pair))));
      WitnessTable random_w;
      random_w.values.resize(support);
      for (auto& w : random_w.values) w = rng.uniform(-2.0, 2.0);
      worst_violation = std::max(worst_violation, fdiv_variational(quad, pair, random_w) - direct);
    }
    record("variational_equals_direct", worst_gap < 1e-10,
           "max_gap=" + format_double(worst_gap));
    record("weak_duality", worst_violation <= 1e-10,
           "max_violation=" + format_double(worst_violation));
  }

  {
    for (const char* env : {"gridworld4x4", "cliffwalk"}) {
      Config env_cfg = cfg;
      env_cfg.env = env;
      Mdp mdp = build_mdp(env_spec_from_config(env_cfg));
      auto res = value_iteration(mdp, 1e-10);
      double residual = greedy_consistency_residual(mdp, res.q);
      record(std::string("greedy_max_consistency_") + env, residual <= 1e-12,
             "residual=" + format_double(residual));
    }
  }

  {
    Mdp chain = build_mdp(EnvSpec::chain(3));
    PolicyTable right;
    right.probs = Eigen::MatrixXd::Zero(4, 2);
    right.probs.col(1).setOnes();
    Rng rng(static_cast<std::uint64_t>(cfg.seed), 72);
    Eigen::MatrixXd q(4, 2);
    for (int s = 0; s < 4; ++s)
      for (int a = 0; a < 2; ++a) q(s, a) = rng.uniform(-1.0, 1.0);
    auto det = return_substitution_check(chain, right, q, 5);
    record("return_substitution_deterministic", std::abs(det.gap) < 1e-8,
           "gap=" + format_double(det.gap));

    Mdp grid = build_mdp(EnvSpec::gridworld(2, 2, 0.3));
    auto sto = return_substitution_check(grid, PolicyTable::uniform(4, 4), q, 5);
    record("return_substitution_variance_gap", std::abs(sto.gap - sto.variance) < 1e-8,
           "gap=" + format_double(sto.gap) + " variance=" + format_double(sto.variance));
  }

  std::cout << out.str();
  if (opts.out) {
    std::ofstream os(*opts.out, std::ios::binary);
    os << out.str();
  }
  return all_pass ? 0 : 1;
}

/// Entry point shared by the binary and the tests. Returns the process exit
/// code: 0 on success, 1 on check failure or runtime error, 2 on usage or
/// configuration errors.
inline int run_cli(std::vector<std::string> args) {
  CLI::App app{std::string(kVersion) + " - saddle-point policy optimization on tabular worlds"};
  app.require_subcommand(1);

  CliOptions opts;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config_path, "configuration file (key = value lines)");
    sub->add_option("--seed", opts.seed, "random seed override");
    sub->add_option("--out", opts.out, "output path override");
    sub->add_option("--steps", opts.steps, "total_steps override");
    sub->add_option("--env", opts.env, "environment name override");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "run the configured trainer, write CSV + checkpoint");
  add_common(train_cmd);
  train_cmd->add_option("--seeds", opts.seeds, "comma-separated seed fan-out")->delimiter(',');

  CLI::App* eval_cmd = app.add_subcommand("eval", "greedy rollouts from a checkpoint");
  add_common(eval_cmd);
  eval_cmd->add_option("--ckpt", opts.ckpt, "checkpoint path (default: <out_path>.ckpt)");

  CLI::App* solve_cmd = app.add_subcommand("solve", "exact value iteration on the environment");
  add_common(solve_cmd);
  solve_cmd->add_option("--mdp", opts.mdp_file, "solve a serialized mdp file instead");
  solve_cmd->add_option("--dump-mdp", opts.dump_mdp, "write the environment in mdp text format");

  CLI::App* gradcheck_cmd = app.add_subcommand("gradcheck", "gradient and estimator checks");
  add_common(gradcheck_cmd);

  CLI::App* verify_cmd = app.add_subcommand("verify", "conjugate, duality, and identity suite");
  add_common(verify_cmd);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    Config cfg = resolve_config(opts);
    if (train_cmd->parsed()) return cmd_train(cfg, opts);
    if (eval_cmd->parsed()) return cmd_eval(cfg, opts);
    if (solve_cmd->parsed()) return cmd_solve(cfg, opts);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(cfg, opts);
    if (verify_cmd->parsed()) return cmd_verify(cfg, opts);
    std::cerr << "unknown subcommand\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace frl
