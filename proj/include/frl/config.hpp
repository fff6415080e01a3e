#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "frl/envs.hpp"

namespace frl {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flat key = value experiment configuration. Defaults follow the shared
/// hyper-parameter block of the reference setup: discount 0.99, RMSProp
/// learning rates 7e-4 for both heads, batch 64, 5-step returns, gradient
/// clip 0.5, value coefficient 0.5.
struct Config {
  std::string algorithm = "frl";  // frl | a2c
  std::string env = "gridworld5x5";
  double slip_prob = 0.0;
  int max_episode_steps = 0;  // 0 = environment default
  double gamma = 0.99;
  double lr_policy = 7e-4;
  double lr_q = 7e-4;
  int batch_size = 64;
  int n_step = 5;
  double grad_clip = 0.5;
  double value_coefficient = 0.5;     // a2c critic loss weight
  double entropy_coefficient = 0.01;  // a2c entropy bonus
  double epsilon_behavior = 0.1;
  std::string behavior_policy = "epsilon_greedy";  // epsilon_greedy | snapshot | uniform_mix
  double mix_weight = 0.1;
  int snapshot_interval = 100;
  // Direction of the two RMSProp updates for the saddle objective. The
  // policy descends and the value head ascends by default: the objective is
  // a min over the policy and a max over Q, and the descent/ascent pair is
  // the configuration that learns (see README).
  std::string policy_update_direction = "descend";
  std::string q_update_direction = "ascend";
  long total_steps = 200000;
  int eval_interval = 5000;
  int eval_episodes = 20;
  std::string model = "mlp";  // mlp | tabular
  int hidden_width = 64;
  int hidden_layers = 2;
  long seed = 0;
  std::string out_path = "run.csv";
};

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double x;
  try {
    x = std::stod(value, &pos);
  } catch (const std::exception&) {
    throw ConfigError("invalid value for " + key + ": '" + value + "'");
  }
  if (pos != value.size()) throw ConfigError("invalid value for " + key + ": '" + value + "'");
  return x;
}

inline long parse_long(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  long x;
  try {
    x = std::stol(value, &pos);
  } catch (const std::exception&) {
    throw ConfigError("invalid value for " + key + ": '" + value + "'");
  }
  if (pos != value.size()) throw ConfigError("invalid value for " + key + ": '" + value + "'");
  return x;
}

}  // namespace detail

/// Environment presets: gridworld<W>x<H>, chain<L>, cliffwalk.
inline EnvSpec env_spec_from_config(const Config& cfg) {
  EnvSpec spec;
  const std::string& name = cfg.env;
  if (name.rfind("gridworld", 0) == 0) {
    std::string dims = name.substr(9);
    auto x = dims.find('x');
    if (x == std::string::npos) throw ConfigError("invalid value for env: '" + name + "'");
    try {
      spec = EnvSpec::gridworld(std::stoi(dims.substr(0, x)), std::stoi(dims.substr(x + 1)),
                                cfg.slip_prob);
    } catch (const std::exception&) {
      throw ConfigError("invalid value for env: '" + name + "'");
    }
  } else if (name.rfind("chain", 0) == 0) {
    try {
      spec = EnvSpec::chain(std::stoi(name.substr(5)));
    } catch (const std::exception&) {
      throw ConfigError("invalid value for env: '" + name + "'");
    }
  } else if (name == "cliffwalk") {
    spec = EnvSpec::cliffwalk();
    spec.slip_prob = cfg.slip_prob;
  } else {
    throw ConfigError("invalid value for env: '" + name + "'");
  }
  spec.gamma = cfg.gamma;
  if (cfg.max_episode_steps > 0) spec.max_episode_steps = cfg.max_episode_steps;
  return spec;
}

inline void validate_config(const Config& cfg) {
  auto require = [](bool ok, const std::string& key, const std::string& why) {
    if (!ok) throw ConfigError("invalid value for " + key + ": " + why);
  };
  require(cfg.algorithm == "frl" || cfg.algorithm == "a2c", "algorithm", "must be frl or a2c");
  require(cfg.gamma >= 0.0 && cfg.gamma < 1.0, "gamma", "must lie in [0, 1)");
  require(cfg.lr_policy > 0.0, "lr_policy", "must be positive");
  require(cfg.lr_q > 0.0, "lr_q", "must be positive");
  require(cfg.batch_size >= 1, "batch_size", "must be at least 1");
  require(cfg.n_step >= 1, "n_step", "must be at least 1");
  require(cfg.grad_clip > 0.0, "grad_clip", "must be positive");
  require(cfg.value_coefficient >= 0.0, "value_coefficient", "must be nonnegative");
  require(cfg.entropy_coefficient >= 0.0, "entropy_coefficient", "must be nonnegative");
  require(cfg.behavior_policy == "epsilon_greedy" || cfg.behavior_policy == "snapshot" ||
              cfg.behavior_policy == "uniform_mix",
          "behavior_policy", "must be epsilon_greedy, snapshot, or uniform_mix");
  if (cfg.behavior_policy == "epsilon_greedy")
    require(cfg.epsilon_behavior > 0.0 && cfg.epsilon_behavior <= 1.0, "epsilon_behavior",
            "must lie in (0, 1] so the sampling policy stays strictly positive");
  require(cfg.mix_weight >= 0.0 && cfg.mix_weight <= 1.0, "mix_weight", "must lie in [0, 1]");
  require(cfg.snapshot_interval >= 1, "snapshot_interval", "must be at least 1");
  require(cfg.policy_update_direction == "ascend" || cfg.policy_update_direction == "descend",
          "policy_update_direction", "must be ascend or descend");
  require(cfg.q_update_direction == "ascend" || cfg.q_update_direction == "descend",
          "q_update_direction", "must be ascend or descend");
  require(cfg.total_steps >= 0, "total_steps", "must be nonnegative");
  require(cfg.eval_interval >= 1, "eval_interval", "must be at least 1");
  require(cfg.eval_episodes >= 1, "eval_episodes", "must be at least 1");
  require(cfg.model == "mlp" || cfg.model == "tabular", "model", "must be mlp or tabular");
  require(cfg.hidden_width >= 1, "hidden_width", "must be at least 1");
  require(cfg.hidden_layers >= 1, "hidden_layers", "must be at least 1");
  require(cfg.max_episode_steps >= 0, "max_episode_steps", "must be nonnegative");
  require(cfg.slip_prob >= 0.0 && cfg.slip_prob < 1.0, "slip_prob", "must lie in [0, 1)");
  require(!cfg.out_path.empty(), "out_path", "must not be empty");
  env_spec_from_config(cfg);  // rejects malformed env names
}

/// Parses the flat key = value format: one pair per line, '#' comments,
/// unknown keys rejected, missing keys keep their defaults.
inline Config parse_config(const std::string& text) {
  Config cfg;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("parse error at line " + std::to_string(line_no) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("parse error at line " + std::to_string(line_no) + ": expected key = value");

    if (key == "algorithm") cfg.algorithm = value;
    else if (key == "env") cfg.env = value;
    else if (key == "slip_prob") cfg.slip_prob = detail::parse_double(key, value);
    else if (key == "max_episode_steps") cfg.max_episode_steps = static_cast<int>(detail::parse_long(key, value));
    else if (key == "gamma") cfg.gamma = detail::parse_double(key, value);
    else if (key == "lr_policy") cfg.lr_policy = detail::parse_double(key, value);
    else if (key == "lr_q") cfg.lr_q = detail::parse_double(key, value);
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(detail::parse_long(key, value));
    else if (key == "n_step") cfg.n_step = static_cast<int>(detail::parse_long(key, value));
    else if (key == "grad_clip") cfg.grad_clip = detail::parse_double(key, value);
    else if (key == "value_coefficient") cfg.value_coefficient = detail::parse_double(key, value);
    else if (key == "entropy_coefficient") cfg.entropy_coefficient = detail::parse_double(key, value);
    else if (key == "epsilon_behavior") cfg.epsilon_behavior = detail::parse_double(key, value);
    else if (key == "behavior_policy") cfg.behavior_policy = value;
    else if (key == "mix_weight") cfg.mix_weight = detail::parse_double(key, value);
    else if (key == "snapshot_interval") cfg.snapshot_interval = static_cast<int>(detail::parse_long(key, value));
    else if (key == "policy_update_direction") cfg.policy_update_direction = value;
    else if (key == "q_update_direction") cfg.q_update_direction = value;
    else if (key == "total_steps") cfg.total_steps = detail::parse_long(key, value);
    else if (key == "eval_interval") cfg.eval_interval = static_cast<int>(detail::parse_long(key, value));
    else if (key == "eval_episodes") cfg.eval_episodes = static_cast<int>(detail::parse_long(key, value));
    else if (key == "model") cfg.model = value;
    else if (key == "hidden_width") cfg.hidden_width = static_cast<int>(detail::parse_long(key, value));
    else if (key == "hidden_layers") cfg.hidden_layers = static_cast<int>(detail::parse_long(key, value));
    else if (key == "seed") cfg.seed = detail::parse_long(key, value);
    else if (key == "out_path") cfg.out_path = value;
    else throw ConfigError("unknown key '" + key + "' at line " + std::to_string(line_no));
  }
  validate_config(cfg);
  return cfg;
}

inline std::string serialize_config(const Config& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "algorithm = " << cfg.algorithm << '\n'
     << "env = " << cfg.env << '\n'
     << "slip_prob = " << cfg.slip_prob << '\n'
     << "max_episode_steps = " << cfg.max_episode_steps << '\n'
     << "gamma = " << cfg.gamma << '\n'
     << "lr_policy = " << cfg.lr_policy << '\n'
     << "lr_q = " << cfg.lr_q << '\n'
     << "batch_size = " << cfg.batch_size << '\n'
     << "n_step = " << cfg.n_step << '\n'
     << "grad_clip = " << cfg.grad_clip << '\n'
     << "value_coefficient = " << cfg.value_coefficient << '\n'
     << "entropy_coefficient = " << cfg.entropy_coefficient << '\n'
     << "epsilon_behavior = " << cfg.epsilon_behavior << '\n'
     << "behavior_policy = " << cfg.behavior_policy << '\n'
     << "mix_weight = " << cfg.mix_weight << '\n'
     << "snapshot_interval = " << cfg.snapshot_interval << '\n'
     << "policy_update_direction = " << cfg.policy_update_direction << '\n'
     << "q_update_direction = " << cfg.q_update_direction << '\n'
     << "total_steps = " << cfg.total_steps << '\n'
     << "eval_interval = " << cfg.eval_interval << '\n'
     << "eval_episodes = " << cfg.eval_episodes << '\n'
     << "model = " << cfg.model << '\n'
     << "hidden_width = " << cfg.hidden_width << '\n'
     << "hidden_layers = " << cfg.hidden_layers << '\n'
     << "seed = " << cfg.seed << '\n'
     << "out_path = " << cfg.out_path << '\n';
  return os.str();
}

}  // namespace frl
