#pragma once

// Deep Q-learning drivers: single-goal and multi-equivalent-goal training
// loops over ProcessEnv with prioritized replay and double/dueling targets.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "texopt/process_env.hpp"
#include "texopt/qnet.hpp"
#include "texopt/replay.hpp"

namespace texopt {

enum class GoalValue { ValueStream, MaxQ };

struct AgentConfig {
  int episodes = 100;
  std::vector<int> hidden = {128, 64, 32};
  int target_sync = 250;  // environment steps between target copies
  double eps0 = 0.5;
  double eps_final = 0.1;
  int eps_episodes = 50;
  double goal_eps0 = 1.0;
  double goal_eps_final = 0.0;
  int goal_eps_episodes = 190;
  double per_alpha = 0.6;
  double per_beta0 = 0.4;
  std::size_t replay_capacity = 100000;
  double priority_eps = 1e-6;
  std::size_t batch = 32;
  int batches_per_step = 1;
  double learning_rate = 5e-4;
  int warmup = 100;  // environment steps before the first update
  nn::LossKind loss = nn::LossKind::Huber;
  bool shaping = true;
  bool augmentation = true;
  GoalValue goal_value = GoalValue::ValueStream;
  int checkpoint_every = 0;  // episodes; 0 writes only the final checkpoint

  static AgentConfig single_goal_defaults();
  static AgentConfig multi_goal_defaults();
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Linear from start to end over n episodes, then end.
double epsilon(int episode, double start, double end, int n);

struct GoalSet {
  std::vector<Goal> goals;
  std::vector<std::string> names;
};

struct StepRecord {
  int episode = 0;
  int goal = 0;
  int t = 0;
  int action = 0;
  double f = 0.0;
  Quaternion rotation;
  double raw_distance = 0.0;
  double shaped_reward = 0.0;
  double raw_reward = 0.0;
  double eq_strain = 0.0;
  std::string terminal_reason;
};

struct EpisodeSummary {
  int episode = 0;
  int goal = 0;
  std::string selection;  // "fixed", "greedy", "explore"
  double initial_distance = 0.0;
  double best_distance = 0.0;  // min over visited states, pursued goal
  int best_t = 0;
  double running_best = 0.0;   // over all episodes so far, pursued goal
  int steps = 0;
  std::string terminal_reason;
  double epsilon = 0.0;
  double episode_return = 0.0;
  std::vector<int> actions;
};

struct RunResult {
  std::vector<EpisodeSummary> episodes;
  std::vector<StepRecord> steps;
  /// running best per goal after each episode, [episode][goal]
  std::vector<std::vector<double>> goal_best;
  std::vector<double> best_distance;             // per goal
  std::vector<std::vector<int>> best_path;       // per goal, pruned action ids
  std::uint64_t replay_inserts = 0;
  std::uint64_t updates = 0;
  std::uint64_t env_steps = 0;
};

struct RunOptions {
  std::optional<std::filesystem::path> checkpoint_dir;
  std::optional<std::filesystem::path> replay_dump;
  bool verbose = false;
  /// Called for every replay insertion with the histograms the reward came from.
  std::function<void(const Experience&, const Histogram& prev, const Histogram& next, int goal)>
      on_insert;
};

/// Reward of one transition measured against goal g (shaped or raw).
double goal_reward(const ProcessEnv& env, const Histogram& prev, const Histogram& next, bool done,
                   const Goal& goal, bool shaping);

/// Y = R + gamma Q_target(s', argmax_a Q_online(s', a)), bootstrap dropped when done.
std::vector<double> ddqn_targets(const QNetwork& online, const QNetwork& target,
                                 const Eigen::MatrixXd& next_inputs,
                                 const std::vector<double>& rewards,
                                 const std::vector<char>& done, double gamma);

struct GoalChoice {
  int goal = 0;
  bool greedy = true;
};

/// Greedy pick maximizes value(s0, g) + 1/d(s0, g); uniform with probability goal_eps.
GoalChoice select_goal(const GoalSet& goals, const EnvState& s0, const ProcessEnv& env,
                       const QNetwork& net, double goal_eps, GoalValue kind,
                       std::mt19937_64& rng);

/// Action prefix ending at the first state with minimal distance.
std::vector<int> prune_best_subpath(const std::vector<int>& actions,
                                    const std::vector<double>& distances);

/// Independent generator streams derived from one seed.
struct SeedStreams {
  std::mt19937_64 explore, goal, replay;
  std::uint64_t init;
  explicit SeedStreams(std::uint64_t seed);
};

RunResult run_single_goal(ProcessEnv& env, const Goal& goal, const AgentConfig& cfg,
                          std::uint64_t seed, const RunOptions& options = {});

RunResult run_multi_goal(ProcessEnv& env, const GoalSet& goals, const AgentConfig& cfg,
                         std::uint64_t seed, const RunOptions& options = {});

}  // namespace texopt
