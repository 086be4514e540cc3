#include "texopt/agents.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <sstream>

namespace texopt {

AgentConfig AgentConfig::single_goal_defaults() { return {}; }

AgentConfig AgentConfig::multi_goal_defaults() {
  AgentConfig c;
  c.episodes = 200;
  c.hidden = {128, 256, 256, 128};
  c.target_sync = 500;
  c.eps_final = 0.0;
  c.eps_episodes = 190;
  c.batches_per_step = 4;
  c.replay_capacity = 250000;
  return c;
}

void AgentConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument(field + ": " + why);
  };
  if (episodes < 1) fail("episodes", "must be at least 1");
  for (int h : hidden) {
    if (h < 1) fail("hidden", "layer sizes must be positive");
  }
  if (target_sync < 1) fail("target_sync", "must be at least 1");
  for (auto [name, v] : {std::pair{"eps0", eps0}, {"eps_final", eps_final}, {"goal_eps0", goal_eps0},
                         {"goal_eps_final", goal_eps_final}}) {
    if (!(v >= 0.0 && v <= 1.0)) fail(name, "must lie in [0, 1]");
  }
  if (eps_episodes < 1) fail("eps_episodes", "must be at least 1");
  if (goal_eps_episodes < 1) fail("goal_eps_episodes", "must be at least 1");
  if (!(per_alpha >= 0.0)) fail("per_alpha", "must be non-negative");
  if (!(per_beta0 >= 0.0 && per_beta0 <= 1.0)) fail("per_beta0", "must lie in [0, 1]");
  if (replay_capacity < batch) fail("replay_capacity", "must hold at least one batch");
  if (!(priority_eps > 0.0)) fail("priority_eps", "must be positive");
  if (batch < 1) fail("batch", "must be at least 1");
  if (batches_per_step < 1) fail("batches_per_step", "must be at least 1");
  if (!(learning_rate > 0.0)) fail("learning_rate", "must be positive");
  if (warmup < 0) fail("warmup", "must be non-negative");
  if (checkpoint_every < 0) fail("checkpoint_every", "must be non-negative");
}

double epsilon(int episode, double start, double end, int n) {
  if (n < 1) throw std::invalid_argument("schedule length must be at least 1");
  if (episode >= n) return end;
  return start + (end - start) * static_cast<double>(episode) / static_cast<double>(n);
}

double goal_reward(const ProcessEnv& env, const Histogram& prev, const Histogram& next, bool done,
                   const Goal& goal, bool shaping) {
  const double d_next = env.distance(next, goal);
  if (!shaping) return done ? 1.0 / d_next : 0.0;
  return shaped_reward(env.distance(prev, goal), d_next, done, env.config().gamma);
}

namespace {

int argmax(const Eigen::Ref<const Eigen::VectorXd>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<int>(best);
}

}  // namespace

std::vector<double> ddqn_targets(const QNetwork& online, const QNetwork& target,
                                 const Eigen::MatrixXd& next_inputs,
                                 const std::vector<double>& rewards,
                                 const std::vector<char>& done, double gamma) {
  const auto n = static_cast<std::size_t>(next_inputs.cols());
  if (rewards.size() != n || done.size() != n) {
    throw std::invalid_argument("target batch vectors differ in length");
  }
  const Eigen::MatrixXd q_on = online.forward(next_inputs).q;
  const Eigen::MatrixXd q_tg = target.forward(next_inputs).q;
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = rewards[i];
    if (!done[i]) {
      const auto c = static_cast<Eigen::Index>(i);
      y[i] += gamma * q_tg(argmax(q_on.col(c)), c);
    }
  }
  return y;
}

GoalChoice select_goal(const GoalSet& goals, const EnvState& s0, const ProcessEnv& env,
                       const QNetwork& net, double goal_eps, GoalValue kind,
                       std::mt19937_64& rng) {
  if (goals.goals.empty()) throw std::invalid_argument("goal set is empty");
  if (goals.goals.size() == 1) return {0, true};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) < goal_eps) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(goals.goals.size()) - 1);
    return {pick(rng), false};
  }
  Eigen::MatrixXd inputs(net.architecture().inputs, static_cast<Eigen::Index>(goals.goals.size()));
  for (std::size_t g = 0; g < goals.goals.size(); ++g) {
    inputs.col(static_cast<Eigen::Index>(g)) = network_input(s0.features, goals.goals[g].features);
  }
  const ForwardResult fr = net.forward(inputs);
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < goals.goals.size(); ++g) {
    const auto c = static_cast<Eigen::Index>(g);
    const double value = kind == GoalValue::ValueStream ? fr.v[c] : fr.q.col(c).maxCoeff();
    const double score = value + 1.0 / env.distance(*s0.histogram, goals.goals[g]);
    if (score > best_score) {
      best_score = score;
      best = static_cast<int>(g);
    }
  }
  return {best, true};
}

std::vector<int> prune_best_subpath(const std::vector<int>& actions,
                                    const std::vector<double>& distances) {
  if (distances.size() != actions.size() + 1) {
    throw std::invalid_argument("need one distance per visited state");
  }
  const auto best = std::min_element(distances.begin(), distances.end()) - distances.begin();
  return {actions.begin(), actions.begin() + best};
}

SeedStreams::SeedStreams(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    0x5eedu};
  std::array<std::uint64_t, 4> s{};
  std::array<std::uint32_t, 8> raw{};
  seq.generate(raw.begin(), raw.end());
  for (std::size_t i = 0; i < 4; ++i) s[i] = (std::uint64_t{raw[2 * i]} << 32) | raw[2 * i + 1];
  explore.seed(s[0]);
  goal.seed(s[1]);
  replay.seed(s[2]);
  init = s[3];
}

namespace {

struct Transition {
  std::vector<double> state;
  int action;
  std::vector<double> next_state;
  std::shared_ptr<const Histogram> prev;
  std::shared_ptr<const Histogram> next;
  bool done;
};

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

class Trainer {
 public:
  Trainer(ProcessEnv& env, const GoalSet& goals, const AgentConfig& cfg, std::uint64_t seed,
          bool conditioned, const RunOptions& options)
      : env_(env),
        goals_(goals),
        cfg_(cfg),
        conditioned_(conditioned),
        options_(options),
        streams_(seed),
        replay_({cfg.replay_capacity, cfg.per_alpha, cfg.priority_eps, 100000}) {
    cfg_.validate();
    if (goals_.goals.empty()) throw std::invalid_argument("goal set is empty");
    Architecture arch;
    arch.inputs = static_cast<int>(kStateFeatureCount + (conditioned ? kGshFeatureSize : 0));
    arch.hidden = cfg_.hidden;
    arch.actions = static_cast<int>(kActionCount);
    online_ = QNetwork(arch, streams_.init);
    target_ = online_;
    adam_.lr = cfg_.learning_rate;
    total_steps_ = static_cast<std::uint64_t>(cfg_.episodes) * env_.config().horizon;
    result_.best_distance.assign(goals_.goals.size(), std::numeric_limits<double>::infinity());
    result_.best_path.assign(goals_.goals.size(), {});
  }

  RunResult run() {
    for (int e = 0; e < cfg_.episodes; ++e) {
      episode(e);
      if (options_.checkpoint_dir && cfg_.checkpoint_every > 0 &&
          (e + 1) % cfg_.checkpoint_every == 0 && e + 1 < cfg_.episodes) {
        checkpoint("episode_" + std::to_string(e + 1) + ".ckpt", e + 1);
      }
    }
    if (options_.checkpoint_dir) checkpoint("final.ckpt", cfg_.episodes);
    if (options_.replay_dump) replay_.dump(*options_.replay_dump);
    result_.replay_inserts = replay_.inserted();
    return std::move(result_);
  }

 private:
  static constexpr std::size_t kGshFeatureSize = 42;

  const std::vector<double>& goal_features(int g) const {
    static const std::vector<double> none;
    return conditioned_ ? goals_.goals[static_cast<std::size_t>(g)].features : none;
  }

  int act(const EnvState& s, int g, double eps) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (u(streams_.explore) < eps) {
      std::uniform_int_distribution<int> pick(0, static_cast<int>(kActionCount) - 1);
      return pick(streams_.explore);
    }
    const Eigen::VectorXd x = network_input(s.features, goal_features(g));
    return argmax(online_.forward(x).q.col(0));
  }

  void insert(const Transition& tr, int g) {
    Experience e;
    e.state = tr.state;
    e.action = tr.action;
    e.next_state = tr.next_state;
    e.reward = goal_reward(env_, *tr.prev, *tr.next, tr.done,
                           goals_.goals[static_cast<std::size_t>(g)], cfg_.shaping);
    e.goal = goal_features(g);
    e.done = tr.done;
    if (options_.on_insert) options_.on_insert(e, *tr.prev, *tr.next, g);
    replay_.insert(std::move(e));
  }

  void train() {
    const double beta = beta_schedule(cfg_.per_beta0, result_.env_steps, total_steps_);
    for (int b = 0; b < cfg_.batches_per_step; ++b) {
      const ReplaySample s = replay_.sample(cfg_.batch, beta, streams_.replay);
      const auto n = static_cast<Eigen::Index>(s.items.size());
      Eigen::MatrixXd x(online_.architecture().inputs, n), xn(online_.architecture().inputs, n);
      std::vector<int> actions(s.items.size());
      std::vector<double> rewards(s.items.size());
      std::vector<char> done(s.items.size());
      for (std::size_t i = 0; i < s.items.size(); ++i) {
        const Experience& e = *s.items[i];
        const auto c = static_cast<Eigen::Index>(i);
        x.col(c) = network_input(e.state, e.goal);
        xn.col(c) = network_input(e.next_state, e.goal);
        actions[i] = e.action;
        rewards[i] = e.reward;
        done[i] = e.done ? 1 : 0;
      }
      const auto y = ddqn_targets(online_, target_, xn, rewards, done, env_.config().gamma);
      const LossResult r = train_batch(online_, adam_, x, actions, y, s.weights, cfg_.loss);
      replay_.update_priorities(s.slots, s.serials, r.abs_td);
      ++result_.updates;
    }
  }

  void episode(int e) {
    const double eps = epsilon(e, cfg_.eps0, cfg_.eps_final, cfg_.eps_episodes);
    const double goal_eps = epsilon(e, cfg_.goal_eps0, cfg_.goal_eps_final, cfg_.goal_eps_episodes);

    EpisodeSummary sum;
    sum.episode = e;
    sum.epsilon = eps;
    EnvState s = env_.reset(0);
    if (conditioned_) {
      const GoalChoice c =
          select_goal(goals_, s, env_, online_, goal_eps, cfg_.goal_value, streams_.goal);
      sum.goal = c.goal;
      sum.selection = c.greedy ? "greedy" : "explore";
    } else {
      sum.selection = "fixed";
    }
    const Goal& goal = goals_.goals[static_cast<std::size_t>(sum.goal)];
    env_.set_goal(goal);

    // distances of every visited state to every goal
    std::vector<std::vector<double>> dist(goals_.goals.size());
    for (std::size_t g = 0; g < goals_.goals.size(); ++g) {
      dist[g].push_back(env_.distance(*s.histogram, goals_.goals[g]));
    }
    std::vector<Transition> collected;
    while (!env_.done()) {
      const int a = act(s, sum.goal, eps);
      const StepResult r = env_.step(a);
      Transition tr{s.features, a, r.state.features, s.histogram, r.state.histogram, r.done};
      for (std::size_t g = 0; g < goals_.goals.size(); ++g) {
        dist[g].push_back(env_.distance(*r.state.histogram, goals_.goals[g]));
      }
      const ProcessAction pa = env_.actions().action(a);
      result_.steps.push_back({e, sum.goal, r.state.t, a, pa.f, pa.rotation, r.raw_distance,
                               r.shaped_reward, r.raw_reward, r.state.eq_strain,
                               r.terminal_reason});
      sum.actions.push_back(a);
      sum.episode_return += cfg_.shaping ? r.shaped_reward : r.raw_reward;
      sum.terminal_reason = r.terminal_reason;
      ++result_.env_steps;

      if (conditioned_) {
        collected.push_back(std::move(tr));
      } else {
        insert(tr, 0);
      }
      if (static_cast<int>(result_.env_steps) >= cfg_.warmup && replay_.size() >= cfg_.batch) {
        train();
      }
      if (result_.env_steps % static_cast<std::uint64_t>(cfg_.target_sync) == 0) {
        sync_target(online_, target_);
      }
      s = r.state;
    }

    if (conditioned_) {
      for (std::size_t g = 0; g < goals_.goals.size(); ++g) {
        if (!cfg_.augmentation && static_cast<int>(g) != sum.goal) continue;
        for (const auto& tr : collected) insert(tr, static_cast<int>(g));
      }
    }

    const auto& pursued = dist[static_cast<std::size_t>(sum.goal)];
    sum.steps = static_cast<int>(sum.actions.size());
    sum.initial_distance = pursued.front();
    const auto it = std::min_element(pursued.begin(), pursued.end());
    sum.best_distance = *it;
    sum.best_t = static_cast<int>(it - pursued.begin());
    for (std::size_t g = 0; g < goals_.goals.size(); ++g) {
      const double best = *std::min_element(dist[g].begin(), dist[g].end());
      if (best < result_.best_distance[g]) {
        result_.best_distance[g] = best;
        result_.best_path[g] = prune_best_subpath(sum.actions, dist[g]);
      }
    }
    sum.running_best = result_.best_distance[static_cast<std::size_t>(sum.goal)];
    result_.goal_best.push_back(result_.best_distance);
    if (options_.verbose) {
      std::cerr << "episode " << e << " goal " << sum.goal << " (" << sum.selection
                << ") best " << sum.best_distance << " running " << sum.running_best << "\n";
    }
    result_.episodes.push_back(std::move(sum));
  }

  void checkpoint(const std::string& name, int episodes_done) {
    std::filesystem::create_directories(*options_.checkpoint_dir);
    Checkpoint c{online_, target_, adam_, {}};
    c.extras["episodes_done"] = std::to_string(episodes_done);
    c.extras["env_steps"] = std::to_string(result_.env_steps);
    c.extras["rng_explore"] = rng_state(streams_.explore);
    c.extras["rng_goal"] = rng_state(streams_.goal);
    c.extras["rng_replay"] = rng_state(streams_.replay);
    c.save(*options_.checkpoint_dir / name);
  }

  ProcessEnv& env_;
  const GoalSet& goals_;
  AgentConfig cfg_;
  bool conditioned_;
  const RunOptions& options_;
  SeedStreams streams_;
  PrioritizedReplay replay_;
  QNetwork online_, target_;
  Adam adam_;
  std::uint64_t total_steps_ = 0;
  RunResult result_;
};

}  // namespace

RunResult run_single_goal(ProcessEnv& env, const Goal& goal, const AgentConfig& cfg,
                          std::uint64_t seed, const RunOptions& options) {
  const GoalSet goals{{goal}, {"target"}};
  return Trainer(env, goals, cfg, seed, false, options).run();
}

RunResult run_multi_goal(ProcessEnv& env, const GoalSet& goals, const AgentConfig& cfg,
                         std::uint64_t seed, const RunOptions& options) {
  return Trainer(env, goals, cfg, seed, true, options).run();
}

}  // namespace texopt
