#include "texopt/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace texopt {

namespace {

using json = nlohmann::json;

// Strict view of one JSON object: every key must be consumed exactly once
// by a typed read, leftovers are reported as unknown fields.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(label() + ": expected an object");
  }

  template <class T>
  void read(const std::string& key, T& out) {
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    parse(*it, child(key), out);
  }

  template <class F>
  void section(const std::string& key, F&& body) {
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    Reader sub(*it, child(key));
    body(sub);
    sub.finish();
  }

  void skip(const std::string& key) { seen_.insert(key); }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError(child(item.key()) + ": unknown field");
    }
  }

 private:
  [[nodiscard]] std::string label() const { return path_.empty() ? "<root>" : path_; }
  [[nodiscard]] std::string child(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  static void parse(const json& v, const std::string& at, int& out) {
    if (!v.is_number_integer()) throw ConfigError(at + ": expected an integer");
    const auto x = v.get<std::int64_t>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
      throw ConfigError(at + ": integer out of range");
    }
    out = static_cast<int>(x);
  }
  static void parse(const json& v, const std::string& at, std::uint64_t& out) {
    if (!v.is_number_unsigned()) throw ConfigError(at + ": expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }
  static void parse(const json& v, const std::string& at, double& out) {
    if (!v.is_number()) throw ConfigError(at + ": expected a number");
    out = v.get<double>();
  }
  static void parse(const json& v, const std::string& at, bool& out) {
    if (!v.is_boolean()) throw ConfigError(at + ": expected true or false");
    out = v.get<bool>();
  }
  static void parse(const json& v, const std::string& at, std::string& out) {
    if (!v.is_string()) throw ConfigError(at + ": expected a string");
    out = v.get<std::string>();
  }
  template <class T>
  static void parse(const json& v, const std::string& at, std::vector<T>& out) {
    if (!v.is_array()) throw ConfigError(at + ": expected an array");
    out.assign(v.size(), T{});
    for (std::size_t i = 0; i < v.size(); ++i) {
      parse(v[i], at + "[" + std::to_string(i) + "]", out[i]);
    }
  }
  static void parse(const json& v, const std::string& at, Quaternion& out) {
    std::vector<double> c;
    parse(v, at, c);
    if (c.size() != 4) throw ConfigError(at + ": expected [w, x, y, z]");
    try {
      // already-unit input is kept bit for bit so snapshots round-trip
      const double n2 = c[0] * c[0] + c[1] * c[1] + c[2] * c[2] + c[3] * c[3];
      out = std::abs(n2 - 1.0) < 1e-14 ? Quaternion{c[0], c[1], c[2], c[3]}
                                       : Quaternion::normalized(c[0], c[1], c[2], c[3]);
    } catch (const std::exception& e) {
      throw ConfigError(at + ": " + e.what());
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string loss_name(nn::LossKind k) { return k == nn::LossKind::Huber ? "huber" : "mse"; }
std::string goal_value_name(GoalValue g) {
  return g == GoalValue::ValueStream ? "value_stream" : "max_q";
}

void read_env(Reader& r, EnvConfig& e) {
  r.read("horizon", e.horizon);
  r.read("bins", e.bins);
  r.read("neighbors", e.neighbors);
  std::string weighting = to_string(e.weighting);
  r.read("weighting", weighting);
  try {
    e.weighting = soft_weighting_from_string(weighting);
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(std::string("env.weighting: ") + ex.what());
  }
  r.read("gamma", e.gamma);
  r.read("grid_seed", e.grid_seed);
  r.read("strain_cap", e.strain_cap);
  r.read("crystals", e.crystals);
  r.read("texture_seed", e.texture_seed);
  r.read("distance_floor", e.distance_floor);
  r.read("cache_entries", e.cache_entries);
}

void read_agent(Reader& r, AgentConfig& a) {
  r.read("episodes", a.episodes);
  r.read("hidden", a.hidden);
  r.read("target_sync", a.target_sync);
  r.read("eps0", a.eps0);
  r.read("eps_final", a.eps_final);
  r.read("eps_episodes", a.eps_episodes);
  r.read("goal_eps0", a.goal_eps0);
  r.read("goal_eps_final", a.goal_eps_final);
  r.read("goal_eps_episodes", a.goal_eps_episodes);
  r.read("per_alpha", a.per_alpha);
  r.read("per_beta0", a.per_beta0);
  r.read("replay_capacity", a.replay_capacity);
  r.read("priority_eps", a.priority_eps);
  r.read("batch", a.batch);
  r.read("batches_per_step", a.batches_per_step);
  r.read("learning_rate", a.learning_rate);
  r.read("warmup", a.warmup);
  std::string loss = loss_name(a.loss);
  r.read("loss", loss);
  if (loss == "huber") {
    a.loss = nn::LossKind::Huber;
  } else if (loss == "mse") {
    a.loss = nn::LossKind::Mse;
  } else {
    throw ConfigError("agent.loss: unknown loss '" + loss + "' (expected huber|mse)");
  }
  r.read("shaping", a.shaping);
  r.read("augmentation", a.augmentation);
  std::string gv = goal_value_name(a.goal_value);
  r.read("goal_value", gv);
  if (gv == "value_stream") {
    a.goal_value = GoalValue::ValueStream;
  } else if (gv == "max_q") {
    a.goal_value = GoalValue::MaxQ;
  } else {
    throw ConfigError("agent.goal_value: unknown '" + gv + "' (expected value_stream|max_q)");
  }
  r.read("checkpoint_every", a.checkpoint_every);
}

void read_material(Reader& r, MaterialParams& m) {
  r.read("c11", m.c11);
  r.read("c12", m.c12);
  r.read("c44", m.c44);
  r.read("gamma_dot0", m.gamma_dot0);
  r.read("rate_sensitivity", m.rate_sensitivity);
  r.read("tau0", m.tau0);
  r.read("tau1", m.tau1);
  r.read("theta0", m.theta0);
  r.read("theta1", m.theta1);
  r.read("q_coplanar", m.q_coplanar);
  r.read("q_noncoplanar", m.q_noncoplanar);
}

void read_simulation(Reader& r, SimulationOptions& s) {
  r.section("integration", [&](Reader& i) {
    i.read("max_slip_increment", s.integration.max_slip_increment);
    i.read("max_stress_change", s.integration.max_stress_change);
    i.read("min_substeps", s.integration.min_substeps);
    i.read("max_substeps", s.integration.max_substeps);
    i.read("max_newton_iterations", s.integration.max_newton_iterations);
  });
  r.read("strain_rate", s.strain_rate);
  r.read("balance_abs_tol", s.balance_abs_tol);
  r.read("balance_rel_tol", s.balance_rel_tol);
  r.read("balance_max_iterations", s.balance_max_iterations);
  r.read("fd_relative_step", s.fd_relative_step);
}

json quat_json(const Quaternion& q) { return json::array({q.w, q.x, q.y, q.z}); }

SimulationOptions sim_options(const RunConfig& c) {
  SimulationOptions s = c.simulation;
  s.strain_cap = c.env.strain_cap;
  return s;
}

WeightedOrientationSet initial_texture(std::size_t crystals, std::uint64_t seed) {
  return WeightedOrientationSet::uniform_weights(cached_grid(crystals, seed)->orientations());
}

std::string fmt17(double x) {
  std::ostringstream s;
  s << std::setprecision(17) << x;
  return s.str();
}

std::array<double, 3> moduli_of(const WeightedOrientationSet& t, const MaterialParams& m) {
  return {young_modulus(t, 1, m), young_modulus(t, 2, m), young_modulus(t, 3, m)};
}

}  // namespace

RunConfig preset_config(const std::string& preset, const std::string& mode) {
  RunConfig c;
  c.mode = mode;
  c.preset = preset;
  const bool multi = mode == "multi";
  c.agent = multi ? AgentConfig::multi_goal_defaults() : AgentConfig::single_goal_defaults();
  if (preset == "paper") return c;
  if (preset != "desk") throw ConfigError("preset: unknown preset '" + preset + "' (expected paper|desk)");
  c.env.crystals = 50;
  c.env.horizon = 30;
  c.env.bins = 256;
  c.env.neighbors = 3;
  c.agent.episodes = 30;
  // schedules keep their fraction of the run
  if (multi) {
    c.agent.eps_episodes = 28;
    c.agent.goal_eps_episodes = 28;
  } else {
    c.agent.eps_episodes = 15;
  }
  c.agent.target_sync = 100;
  c.material_test.crystals = 50;
  c.goal_sampling.candidates = 24;
  c.goal_sampling.min_steps = 10;
  c.goal_sampling.max_steps = 20;
  return c;
}

RunConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir,
                       const std::string& preset_override) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("<root>: malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("<root>: expected an object");
  std::string mode = "single";
  std::string preset = "paper";
  {
    Reader head(doc, "");
    head.read("mode", mode);
    head.read("preset", preset);
  }
  if (!preset_override.empty()) preset = preset_override;
  RunConfig c = preset_config(preset, mode);
  c.base_dir = base_dir;
  Reader r(doc, "");
  r.skip("mode");
  r.skip("preset");
  r.read("seed", c.seed);
  r.read("output", c.output);
  r.read("ablation", c.ablation);
  r.read("goals", c.goals);
  r.read("target_actions", c.target_actions);
  r.section("env", [&](Reader& s) { read_env(s, c.env); });
  r.section("agent", [&](Reader& s) { read_agent(s, c.agent); });
  r.section("material", [&](Reader& s) { read_material(s, c.material); });
  r.section("simulation", [&](Reader& s) { read_simulation(s, c.simulation); });
  r.section("distance_study", [&](Reader& s) {
    s.read("bins", c.distance_study.bins);
    s.read("neighbors", c.distance_study.neighbors);
    s.read("steps", c.distance_study.steps);
    s.read("f", c.distance_study.f);
    s.read("rotation", c.distance_study.rotation);
  });
  r.section("material_test", [&](Reader& s) {
    s.read("bins", c.material_test.bins);
    s.read("neighbors", c.material_test.neighbors);
    s.read("rollouts", c.material_test.rollouts);
    s.read("rollout_steps", c.material_test.rollout_steps);
    s.read("crystals", c.material_test.crystals);
    s.read("sample_seed", c.material_test.sample_seed);
  });
  r.section("goal_sampling", [&](Reader& s) {
    s.read("candidates", c.goal_sampling.candidates);
    s.read("min_steps", c.goal_sampling.min_steps);
    s.read("max_steps", c.goal_sampling.max_steps);
    s.read("min_pairwise", c.goal_sampling.min_pairwise);
    s.read("min_from_initial", c.goal_sampling.min_from_initial);
    s.read("max_goals", c.goal_sampling.max_goals);
    s.read("modulus_window", c.goal_sampling.modulus_window);
  });
  r.finish();
  apply_ablation(c, c.ablation);
  validate_config(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path, const std::string& preset_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.parent_path(), preset_override);
}

std::string config_to_json(const RunConfig& c) {
  json j;
  j["mode"] = c.mode;
  j["preset"] = c.preset;
  j["seed"] = c.seed;
  j["output"] = c.output;
  j["ablation"] = c.ablation;
  j["goals"] = c.goals;
  j["target_actions"] = c.target_actions;
  const auto& e = c.env;
  j["env"] = {{"horizon", e.horizon},
              {"bins", e.bins},
              {"neighbors", e.neighbors},
              {"weighting", to_string(e.weighting)},
              {"gamma", e.gamma},
              {"grid_seed", e.grid_seed},
              {"strain_cap", e.strain_cap},
              {"crystals", e.crystals},
              {"texture_seed", e.texture_seed},
              {"distance_floor", e.distance_floor},
              {"cache_entries", e.cache_entries}};
  const auto& a = c.agent;
  j["agent"] = {{"episodes", a.episodes},
                {"hidden", a.hidden},
                {"target_sync", a.target_sync},
                {"eps0", a.eps0},
                {"eps_final", a.eps_final},
                {"eps_episodes", a.eps_episodes},
                {"goal_eps0", a.goal_eps0},
                {"goal_eps_final", a.goal_eps_final},
                {"goal_eps_episodes", a.goal_eps_episodes},
                {"per_alpha", a.per_alpha},
                {"per_beta0", a.per_beta0},
                {"replay_capacity", a.replay_capacity},
                {"priority_eps", a.priority_eps},
                {"batch", a.batch},
                {"batches_per_step", a.batches_per_step},
                {"learning_rate", a.learning_rate},
                {"warmup", a.warmup},
                {"loss", loss_name(a.loss)},
                {"shaping", a.shaping},
                {"augmentation", a.augmentation},
                {"goal_value", goal_value_name(a.goal_value)},
                {"checkpoint_every", a.checkpoint_every}};
  const auto& m = c.material;
  j["material"] = {{"c11", m.c11},
                   {"c12", m.c12},
                   {"c44", m.c44},
                   {"gamma_dot0", m.gamma_dot0},
                   {"rate_sensitivity", m.rate_sensitivity},
                   {"tau0", m.tau0},
                   {"tau1", m.tau1},
                   {"theta0", m.theta0},
                   {"theta1", m.theta1},
                   {"q_coplanar", m.q_coplanar},
                   {"q_noncoplanar", m.q_noncoplanar}};
  const auto& s = c.simulation;
  j["simulation"] = {
      {"integration",
       {{"max_slip_increment", s.integration.max_slip_increment},
        {"max_stress_change", s.integration.max_stress_change},
        {"min_substeps", s.integration.min_substeps},
        {"max_substeps", s.integration.max_substeps},
        {"max_newton_iterations", s.integration.max_newton_iterations}}},
      {"strain_rate", s.strain_rate},
      {"balance_abs_tol", s.balance_abs_tol},
      {"balance_rel_tol", s.balance_rel_tol},
      {"balance_max_iterations", s.balance_max_iterations},
      {"fd_relative_step", s.fd_relative_step}};
  const auto& d = c.distance_study;
  j["distance_study"] = {{"bins", d.bins},
                         {"neighbors", d.neighbors},
                         {"steps", d.steps},
                         {"f", d.f},
                         {"rotation", quat_json(d.rotation)}};
  const auto& t = c.material_test;
  j["material_test"] = {{"bins", t.bins},
                        {"neighbors", t.neighbors},
                        {"rollouts", t.rollouts},
                        {"rollout_steps", t.rollout_steps},
                        {"crystals", t.crystals},
                        {"sample_seed", t.sample_seed}};
  const auto& g = c.goal_sampling;
  j["goal_sampling"] = {{"candidates", g.candidates},
                        {"min_steps", g.min_steps},
                        {"max_steps", g.max_steps},
                        {"min_pairwise", g.min_pairwise},
                        {"min_from_initial", g.min_from_initial},
                        {"max_goals", g.max_goals},
                        {"modulus_window", g.modulus_window}};
  return j.dump(2) + "\n";
}

void apply_ablation(RunConfig& c, const std::string& name) {
  if (name == "none") {
  } else if (name == "no-shaping") {
    c.agent.shaping = false;
  } else if (name == "no-augmentation") {
    c.agent.augmentation = false;
  } else {
    throw ConfigError("ablation: unknown ablation '" + name +
                      "' (expected none|no-shaping|no-augmentation)");
  }
  c.ablation = name;
}

void validate_config(const RunConfig& c) {
  static const std::set<std::string> modes = {"single", "multi", "distance-study",
                                              "material-test", "grid-gen"};
  if (!modes.count(c.mode)) {
    throw ConfigError("mode: unknown mode '" + c.mode +
                      "' (expected single|multi|distance-study|material-test|grid-gen)");
  }
  auto wrap = [](const std::string& prefix, auto&& check) {
    try {
      check();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(prefix + "." + e.what());
    }
  };
  wrap("env", [&] { c.env.validate(); });
  wrap("agent", [&] { c.agent.validate(); });
  wrap("material", [&] { c.material.validate(); });
  for (std::size_t i = 0; i < c.target_actions.size(); ++i) {
    const int a = c.target_actions[i];
    if (a < 0 || a >= static_cast<int>(kActionCount)) {
      throw ConfigError("target_actions[" + std::to_string(i) + "]: action id out of range [0, 200]");
    }
  }
  if (c.mode == "single") {
    const std::size_t sources = c.goals.size() + (c.target_actions.empty() ? 0 : 1);
    if (sources != 1) {
      throw ConfigError("goals: single mode needs exactly one goal file or target_actions");
    }
  }
  if (c.mode == "multi" && c.goals.empty() && c.target_actions.empty()) {
    throw ConfigError("goals: multi mode needs at least one goal");
  }
  const auto& d = c.distance_study;
  if (d.steps < 1) throw ConfigError("distance_study.steps: must be at least 1");
  if (!(std::abs(d.f) > 0.0 && std::abs(d.f) <= 0.02)) {
    throw ConfigError("distance_study.f: must satisfy 0 < |f| <= 0.02");
  }
  for (auto j : d.bins) {
    if (j < 1) throw ConfigError("distance_study.bins: must be positive");
  }
  const auto& t = c.material_test;
  if (t.rollouts < 1) throw ConfigError("material_test.rollouts: must be at least 1");
  if (t.rollout_steps < 1) throw ConfigError("material_test.rollout_steps: must be at least 1");
  if (t.crystals < 1) throw ConfigError("material_test.crystals: must be positive");
  const auto& g = c.goal_sampling;
  if (g.min_steps < 1 || g.max_steps < g.min_steps) {
    throw ConfigError("goal_sampling.max_steps: need 1 <= min_steps <= max_steps");
  }
  if (g.candidates < 1) throw ConfigError("goal_sampling.candidates: must be at least 1");
  if (g.max_goals < 1) throw ConfigError("goal_sampling.max_goals: must be at least 1");
}

WeightedOrientationSet texture_after_actions(ProcessEnv& env, const std::vector<int>& actions) {
  env.set_goal(env.encode_goal(env.initial_texture()));
  env.reset();
  for (int a : actions) {
    if (env.done()) break;
    env.step(a);
  }
  return *env.state().texture;
}

WeightedOrientationSet component_texture(const Quaternion& centre, double spread,
                                         std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Quaternion> q;
  q.reserve(count);
  for (std::size_t i = 0; i < count; ++i) q.push_back(centre * random_small_rotation(rng, spread));
  return WeightedOrientationSet::uniform_weights(q);
}

GoalSet load_goals(const RunConfig& c, ProcessEnv& env) {
  GoalSet set;
  for (const auto& g : c.goals) {
    const std::filesystem::path p = c.base_dir / g;
    set.goals.push_back(env.encode_goal(WeightedOrientationSet::load(p)));
    set.names.push_back(std::filesystem::path(g).filename().string());
  }
  if (!c.target_actions.empty()) {
    set.goals.push_back(env.encode_goal(texture_after_actions(env, c.target_actions)));
    set.names.push_back("target_actions");
  }
  return set;
}

int committed_goal(const RunResult& result, std::size_t goal_count) {
  if (goal_count <= 1) return 0;
  const std::size_t n = result.episodes.size();
  const std::size_t tail = (n + 4) / 5;
  std::vector<int> picks(goal_count, 0);
  int total = 0;
  for (std::size_t i = n - tail; i < n; ++i) {
    const auto& e = result.episodes[i];
    if (e.selection == "greedy") {
      ++picks[static_cast<std::size_t>(e.goal)];
      ++total;
    }
  }
  if (total == 0) {
    return static_cast<int>(std::min_element(result.best_distance.begin(),
                                              result.best_distance.end()) -
                            result.best_distance.begin());
  }
  return static_cast<int>(std::max_element(picks.begin(), picks.end()) - picks.begin());
}

void write_best_path(const std::filesystem::path& path, const ProcessEnv& env,
                     const std::vector<int>& actions, int goal, double distance) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# goal=" << goal << " distance=" << fmt17(distance) << " steps=" << actions.size() << "\n";
  out << "# f qw qx qy qz\n";
  out << std::setprecision(17);
  for (int id : actions) {
    const auto a = env.actions().action(id);
    out << a.f << ' ' << a.rotation.w << ' ' << a.rotation.x << ' ' << a.rotation.y << ' '
        << a.rotation.z << "\n";
  }
}

std::vector<PathStep> read_best_path(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<PathStep> steps;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream s(line);
    PathStep p;
    if (!(s >> p.f)) continue;
    if (!(s >> p.rotation.w >> p.rotation.x >> p.rotation.y >> p.rotation.z)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": expected f qw qx qy qz");
    }
    steps.push_back(p);
  }
  return steps;
}

int action_id_of(const ActionSpace& actions, const PathStep& step) {
  if (step.f == 0.0) return kNoOpAction;
  if (std::abs(std::abs(step.f) - kStepMagnitude) > 1e-12) {
    throw std::invalid_argument("no action with f = " + fmt17(step.f));
  }
  const auto& rot = actions.rotations().orientations();
  for (std::size_t i = 0; i < rot.size(); ++i) {
    if (std::abs(dot(rot[i], step.rotation)) > 1.0 - 1e-12) {
      return static_cast<int>(i) + (step.f > 0.0 ? 0 : 100);
    }
  }
  throw std::invalid_argument("rotation is not in the action set");
}

std::vector<double> replay_path(ProcessEnv& env, const Goal& goal,
                                const std::vector<PathStep>& steps) {
  env.set_goal(goal);
  const auto s0 = env.reset();
  std::vector<double> d = {env.distance(*s0.histogram, goal)};
  for (const auto& p : steps) {
    if (env.done()) break;
    d.push_back(env.step(action_id_of(env.actions(), p)).raw_distance);
  }
  return d;
}

RunSummary run_experiment(const RunConfig& config, const std::filesystem::path& out,
                          bool verbose) {
  if (config.mode != "single" && config.mode != "multi") {
    throw ConfigError("mode: run needs single or multi, got '" + config.mode + "'");
  }
  validate_config(config);
  std::filesystem::create_directories(out);

  // goal files travel with the artifact so the snapshot reruns stand-alone
  RunConfig snap = config;
  snap.base_dir = out;
  snap.goals.clear();
  if (!config.goals.empty()) std::filesystem::create_directories(out / "goals");
  // plain file names unless two collide, so a rerun from the snapshot keeps the same names
  std::set<std::string> stems;
  for (const auto& g : config.goals) stems.insert(std::filesystem::path(g).filename().string());
  const bool prefix = stems.size() != config.goals.size();
  for (std::size_t i = 0; i < config.goals.size(); ++i) {
    const std::filesystem::path src = config.base_dir / config.goals[i];
    const std::string name = (prefix ? std::to_string(i) + "_" : "") + src.filename().string();
    const auto dst = out / "goals" / name;
    if (std::filesystem::exists(dst) && std::filesystem::equivalent(src, dst)) {
      // rerun in place
    } else {
      std::filesystem::copy_file(src, dst, std::filesystem::copy_options::overwrite_existing);
    }
    snap.goals.push_back("goals/" + name);
  }
  snap.output = out.string();
  {
    std::ofstream cfg(out / "config.json");
    cfg << config_to_json(snap);
  }

  ProcessEnv env(config.env, config.material, sim_options(config));
  const GoalSet goals = load_goals(snap, env);

  RunOptions options;
  options.checkpoint_dir = out / "checkpoints";
  options.verbose = verbose;
  RunSummary summary;
  if (config.mode == "single") {
    summary.result = run_single_goal(env, goals.goals.front(), config.agent, config.seed, options);
  } else {
    summary.result = run_multi_goal(env, goals, config.agent, config.seed, options);
  }
  const auto& r = summary.result;
  summary.best_distance = r.best_distance;
  summary.committed_goal = committed_goal(r, goals.goals.size());
  {
    env.set_goal(goals.goals[static_cast<std::size_t>(summary.committed_goal)]);
    const auto s0 = env.reset();
    summary.initial_distance = env.distance(*s0.histogram, env.goal());
  }

  std::ofstream ep(out / "episodes.csv");
  ep << "episode,goal,selection,initial_distance,best_distance,best_t,running_best,steps,"
        "terminal_reason,epsilon,episode_return,actions\n";
  ep << std::setprecision(17);
  for (const auto& e : r.episodes) {
    ep << e.episode << ',' << e.goal << ',' << e.selection << ',' << e.initial_distance << ','
       << e.best_distance << ',' << e.best_t << ',' << e.running_best << ',' << e.steps << ','
       << e.terminal_reason << ',' << e.epsilon << ',' << e.episode_return << ',';
    for (std::size_t i = 0; i < e.actions.size(); ++i) ep << (i ? " " : "") << e.actions[i];
    ep << "\n";
  }

  std::ofstream st(out / "steps.csv");
  write_episode_csv_header(st);
  for (const auto& s : r.steps) {
    EpisodeLogRow row;
    row.episode = s.episode;
    row.t = s.t;
    row.action_id = s.action;
    row.f = s.f;
    row.rotation = s.rotation;
    row.raw_distance = s.raw_distance;
    row.shaped_reward = s.shaped_reward;
    row.eq_strain = s.eq_strain;
    row.terminal_reason = s.terminal_reason;
    write_episode_csv_row(st, row);
  }

  std::ofstream gb(out / "goal_best.csv");
  gb << "episode";
  for (const auto& n : goals.names) gb << ',' << n;
  gb << "\n" << std::setprecision(17);
  for (std::size_t e = 0; e < r.goal_best.size(); ++e) {
    gb << e;
    for (double d : r.goal_best[e]) gb << ',' << d;
    gb << "\n";
  }

  const auto g = static_cast<std::size_t>(summary.committed_goal);
  write_best_path(out / "best_path.txt", env, r.best_path[g], summary.committed_goal,
                  r.best_distance[g]);
  return summary;
}

std::vector<DistanceStudyRow> distance_study(const RunConfig& c) {
  const auto& d = c.distance_study;
  const auto sim = sim_options(c);
  auto agg = CrystalAggregate::from_texture(initial_texture(c.env.crystals, c.env.texture_seed),
                                            c.material);
  std::vector<WeightedOrientationSet> textures = {agg.texture()};
  for (int t = 0; t < d.steps; ++t) {
    auto step = apply_process_step(agg, {d.f, d.rotation}, c.material, sim);
    if (step.cap_exceeded) {
      throw SimulationFailure("distance study hit the strain cap at step " + std::to_string(t + 1));
    }
    agg = std::move(step.aggregate);
    textures.push_back(agg.texture());
  }
  std::vector<DistanceStudyRow> rows;
  for (auto bins : d.bins) {
    const auto grid = cached_grid(bins, c.env.grid_seed);
    for (auto k : d.neighbors) {
      const HistogramParams hp{k, c.env.weighting};
      const auto final_h = build_histogram(*grid, textures.back(), hp);
      std::vector<double> dist;
      for (const auto& tex : textures) dist.push_back(chi_square_distance(build_histogram(*grid, tex, hp), final_h));
      for (std::size_t t = 0; t < dist.size(); ++t) {
        rows.push_back({bins, k, static_cast<int>(t), dist[t], dist[0] > 0.0 ? dist[t] / dist[0] : 0.0});
      }
    }
  }
  return rows;
}

void write_distance_study(std::ostream& out, const std::vector<DistanceStudyRow>& rows) {
  out << "J,k,t,distance,relative_distance\n" << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.bins << ',' << r.neighbors << ',' << r.t << ',' << r.distance << ',' << r.relative << "\n";
  }
}

std::vector<WeightedOrientationSet> sample_rollout_textures(const RunConfig& c) {
  const auto& m = c.material_test;
  const auto sim = sim_options(c);
  const auto actions = ActionSpace::standard();
  const auto start = CrystalAggregate::from_texture(
      initial_texture(m.crystals, c.env.texture_seed), c.material);
  std::mt19937_64 rng(m.sample_seed);
  std::uniform_int_distribution<int> pick(0, kNoOpAction - 1);
  const std::size_t wanted = static_cast<std::size_t>(m.rollouts) * m.rollout_steps;
  std::vector<WeightedOrientationSet> out;
  int attempts = 0;
  while (out.size() < wanted) {
    if (++attempts > 4 * m.rollouts) {
      throw SimulationFailure("material test: rollouts keep hitting the strain cap");
    }
    auto agg = start;
    for (int t = 0; t < m.rollout_steps && out.size() < wanted; ++t) {
      auto step = apply_process_step(agg, actions.action(pick(rng)), c.material, sim);
      if (step.cap_exceeded) break;
      agg = std::move(step.aggregate);
      out.push_back(agg.texture());
    }
  }
  return out;
}

MaterialTestResult material_test(const RunConfig& c) {
  const auto textures = sample_rollout_textures(c);
  MaterialTestResult result;
  for (const auto& t : textures) result.moduli.push_back(moduli_of(t, c.material));
  for (auto bins : c.material_test.bins) {
    const auto grid = cached_grid(bins, c.env.grid_seed);
    for (auto k : c.material_test.neighbors) {
      double sum = 0.0;
      double worst = 0.0;
      for (std::size_t i = 0; i < textures.size(); ++i) {
        const auto h = build_histogram(*grid, textures[i], {k, c.env.weighting});
        const auto e = moduli_of(histogram_texture(*grid, h), c.material);
        for (int a = 0; a < 3; ++a) {
          const double err = std::abs(e[a] - result.moduli[i][a]);
          sum += err;
          worst = std::max(worst, err);
        }
      }
      result.rows.push_back({bins, k, sum / (3.0 * textures.size()), worst});
    }
  }
  return result;
}

void write_material_test(std::ostream& out, const MaterialTestResult& r) {
  out << "J,k,mae_gpa,max_error_gpa\n" << std::setprecision(17);
  for (const auto& row : r.rows) {
    out << row.bins << ',' << row.neighbors << ',' << row.mae_gpa << ',' << row.max_gpa << "\n";
  }
}

std::vector<WeightedOrientationSet> sample_goals(const RunConfig& c) {
  const auto& g = c.goal_sampling;
  ProcessEnv env(c.env, c.material, sim_options(c));
  const Goal grey = env.encode_goal(env.initial_texture());
  std::mt19937_64 rng(c.seed);
  std::uniform_int_distribution<int> pick(0, kNoOpAction - 1);
  std::uniform_int_distribution<int> length(g.min_steps, g.max_steps);
  std::vector<WeightedOrientationSet> accepted;
  std::vector<Goal> encoded;
  std::array<double, 3> reference{};
  for (int cand = 0; cand < g.candidates && static_cast<int>(accepted.size()) < g.max_goals; ++cand) {
    // two repeated actions: long enough strokes to leave the grey texture
    const int a = pick(rng);
    const int b = pick(rng);
    const int n = length(rng);
    std::vector<int> seq(static_cast<std::size_t>(n), a);
    std::fill(seq.begin() + n / 2, seq.end(), b);
    const auto tex = texture_after_actions(env, seq);
    const Goal goal = env.encode_goal(tex);
    if (env.distance(goal.histogram, grey) <= g.min_from_initial) continue;
    bool diverse = true;
    for (const auto& other : encoded) diverse = diverse && env.distance(goal.histogram, other) > g.min_pairwise;
    if (!diverse) continue;
    if (g.modulus_window > 0.0) {
      const auto e = moduli_of(tex, c.material);
      if (accepted.empty()) {
        reference = e;
      } else {
        bool inside = true;
        for (int i = 0; i < 3; ++i) inside = inside && std::abs(e[i] - reference[i]) <= g.modulus_window;
        if (!inside) continue;
      }
    }
    accepted.push_back(tex);
    encoded.push_back(goal);
  }
  return accepted;
}

}  // namespace texopt
