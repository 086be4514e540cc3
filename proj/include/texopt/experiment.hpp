#pragma once

// Run configuration, presets and the drivers behind each CLI subcommand.

#include <cstdint>
#include <filesystem>
#include <array>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "texopt/agents.hpp"
#include "texopt/process_env.hpp"
#include "texopt/taylor.hpp"

namespace texopt {

/// Invalid configuration; the message starts with the field path.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A simulation that cannot continue (strain cap or solver failure) outside an episode.
struct SimulationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DistanceStudyConfig {
  std::vector<std::size_t> bins = {256, 512};
  std::vector<std::size_t> neighbors = {1, 3};
  int steps = 30;
  double f = 0.02;
  Quaternion rotation;  // identity: tension along sample x
};

struct MaterialTestConfig {
  std::vector<std::size_t> bins = {256, 512, 8192};
  std::vector<std::size_t> neighbors = {1, 3, 25};
  int rollouts = 20;
  int rollout_steps = 10;
  std::size_t crystals = 250;
  std::uint64_t sample_seed = 7;
};

struct GoalSamplingConfig {
  int candidates = 40;
  int min_steps = 15;
  int max_steps = 30;
  double min_pairwise = 1.2;
  double min_from_initial = 0.75;
  int max_goals = 6;
  double modulus_window = 0.0;  // GPa; > 0 keeps E_ii within this of the first accepted goal
};

struct RunConfig {
  std::string mode = "single";  // single | multi | distance-study | material-test
  std::string preset = "paper";
  std::uint64_t seed = 1;
  std::string output = "out";
  std::string ablation = "none";  // none | no-shaping | no-augmentation
  EnvConfig env;
  AgentConfig agent;
  MaterialParams material;
  SimulationOptions simulation;
  std::vector<std::string> goals;  // texture files, relative to base_dir
  std::vector<int> target_actions;  // alternative to goals: target built by these actions
  DistanceStudyConfig distance_study;
  MaterialTestConfig material_test;
  GoalSamplingConfig goal_sampling;
  std::filesystem::path base_dir;  // not serialized
};

/// Preset values: `paper` uses the published settings, `desk` shrinks the
/// aggregate, horizon, episode count and grid.
RunConfig preset_config(const std::string& preset, const std::string& mode);

/// Preset chosen by the document's `preset` and `mode` fields (or by
/// preset_override when non-empty), then every other field overrides it.
/// Unknown fields and wrong types are ConfigErrors.
RunConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = {},
                       const std::string& preset_override = "");
RunConfig load_config(const std::filesystem::path& path, const std::string& preset_override = "");
std::string config_to_json(const RunConfig& config);

/// Sets the ablation switches; throws ConfigError for unknown names.
void apply_ablation(RunConfig& config, const std::string& name);

void validate_config(const RunConfig& config);

/// Texture after applying the given actions to the initial texture.
WeightedOrientationSet texture_after_actions(ProcessEnv& env, const std::vector<int>& actions);

/// Orientations scattered around one centre: a sharp texture component.
WeightedOrientationSet component_texture(const Quaternion& centre, double spread,
                                         std::size_t count, std::uint64_t seed);

struct RunSummary {
  std::vector<double> best_distance;  // per goal
  int committed_goal = 0;
  double initial_distance = 0.0;      // committed goal
  RunResult result;
};

/// Runs the single- or multi-goal optimizer and writes config.json,
/// episodes.csv, steps.csv, checkpoints/ and best_path.txt into out.
RunSummary run_experiment(const RunConfig& config, const std::filesystem::path& out,
                          bool verbose = false);

/// Goal with most greedy picks in the final fifth of the episodes.
int committed_goal(const RunResult& result, std::size_t goal_count);

struct DistanceStudyRow {
  std::size_t bins, neighbors;
  int t;
  double distance, relative;
};
std::vector<DistanceStudyRow> distance_study(const RunConfig& config);
void write_distance_study(std::ostream& out, const std::vector<DistanceStudyRow>& rows);

struct MaterialTestRow {
  std::size_t bins, neighbors;
  double mae_gpa, max_gpa;
};
struct MaterialTestResult {
  std::vector<std::array<double, 3>> moduli;  // per sampled texture, GPa
  std::vector<MaterialTestRow> rows;
};
/// Samples textures from random rollouts and compares Young's moduli of
/// each texture with those of its histogram representation.
MaterialTestResult material_test(const RunConfig& config);
std::vector<WeightedOrientationSet> sample_rollout_textures(const RunConfig& config);
void write_material_test(std::ostream& out, const MaterialTestResult& result);

struct PathStep {
  double f;
  Quaternion rotation;
};
std::vector<PathStep> read_best_path(const std::filesystem::path& path);
void write_best_path(const std::filesystem::path& path, const ProcessEnv& env,
                     const std::vector<int>& actions, int goal, double distance);
/// Action id of (f, q); throws std::invalid_argument when no action matches.
int action_id_of(const ActionSpace& actions, const PathStep& step);

/// Distances to the goal after each replayed step (first entry: initial state).
std::vector<double> replay_path(ProcessEnv& env, const Goal& goal,
                                const std::vector<PathStep>& steps);

/// Goal textures from random repeated-action rollouts, filtered by pairwise
/// distance and distance from the initial texture.
std::vector<WeightedOrientationSet> sample_goals(const RunConfig& config);

/// Goals named in the config (or the action-generated target).
GoalSet load_goals(const RunConfig& config, ProcessEnv& env);

}  // namespace texopt
