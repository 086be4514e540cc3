#pragma once

// Episodic processing environment: 201 discrete deformation actions applied
// to a crystal aggregate, GSH state features and inverse-distance rewards.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "texopt/odf_histogram.hpp"
#include "texopt/orientation_grid.hpp"
#include "texopt/taylor.hpp"

namespace texopt {

struct InvalidState : std::logic_error {
  using std::logic_error::logic_error;
};

inline constexpr std::size_t kStateFeatureCount = 44;
inline constexpr std::size_t kActionCount = 201;
inline constexpr int kNoOpAction = 200;
inline constexpr double kStepMagnitude = 0.02;
inline constexpr std::uint64_t kActionGridSeed = 20190;
inline constexpr std::uint64_t kInitialTextureSeed = 250;

/// Ids 0..99 stretch by +0.02 along rotation i, 100..199 compress by 0.02
/// along rotation i - 100, 200 does nothing.
class ActionSpace {
 public:
  explicit ActionSpace(std::shared_ptr<const OrientationGrid> rotations);
  static ActionSpace standard();

  [[nodiscard]] std::size_t size() const { return kActionCount; }
  [[nodiscard]] ProcessAction action(int id) const;
  [[nodiscard]] static bool is_noop(int id) { return id == kNoOpAction; }
  [[nodiscard]] const OrientationGrid& rotations() const { return *rotations_; }

 private:
  std::shared_ptr<const OrientationGrid> rotations_;
};

struct EnvConfig {
  int horizon = 100;          // K
  std::size_t bins = 512;     // J
  std::size_t neighbors = 3;  // k
  SoftWeighting weighting = SoftWeighting::InverseDistance;
  double gamma = 1.0;
  std::uint64_t grid_seed = 1;
  double strain_cap = 0.70;
  std::size_t crystals = 250;
  std::uint64_t texture_seed = kInitialTextureSeed;
  double distance_floor = 1e-4;
  std::size_t cache_entries = 4096;  // memoized aggregates, 0 disables

  /// Throws std::invalid_argument naming the offending key.
  void validate() const;
};

/// A target texture with its histogram and GSH features.
struct Goal {
  WeightedOrientationSet texture;
  Histogram histogram;
  std::vector<double> features;  // 42 values
};

/// Everything the agent sees plus the histogram needed to relabel rewards.
struct EnvState {
  std::vector<double> features;  // 42 GSH, t / K, eq strain
  std::shared_ptr<const Histogram> histogram;
  std::shared_ptr<const WeightedOrientationSet> texture;
  int t = 0;
  double eq_strain = 0.0;
};

struct StepResult {
  EnvState state;
  double shaped_reward = 0.0;
  double raw_reward = 0.0;  // 1/d on the final transition, else 0
  bool done = false;
  double raw_distance = 0.0;  // d(next texture, goal), floored
  double potential = 0.0;     // potential of the next state (0 when done)
  std::string terminal_reason;  // "", "horizon", "strain_cap", "sim_failure"
};

/// Shaped reward R + gamma Phi(s') - Phi(s) with Phi = 1/d and Phi(final) = 0.
double shaped_reward(double d_prev, double d_next, bool done, double gamma);

class ProcessEnv {
 public:
  ProcessEnv(EnvConfig config, MaterialParams material = {}, SimulationOptions sim = {});

  [[nodiscard]] const EnvConfig& config() const { return config_; }
  [[nodiscard]] const ActionSpace& actions() const { return actions_; }
  [[nodiscard]] const OrientationGrid& grid() const { return *grid_; }
  [[nodiscard]] const MaterialParams& material() const { return material_; }
  [[nodiscard]] const WeightedOrientationSet& initial_texture() const { return initial_texture_; }

  [[nodiscard]] Goal encode_goal(const WeightedOrientationSet& texture) const;
  [[nodiscard]] Histogram histogram_of(const WeightedOrientationSet& texture) const;
  /// chi-square distance clipped below at distance_floor.
  [[nodiscard]] double distance(const Histogram& h, const Goal& goal) const;

  void set_goal(const Goal& goal);
  [[nodiscard]] const Goal& goal() const;

  /// Back to the initial texture at t = 0. The seed is accepted for
  /// interface symmetry; the initial state does not depend on it.
  EnvState reset(std::uint64_t seed = 0);
  StepResult step(int action_id);

  [[nodiscard]] bool done() const { return done_; }
  [[nodiscard]] const EnvState& state() const { return state_; }
  [[nodiscard]] const CrystalAggregate& aggregate() const { return node_->aggregate; }
  [[nodiscard]] std::size_t simulated_steps() const { return simulated_steps_; }

 private:
  struct Node {
    CrystalAggregate aggregate;
    std::shared_ptr<const Histogram> histogram;
    std::shared_ptr<const WeightedOrientationSet> texture;
    std::vector<double> gsh;
  };
  enum class Outcome { Ok, StrainCap, Failure };
  struct Transition {
    Outcome outcome;
    std::shared_ptr<const Node> next;
  };

  std::shared_ptr<const Node> make_node(CrystalAggregate aggregate) const;
  EnvState make_state(const Node& node, int t) const;
  Transition simulate(int action_id);

  EnvConfig config_;
  MaterialParams material_;
  SimulationOptions sim_;
  ActionSpace actions_;
  std::shared_ptr<const OrientationGrid> grid_;
  WeightedOrientationSet initial_texture_;
  std::shared_ptr<const Node> root_;

  std::unique_ptr<Goal> goal_;
  std::shared_ptr<const Node> node_;
  std::vector<int> path_;  // non-noop actions since reset
  EnvState state_;
  bool done_ = true;

  std::map<std::vector<int>, Transition> cache_;
  std::size_t simulated_steps_ = 0;
};

/// One row of the episode log.
struct EpisodeLogRow {
  int episode = 0;
  int t = 0;
  int action_id = 0;
  double f = 0.0;
  Quaternion rotation;
  double raw_distance = 0.0;
  double shaped_reward = 0.0;
  double eq_strain = 0.0;
  std::string terminal_reason;
};

void write_episode_csv_header(std::ostream& out);
void write_episode_csv_row(std::ostream& out, const EpisodeLogRow& row);

}  // namespace texopt
