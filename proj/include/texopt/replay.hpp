#pragma once

// Proportional prioritized replay over a ring buffer with a sum tree.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

namespace texopt {

struct Experience {
  std::vector<double> state;       // 44 values
  int action = 0;
  std::vector<double> next_state;  // 44 values
  double reward = 0.0;             // shaped (or raw, for the no-shaping ablation)
  std::vector<double> goal;        // 42 values, empty for single-goal runs
  bool done = false;
};

/// Binary sum tree over a fixed number of leaves.
class SumTree {
 public:
  explicit SumTree(std::size_t leaves);

  void set(std::size_t leaf, double value);
  [[nodiscard]] double get(std::size_t leaf) const { return nodes_[base_ + leaf]; }
  [[nodiscard]] double total() const { return nodes_[1]; }
  [[nodiscard]] std::size_t leaves() const { return leaves_; }
  /// Leaf whose cumulative interval contains mass (clamped to a positive leaf).
  [[nodiscard]] std::size_t find(double mass) const;
  /// Recomputes every internal node from the leaves.
  void rebuild();
  /// Largest |parent - (left + right)| over internal nodes.
  [[nodiscard]] double max_inconsistency() const;

 private:
  std::size_t leaves_;
  std::size_t base_;
  std::vector<double> nodes_;  // 1-based heap layout
};

struct ReplayConfig {
  std::size_t capacity = 100000;
  double alpha = 0.6;
  double priority_eps = 1e-6;
  std::size_t rebuild_interval = 100000;  // updates between exact tree rebuilds
};

struct ReplaySample {
  std::vector<const Experience*> items;
  std::vector<std::size_t> slots;
  std::vector<std::uint64_t> serials;  // insertion counters, detect eviction
  std::vector<double> weights;         // IS weights, max 1
};

class PrioritizedReplay {
 public:
  explicit PrioritizedReplay(ReplayConfig config);

  [[nodiscard]] std::size_t size() const { return size_; }
  [[nodiscard]] std::size_t capacity() const { return config_.capacity; }
  [[nodiscard]] const ReplayConfig& config() const { return config_; }
  [[nodiscard]] double max_priority() const { return max_priority_; }
  [[nodiscard]] double priority(std::size_t slot) const { return tree_.get(slot); }
  [[nodiscard]] const SumTree& tree() const { return tree_; }
  [[nodiscard]] std::uint64_t inserted() const { return next_serial_; }
  [[nodiscard]] std::size_t stale_updates() const { return stale_updates_; }
  [[nodiscard]] const Experience& at(std::size_t slot) const { return items_.at(slot); }

  /// Stores with the current maximum priority, evicting the oldest at capacity.
  void insert(Experience e);

  /// batch i.i.d. draws with probability p_i / sum p. Throws std::logic_error
  /// when fewer than batch items are stored.
  ReplaySample sample(std::size_t batch, double beta, std::mt19937_64& rng) const;

  /// p = (|delta| + eps)^alpha for each still-present item.
  void update_priorities(const std::vector<std::size_t>& slots,
                         const std::vector<std::uint64_t>& serials,
                         const std::vector<double>& abs_td);

  /// Text dump, one experience per line.
  void dump(const std::filesystem::path& path) const;

 private:
  ReplayConfig config_;
  SumTree tree_;
  std::vector<Experience> items_;
  std::vector<std::uint64_t> serial_of_;
  std::size_t size_ = 0;
  std::size_t cursor_ = 0;
  std::uint64_t next_serial_ = 0;
  double max_priority_ = 1.0;
  std::size_t updates_since_rebuild_ = 0;
  std::size_t stale_updates_ = 0;
};

/// Linear beta schedule from beta0 to 1 over total_steps, then 1.
double beta_schedule(double beta0, std::uint64_t step, std::uint64_t total_steps);

}  // namespace texopt
