#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "texopt/kd_tree.hpp"
#include "texopt/orientation.hpp"

namespace texopt {

struct Neighbor {
  std::size_t bin;
  double distance;  // cubic_metric to the query
};

struct GridQuality {
  double mean_nn = 0.0;  // mean nearest-neighbour cubic distance
  double cv = 0.0;       // coefficient of variation of nearest-neighbour distances
};

/// Near-uniform orientation set in the cubic fundamental zone with a
/// nearest-neighbour index. Immutable once built.
class OrientationGrid {
 public:
  /// Haar oversampling (64 J candidates), farthest-point seeding and 50
  /// Lloyd sweeps. Deterministic for a fixed (count, seed).
  static OrientationGrid sample_uniform(std::size_t count, std::uint64_t seed);

  /// Wraps an explicit orientation list (reduced to the fundamental zone).
  static OrientationGrid from_orientations(std::vector<Quaternion> orientations,
                                           std::uint64_t seed = 0);

  static OrientationGrid load(const std::filesystem::path& path);
  /// Header `# J=<J> seed=<seed> cv=<cv>`, then `w x y z` per line.
  void save(const std::filesystem::path& path) const;

  [[nodiscard]] std::size_t size() const { return orientations_.size(); }
  [[nodiscard]] const std::vector<Quaternion>& orientations() const { return orientations_; }
  [[nodiscard]] const Quaternion& operator[](std::size_t i) const { return orientations_[i]; }
  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  /// Content hash of the orientation list; histograms carry it.
  [[nodiscard]] std::uint64_t fingerprint() const { return fingerprint_; }

  /// The k bins closest to q under cubic_metric, ascending by distance.
  [[nodiscard]] std::vector<Neighbor> nearest(const Quaternion& q, std::size_t k) const;

  [[nodiscard]] GridQuality quality() const;

 private:
  OrientationGrid(std::vector<Quaternion> orientations, std::uint64_t seed);

  std::vector<Quaternion> orientations_;
  std::uint64_t seed_ = 0;
  std::uint64_t fingerprint_ = 0;
  KdTree4 index_;                     // 48 J points: every symmetry and sign image
  std::vector<std::uint32_t> owner_;  // index point -> bin id
};

/// Process-wide memo of sample_uniform results keyed by (count, seed).
std::shared_ptr<const OrientationGrid> cached_grid(std::size_t count, std::uint64_t seed);

}  // namespace texopt
