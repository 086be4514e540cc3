#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "texopt/orientation.hpp"
#include "texopt/orientation_grid.hpp"

namespace texopt {

struct WeightedOrientation {
  Quaternion orientation;
  double volume = 1.0;
};

/// A crystallographic texture: orientations with positive volumes.
class WeightedOrientationSet {
 public:
  WeightedOrientationSet() = default;
  explicit WeightedOrientationSet(std::vector<WeightedOrientation> entries);

  /// Equal volumes for every orientation.
  static WeightedOrientationSet uniform_weights(const std::vector<Quaternion>& orientations);

  /// One line per crystal: `volume w x y z`; '#' starts a comment.
  static WeightedOrientationSet load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  [[nodiscard]] const std::vector<WeightedOrientation>& entries() const { return entries_; }
  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] double total_volume() const { return total_volume_; }

  /// Every orientation composed on the right with g (crystal symmetry).
  [[nodiscard]] WeightedOrientationSet right_compose(const Quaternion& g) const;
  /// Every orientation rotated in the sample frame: q -> r * q.
  [[nodiscard]] WeightedOrientationSet left_compose(const Quaternion& r) const;

 private:
  std::vector<WeightedOrientation> entries_;
  double total_volume_ = 0.0;
};

/// Distance-to-weight rule for the soft bin assignment.
enum class SoftWeighting {
  InverseDistance,       // w_i proportional to 1 / (phi_i + 1e-12)
  ProportionalDistance,  // w_i proportional to phi_i, the literal printed form
};

std::string to_string(SoftWeighting w);
SoftWeighting soft_weighting_from_string(const std::string& name);

struct HistogramParams {
  std::size_t k = 3;
  SoftWeighting weighting = SoftWeighting::InverseDistance;
};

using SparseWeights = std::vector<std::pair<std::size_t, double>>;

/// Weights over the k nearest bins of h; sums to one. A query within 1e-12
/// of a bin centre puts all mass on that bin.
SparseWeights soft_assign(const OrientationGrid& grid, const Quaternion& h, std::size_t k,
                          SoftWeighting weighting = SoftWeighting::InverseDistance);

struct Histogram {
  std::vector<double> bins;
  std::uint64_t grid_fingerprint = 0;

  [[nodiscard]] std::size_t size() const { return bins.size(); }
  [[nodiscard]] double sum() const;
  /// CSV with header `bin_id,mass`.
  void save_csv(const std::filesystem::path& path) const;
};

Histogram build_histogram(const OrientationGrid& grid, const WeightedOrientationSet& texture,
                          const HistogramParams& params = {});

/// Sum over bins of (a - b)^2 / (a + b); empty bin pairs contribute zero.
double chi_square_distance(const Histogram& a, const Histogram& b);

/// Bin centres weighted by bin mass (empty bins dropped).
WeightedOrientationSet histogram_texture(const OrientationGrid& grid, const Histogram& h);

}  // namespace texopt
