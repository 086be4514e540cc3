#include "texopt/odf_histogram.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace texopt {

WeightedOrientationSet::WeightedOrientationSet(std::vector<WeightedOrientation> entries)
    : entries_(std::move(entries)) {
  if (entries_.empty()) throw std::invalid_argument("texture must contain at least one orientation");
  for (const auto& e : entries_) {
    require_unit(e.orientation, "texture orientation");
    if (!(e.volume > 0.0) || !std::isfinite(e.volume)) {
      throw std::invalid_argument("texture volumes must be positive and finite");
    }
    total_volume_ += e.volume;
  }
}

WeightedOrientationSet WeightedOrientationSet::uniform_weights(
    const std::vector<Quaternion>& orientations) {
  std::vector<WeightedOrientation> entries;
  entries.reserve(orientations.size());
  const double v = orientations.empty() ? 1.0 : 1.0 / static_cast<double>(orientations.size());
  for (const auto& q : orientations) entries.push_back({q, v});
  return WeightedOrientationSet(std::move(entries));
}

WeightedOrientationSet WeightedOrientationSet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read texture file " + path.string());
  std::vector<WeightedOrientation> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    double v, w, x, y, z;
    if (!(ss >> v)) continue;
    if (!(ss >> w >> x >> y >> z)) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) +
                                  ": expected `volume w x y z`");
    }
    entries.push_back({Quaternion::normalized(w, x, y, z), v});
  }
  return WeightedOrientationSet(std::move(entries));
}

void WeightedOrientationSet::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write texture file " + path.string());
  out << std::setprecision(17);
  for (const auto& e : entries_) {
    const auto& q = e.orientation;
    out << e.volume << ' ' << q.w << ' ' << q.x << ' ' << q.y << ' ' << q.z << "\n";
  }
}

WeightedOrientationSet WeightedOrientationSet::right_compose(const Quaternion& g) const {
  auto copy = entries_;
  for (auto& e : copy) e.orientation = e.orientation * g;
  return WeightedOrientationSet(std::move(copy));
}

WeightedOrientationSet WeightedOrientationSet::left_compose(const Quaternion& r) const {
  auto copy = entries_;
  for (auto& e : copy) e.orientation = r * e.orientation;
  return WeightedOrientationSet(std::move(copy));
}

std::string to_string(SoftWeighting w) {
  return w == SoftWeighting::InverseDistance ? "inverse" : "proportional";
}

SoftWeighting soft_weighting_from_string(const std::string& name) {
  if (name == "inverse") return SoftWeighting::InverseDistance;
  if (name == "proportional") return SoftWeighting::ProportionalDistance;
  throw std::invalid_argument("unknown weighting '" + name + "' (expected inverse|proportional)");
}

SparseWeights soft_assign(const OrientationGrid& grid, const Quaternion& h, std::size_t k,
                          SoftWeighting weighting) {
  const auto nn = grid.nearest(h, k);
  SparseWeights out;
  if (nn.front().distance < 1e-12) {
    out.emplace_back(nn.front().bin, 1.0);
    return out;
  }
  out.reserve(nn.size());
  double total = 0.0;
  for (const auto& n : nn) {
    const double w = weighting == SoftWeighting::InverseDistance ? 1.0 / (n.distance + 1e-12)
                                                                 : n.distance;
    out.emplace_back(n.bin, w);
    total += w;
  }
  for (auto& [bin, w] : out) w /= total;
  return out;
}

double Histogram::sum() const {
  double s = 0.0;
  for (double b : bins) s += b;
  return s;
}

void Histogram::save_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write histogram file " + path.string());
  out << "bin_id,mass\n" << std::setprecision(17);
  for (std::size_t i = 0; i < bins.size(); ++i) out << i << ',' << bins[i] << "\n";
}

Histogram build_histogram(const OrientationGrid& grid, const WeightedOrientationSet& texture,
                          const HistogramParams& params) {
  Histogram h;
  h.bins.assign(grid.size(), 0.0);
  h.grid_fingerprint = grid.fingerprint();
  const double inv_v = 1.0 / texture.total_volume();
  for (const auto& e : texture.entries()) {
    for (const auto& [bin, w] : soft_assign(grid, e.orientation, params.k, params.weighting)) {
      h.bins[bin] += e.volume * inv_v * w;
    }
  }
  return h;
}

double chi_square_distance(const Histogram& a, const Histogram& b) {
  if (a.size() != b.size() || a.grid_fingerprint != b.grid_fingerprint) {
    throw std::invalid_argument("histograms were built on different grids");
  }
  double d = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double s = a.bins[j] + b.bins[j];
    if (s > 0.0) {
      const double diff = a.bins[j] - b.bins[j];
      d += diff * diff / s;
    }
  }
  return d;
}

WeightedOrientationSet histogram_texture(const OrientationGrid& grid, const Histogram& h) {
  if (h.size() != grid.size() || h.grid_fingerprint != grid.fingerprint()) {
    throw std::invalid_argument("histogram does not belong to this grid");
  }
  std::vector<WeightedOrientation> entries;
  for (std::size_t j = 0; j < h.size(); ++j) {
    if (h.bins[j] > 0.0) entries.push_back({grid[j], h.bins[j]});
  }
  return WeightedOrientationSet(std::move(entries));
}

}  // namespace texopt
