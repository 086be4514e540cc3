#include "texopt/orientation_grid.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <string>

namespace texopt {

namespace {

constexpr std::size_t kOversample = 64;
constexpr std::size_t kMaxPool = std::size_t{1} << 23;
constexpr int kRelaxSweeps = 50;
constexpr std::size_t kImages = 48;

KdTree4::Point as_point(const Quaternion& q) { return {q.w, q.x, q.y, q.z}; }

// Image i of orientation q: (q * g_{i/2}) with sign flipped for odd i.
Quaternion image(const Quaternion& q, std::size_t i) {
  const Quaternion p = q * cubic_symmetry()[i / 2];
  return (i % 2 == 0) ? p : -p;
}

std::vector<KdTree4::Point> expand_images(const std::vector<Quaternion>& qs) {
  std::vector<KdTree4::Point> pts;
  pts.reserve(qs.size() * kImages);
  for (const auto& q : qs) {
    for (std::size_t i = 0; i < kImages; ++i) pts.push_back(as_point(image(q, i)));
  }
  return pts;
}

std::uint64_t hash_orientations(const std::vector<Quaternion>& qs) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& q : qs) {
    for (double v : {q.w, q.x, q.y, q.z}) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

// Farthest-point selection of `count` pool entries. mind2 holds each pool
// point's squared distance to the closest chosen centre; only points inside
// the current covering radius can improve, so updates use radius queries.
std::vector<Quaternion> farthest_point_seeds(const std::vector<Quaternion>& pool,
                                             std::size_t count) {
  std::vector<KdTree4::Point> pts;
  pts.reserve(pool.size());
  for (const auto& q : pool) pts.push_back(as_point(q));
  const KdTree4 tree(std::move(pts));

  std::vector<double> mind2(pool.size(), std::numeric_limits<double>::infinity());
  std::vector<char> chosen(pool.size(), 0);
  using Entry = std::pair<double, std::uint32_t>;
  auto cmp = [](const Entry& a, const Entry& b) {
    return a.first < b.first || (a.first == b.first && a.second > b.second);
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(cmp)> heap(cmp);

  std::vector<Quaternion> centres;
  centres.reserve(count);
  std::size_t next = 0;
  for (;;) {
    chosen[next] = 1;
    mind2[next] = 0.0;
    const Quaternion c = pool[next];
    centres.push_back(c);
    if (centres.size() == count) break;

    if (centres.size() == 1) {
      for (std::size_t i = 0; i < pool.size(); ++i) {
        if (chosen[i]) continue;
        const double d = cubic_metric(pool[i], c);
        mind2[i] = d * d;
        heap.emplace(mind2[i], static_cast<std::uint32_t>(i));
      }
    } else {
      while (!heap.empty() && (chosen[heap.top().second] || heap.top().first != mind2[heap.top().second])) {
        heap.pop();
      }
      const double r2 = heap.empty() ? 0.0 : heap.top().first;
      for (std::size_t im = 0; im < kImages; ++im) {
        tree.radius(as_point(image(c, im)), r2, [&](std::uint32_t i, double d2) {
          if (!chosen[i] && d2 < mind2[i]) {
            mind2[i] = d2;
            heap.emplace(d2, i);
          }
        });
      }
    }
    while (!heap.empty() && (chosen[heap.top().second] || heap.top().first != mind2[heap.top().second])) {
      heap.pop();
    }
    if (heap.empty()) throw std::invalid_argument("orientation pool exhausted during seeding");
    next = heap.top().second;
  }
  return centres;
}

// Discrete Lloyd iteration: every pool point is assigned to its closest
// centre image, brought back into that centre's frame and averaged.
void relax(std::vector<Quaternion>& centres, const std::vector<Quaternion>& pool, int sweeps) {
  const auto& group = cubic_symmetry();
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    const KdTree4 index(expand_images(centres));
    std::vector<Eigen::Vector4d> sums(centres.size(), Eigen::Vector4d::Zero());
    for (const auto& p : pool) {
      const auto hit = index.knn(as_point(p), 1).front();
      const std::size_t bin = hit.index / kImages;
      const std::size_t im = hit.index % kImages;
      Quaternion aligned = p * group[im / 2].conjugate();
      if (im % 2 == 1) aligned = -aligned;
      sums[bin] += aligned.as_vector();
    }
    double moved = 0.0;
    for (std::size_t b = 0; b < centres.size(); ++b) {
      if (sums[b].norm() < 1e-12) continue;
      const Eigen::Vector4d v = sums[b].normalized();
      const Quaternion q = to_fundamental_zone(Quaternion::normalized(v[0], v[1], v[2], v[3]));
      moved = std::max(moved, cubic_metric(q, centres[b]));
      centres[b] = q;
    }
    if (moved < 1e-14) break;
  }
}

}  // namespace

OrientationGrid::OrientationGrid(std::vector<Quaternion> orientations, std::uint64_t seed)
    : orientations_(std::move(orientations)), seed_(seed) {
  for (auto& q : orientations_) q = to_fundamental_zone(q);
  fingerprint_ = hash_orientations(orientations_);
  index_ = KdTree4(expand_images(orientations_));
}

OrientationGrid OrientationGrid::sample_uniform(std::size_t count, std::uint64_t seed) {
  if (count == 0) throw std::invalid_argument("grid size must be at least 1");
  const std::size_t pool_size =
      count > kMaxPool / kOversample ? kMaxPool : count * kOversample;
  if (count > pool_size) {
    throw std::invalid_argument("grid size " + std::to_string(count) +
                                " exceeds the oversampling pool");
  }
  std::mt19937_64 rng(seed);
  std::vector<Quaternion> pool;
  pool.reserve(pool_size);
  for (std::size_t i = 0; i < pool_size; ++i) pool.push_back(to_fundamental_zone(random_quaternion(rng)));

  std::vector<Quaternion> centres = farthest_point_seeds(pool, count);
  if (count > 1) relax(centres, pool, kRelaxSweeps);
  return OrientationGrid(std::move(centres), seed);
}

OrientationGrid OrientationGrid::from_orientations(std::vector<Quaternion> orientations,
                                                   std::uint64_t seed) {
  if (orientations.empty()) throw std::invalid_argument("grid needs at least one orientation");
  for (const auto& q : orientations) require_unit(q, "grid orientation");
  return OrientationGrid(std::move(orientations), seed);
}

std::vector<Neighbor> OrientationGrid::nearest(const Quaternion& q, std::size_t k) const {
  if (k < 1 || k > size()) {
    throw std::invalid_argument("neighbour count " + std::to_string(k) + " outside [1, " +
                                std::to_string(size()) + "]");
  }
  require_unit(q, "query");
  // Each bin's closest image precedes its other images, so once the hit
  // list holds k distinct bins its first k distinct entries are exact.
  std::size_t want = std::min(index_.size(), std::max(2 * k, k + 16));
  for (;;) {
    const auto hits = index_.knn(as_point(q), want);
    std::vector<Neighbor> out;
    out.reserve(k);
    std::vector<char> seen;
    if (want < index_.size()) {
      for (const auto& h : hits) {
        const std::size_t bin = h.index / kImages;
        bool dup = false;
        for (const auto& n : out) dup = dup || n.bin == bin;
        if (dup) continue;
        out.push_back({bin, std::sqrt(h.dist2)});
        if (out.size() == k) return out;
      }
    } else {
      seen.assign(size(), 0);
      for (const auto& h : hits) {
        const std::size_t bin = h.index / kImages;
        if (seen[bin]) continue;
        seen[bin] = 1;
        out.push_back({bin, std::sqrt(h.dist2)});
        if (out.size() == k) return out;
      }
    }
    want = std::min(index_.size(), want * 2);
  }
}

GridQuality OrientationGrid::quality() const {
  GridQuality g;
  if (size() < 2) return g;
  std::vector<double> nn;
  nn.reserve(size());
  for (const auto& o : orientations_) nn.push_back(nearest(o, 2)[1].distance);
  double mean = 0.0;
  for (double d : nn) mean += d;
  mean /= static_cast<double>(nn.size());
  double var = 0.0;
  for (double d : nn) var += (d - mean) * (d - mean);
  var /= static_cast<double>(nn.size());
  g.mean_nn = mean;
  g.cv = mean > 0.0 ? std::sqrt(var) / mean : 0.0;
  return g;
}

void OrientationGrid::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write grid file " + path.string());
  out << "# J=" << size() << " seed=" << seed_ << " cv=" << std::setprecision(6)
      << quality().cv << "\n";
  out << std::setprecision(17);
  for (const auto& q : orientations_) out << q.w << ' ' << q.x << ' ' << q.y << ' ' << q.z << "\n";
}

OrientationGrid OrientationGrid::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read grid file " + path.string());
  std::string line;
  std::uint64_t seed = 0;
  std::vector<Quaternion> qs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto pos = line.find("seed=");
      if (pos != std::string::npos) seed = std::stoull(line.substr(pos + 5));
      continue;
    }
    std::istringstream ss(line);
    double w, x, y, z;
    if (!(ss >> w >> x >> y >> z)) throw std::invalid_argument("malformed grid line: " + line);
    qs.push_back(Quaternion::normalized(w, x, y, z));
  }
  return from_orientations(std::move(qs), seed);
}

std::shared_ptr<const OrientationGrid> cached_grid(std::size_t count, std::uint64_t seed) {
  static std::mutex mutex;
  static std::map<std::pair<std::size_t, std::uint64_t>, std::shared_ptr<const OrientationGrid>> cache;
  const std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[{count, seed}];
  if (!slot) slot = std::make_shared<const OrientationGrid>(OrientationGrid::sample_uniform(count, seed));
  return slot;
}

}  // namespace texopt
