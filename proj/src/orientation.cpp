#include "texopt/orientation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace texopt {

Quaternion Quaternion::normalized(double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw std::invalid_argument("cannot normalize a zero or non-finite quaternion");
  }
  return {w / n, x / n, y / n, z / n};
}

Quaternion Quaternion::from_axis_angle(const Eigen::Vector3d& axis, double angle) {
  const double n = axis.norm();
  if (!(n > 0.0)) throw std::invalid_argument("rotation axis must be nonzero");
  const double s = std::sin(0.5 * angle) / n;
  return normalized(std::cos(0.5 * angle), axis.x() * s, axis.y() * s, axis.z() * s);
}

Quaternion Quaternion::from_matrix(const Eigen::Matrix3d& r) {
  // Shepperd: branch on the largest diagonal combination for stability.
  const double trace = r.trace();
  double w, x, y, z;
  if (trace >= r(0, 0) && trace >= r(1, 1) && trace >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + trace);
    w = 0.25 * s;
    x = (r(2, 1) - r(1, 2)) / s;
    y = (r(0, 2) - r(2, 0)) / s;
    z = (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) >= r(1, 1) && r(0, 0) >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
    w = (r(2, 1) - r(1, 2)) / s;
    x = 0.25 * s;
    y = (r(0, 1) + r(1, 0)) / s;
    z = (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2));
    w = (r(0, 2) - r(2, 0)) / s;
    x = (r(0, 1) + r(1, 0)) / s;
    y = 0.25 * s;
    z = (r(1, 2) + r(2, 1)) / s;
  } else {
    const double s = 2.0 * std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1));
    w = (r(1, 0) - r(0, 1)) / s;
    x = (r(0, 2) + r(2, 0)) / s;
    y = (r(1, 2) + r(2, 1)) / s;
    z = 0.25 * s;
  }
  if (w < 0.0) {
    w = -w;
    x = -x;
    y = -y;
    z = -z;
  }
  return normalized(w, x, y, z);
}

double Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Eigen::Matrix3d Quaternion::to_matrix() const {
  Eigen::Matrix3d r;
  const double ww = w * w, xx = x * x, yy = y * y, zz = z * z;
  r(0, 0) = ww + xx - yy - zz;
  r(0, 1) = 2.0 * (x * y - w * z);
  r(0, 2) = 2.0 * (x * z + w * y);
  r(1, 0) = 2.0 * (x * y + w * z);
  r(1, 1) = ww - xx + yy - zz;
  r(1, 2) = 2.0 * (y * z - w * x);
  r(2, 0) = 2.0 * (x * z - w * y);
  r(2, 1) = 2.0 * (y * z + w * x);
  r(2, 2) = ww - xx - yy + zz;
  return r;
}

Quaternion operator*(const Quaternion& a, const Quaternion& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

double dot(const Quaternion& a, const Quaternion& b) {
  return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
}

void require_unit(const Quaternion& q, const char* what) {
  const double n = q.norm();
  if (!std::isfinite(n) || std::abs(n - 1.0) > 1e-6) {
    throw std::invalid_argument(std::string(what) + " is not a unit quaternion (norm " +
                                std::to_string(n) + ")");
  }
}

namespace {

// |a -/+ b|^2 = 2 -/+ 2 a.b for unit inputs; the closed form loses precision
// near zero, so evaluate the component differences directly.
double chordal(const Quaternion& a, const Quaternion& b) {
  const double s = dot(a, b) >= 0.0 ? 1.0 : -1.0;
  const double dw = a.w - s * b.w, dx = a.x - s * b.x, dy = a.y - s * b.y, dz = a.z - s * b.z;
  return std::sqrt(dw * dw + dx * dx + dy * dy + dz * dz);
}

std::array<Quaternion, 24> build_cubic_group() {
  std::vector<Quaternion> g;
  const double h = 0.5;
  const double r = std::sqrt(0.5);
  g.emplace_back(1, 0, 0, 0);
  g.emplace_back(0, 1, 0, 0);
  g.emplace_back(0, 0, 1, 0);
  g.emplace_back(0, 0, 0, 1);
  // 90 degree rotations about <100> and 180 degree rotations about <110>.
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      for (double s : {1.0, -1.0}) {
        double c[4] = {0, 0, 0, 0};
        c[i] = r;
        c[j] = s * r;
        g.emplace_back(c[0], c[1], c[2], c[3]);
      }
    }
  }
  // 120 degree rotations about <111>, canonical sign w > 0.
  for (double sx : {1.0, -1.0}) {
    for (double sy : {1.0, -1.0}) {
      for (double sz : {1.0, -1.0}) g.emplace_back(h, sx * h, sy * h, sz * h);
    }
  }
  std::array<Quaternion, 24> out{};
  std::copy(g.begin(), g.end(), out.begin());
  return out;
}

}  // namespace

double quat_metric(const Quaternion& a, const Quaternion& b) {
  require_unit(a, "first argument");
  require_unit(b, "second argument");
  return chordal(a, b);
}

const std::array<Quaternion, 24>& cubic_symmetry() {
  static const std::array<Quaternion, 24> group = build_cubic_group();
  return group;
}

double cubic_metric(const Quaternion& a, const Quaternion& b) {
  require_unit(a, "first argument");
  require_unit(b, "second argument");
  // Largest |<a, b g>| gives the smallest chordal distance.
  double best_dot = -1.0;
  std::size_t best = 0;
  const auto& group = cubic_symmetry();
  for (std::size_t i = 0; i < group.size(); ++i) {
    const double d = std::abs(dot(a, b * group[i]));
    if (d > best_dot) {
      best_dot = d;
      best = i;
    }
  }
  return chordal(a, b * group[best]);
}

double cubic_metric_exhaustive(const Quaternion& a, const Quaternion& b) {
  require_unit(a, "first argument");
  require_unit(b, "second argument");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& ga : cubic_symmetry()) {
    const Quaternion ag = a * ga;
    for (const auto& gb : cubic_symmetry()) best = std::min(best, chordal(ag, b * gb));
  }
  return best;
}

Quaternion to_fundamental_zone(const Quaternion& q) {
  require_unit(q);
  constexpr double tie = 1e-12;
  Quaternion best;
  bool have = false;
  for (const auto& g : cubic_symmetry()) {
    Quaternion c = q * g;
    if (c.w < 0.0) c = -c;
    if (!have) {
      best = c;
      have = true;
      continue;
    }
    if (c.w > best.w + tie) {
      best = c;
    } else if (c.w > best.w - tie) {
      const std::array<double, 3> lhs{c.x, c.y, c.z};
      const std::array<double, 3> rhs{best.x, best.y, best.z};
      for (int i = 0; i < 3; ++i) {
        if (lhs[i] > rhs[i] + tie) {
          best = c;
          break;
        }
        if (lhs[i] < rhs[i] - tie) break;
      }
    }
  }
  return best;
}

Quaternion random_quaternion(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    const double w = normal(rng), x = normal(rng), y = normal(rng), z = normal(rng);
    const double n2 = w * w + x * x + y * y + z * z;
    if (n2 > 1e-20) return Quaternion::normalized(w, x, y, z);
  }
}

Quaternion random_small_rotation(std::mt19937_64& rng, double max_angle) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, max_angle);
  Eigen::Vector3d axis(normal(rng), normal(rng), normal(rng));
  if (axis.norm() < 1e-12) axis = Eigen::Vector3d::UnitZ();
  return Quaternion::from_axis_angle(axis, uniform(rng));
}

}  // namespace texopt
