#pragma once

// Unit quaternions, the cubic (octahedral) rotation group and the
// symmetry-reduced chordal metric used for orientation binning.
//
// Convention: an orientation q maps crystal-frame vectors to the sample
// frame, v_sample = R(q) v_crystal. Crystal symmetry acts by right
// composition q -> q * g.

#include <array>
#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace texopt {

struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Quaternion() = default;
  constexpr Quaternion(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}

  /// Builds a unit quaternion from arbitrary (nonzero) components.
  static Quaternion normalized(double w, double x, double y, double z);
  static Quaternion from_axis_angle(const Eigen::Vector3d& axis, double angle);
  static Quaternion from_matrix(const Eigen::Matrix3d& rotation);

  [[nodiscard]] double norm() const;
  [[nodiscard]] Quaternion conjugate() const { return {w, -x, -y, -z}; }
  [[nodiscard]] Quaternion operator-() const { return {-w, -x, -y, -z}; }
  [[nodiscard]] Eigen::Matrix3d to_matrix() const;
  [[nodiscard]] Eigen::Vector4d as_vector() const { return {w, x, y, z}; }

  bool operator==(const Quaternion&) const = default;
};

/// Hamilton product; (a * b) applies b first, then a.
Quaternion operator*(const Quaternion& a, const Quaternion& b);

double dot(const Quaternion& a, const Quaternion& b);

/// Throws std::invalid_argument when |q| deviates from 1 by more than 1e-6.
void require_unit(const Quaternion& q, const char* what = "quaternion");

/// Sign-invariant chordal distance min(|q1 - q2|, |q1 + q2|).
double quat_metric(const Quaternion& a, const Quaternion& b);

/// The 24 proper rotations of the cubic group, identity first.
const std::array<Quaternion, 24>& cubic_symmetry();

/// quat_metric minimised over crystal-symmetry equivalents of b.
double cubic_metric(const Quaternion& a, const Quaternion& b);

/// Same quantity via the full 24 x 24 double minimum; used to validate the
/// one-sided form.
double cubic_metric_exhaustive(const Quaternion& a, const Quaternion& b);

/// Symmetry-equivalent representative with maximal |w|, w >= 0, remaining
/// ties broken towards the lexicographically largest (x, y, z).
Quaternion to_fundamental_zone(const Quaternion& q);

/// Haar-distributed random rotation.
Quaternion random_quaternion(std::mt19937_64& rng);

/// Rotation by a Haar-random axis with angle drawn uniformly in [0, max_angle].
Quaternion random_small_rotation(std::mt19937_64& rng, double max_angle);

}  // namespace texopt
