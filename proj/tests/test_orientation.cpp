#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "texopt/orientation.hpp"

using namespace texopt;

TEST_SUITE("orientation") {

TEST_CASE("quat_metric basic values") {
  std::mt19937_64 rng(1);
  const Quaternion q = random_quaternion(rng);
  CHECK(quat_metric(q, q) == doctest::Approx(0.0));
  CHECK(quat_metric(q, -q) == doctest::Approx(0.0));
  CHECK(quat_metric({1, 0, 0, 0}, {0, 0, 0, 1}) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("quat_metric rejects non-unit input") {
  CHECK_THROWS_AS(quat_metric({1, 0, 0, 0}, {1.1, 0, 0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(cubic_metric({2, 0, 0, 0}, {1, 0, 0, 0}), std::invalid_argument);
}

TEST_CASE("constructed quaternions are unit") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    CHECK(std::abs(random_quaternion(rng).norm() - 1.0) < 1e-10);
    CHECK(std::abs(random_small_rotation(rng, 0.1).norm() - 1.0) < 1e-10);
  }
  CHECK(std::abs(Quaternion::normalized(3, 1, 2, 5).norm() - 1.0) < 1e-10);
}

TEST_CASE("metric axioms on random triples") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 500; ++i) {
    const auto a = random_quaternion(rng), b = random_quaternion(rng), c = random_quaternion(rng);
    CHECK(quat_metric(a, b) >= 0.0);
    CHECK(quat_metric(a, b) == doctest::Approx(quat_metric(b, a)));
    CHECK(quat_metric(a, c) <= quat_metric(a, b) + quat_metric(b, c) + 1e-12);
    CHECK(quat_metric(a, b) > 0.0);
  }
}

TEST_CASE("cubic group: 24 distinct rotations, closed, contains identity") {
  const auto& g = cubic_symmetry();
  CHECK(g.size() == 24);
  CHECK(g[0] == Quaternion{1, 0, 0, 0});
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (std::size_t j = i + 1; j < g.size(); ++j) CHECK(quat_metric(g[i], g[j]) > 1e-6);
  }
  for (const auto& a : g) {
    for (const auto& b : g) {
      int hits = 0;
      for (const auto& c : g) hits += quat_metric(a * b, c) < 1e-12;
      CHECK(hits == 1);
    }
  }
}

TEST_CASE("cubic_metric symmetry equivalences") {
  std::mt19937_64 rng(4);
  const auto q = random_quaternion(rng);
  for (const auto& g : cubic_symmetry()) CHECK(cubic_metric(q, q * g) < 1e-12);
  const auto rz90 = Quaternion::from_axis_angle({0, 0, 1}, M_PI / 2);
  CHECK(cubic_metric({1, 0, 0, 0}, rz90) < 1e-12);
  for (int i = 0; i < 100; ++i) {
    const auto a = random_quaternion(rng), b = random_quaternion(rng);
    CHECK(cubic_metric(a, b) == doctest::Approx(cubic_metric(b, a)).epsilon(1e-12));
  }
}

TEST_CASE("one-sided cubic metric equals the exhaustive double minimum") {
  std::mt19937_64 rng(5);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_quaternion(rng), b = random_quaternion(rng);
    worst = std::max(worst, std::abs(cubic_metric(a, b) - cubic_metric_exhaustive(a, b)));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("left group action does not change the cubic metric") {
  std::mt19937_64 rng(6);
  const auto& g = cubic_symmetry();
  for (int i = 0; i < 200; ++i) {
    const auto a = random_quaternion(rng), b = random_quaternion(rng);
    const auto& g1 = g[rng() % 24];
    const auto& g2 = g[rng() % 24];
    // Both sides are rotated by g1 on the left: the sample frame is common.
    CHECK(std::abs(cubic_metric(g1 * a * g2, g1 * b) - cubic_metric(a * g2, b)) < 1e-12);
  }
}

TEST_CASE("fundamental zone reduction") {
  std::mt19937_64 rng(7);
  CHECK(to_fundamental_zone({1, 0, 0, 0}) == Quaternion{1, 0, 0, 0});
  for (int i = 0; i < 200; ++i) {
    const auto q = random_quaternion(rng);
    const auto fz = to_fundamental_zone(q);
    CHECK(cubic_metric(q, fz) < 1e-12);
    CHECK(fz.w >= 0.0);
    const auto again = to_fundamental_zone(fz);
    CHECK(quat_metric(again, fz) < 1e-14);
    for (const auto& g : cubic_symmetry()) {
      CHECK(quat_metric(to_fundamental_zone(q * g), fz) < 1e-12);
      CHECK(std::abs(dot(q * g, {1, 0, 0, 0})) <= fz.w + 1e-12);
    }
  }
}

TEST_CASE("matrix round trip") {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 100; ++i) {
    const auto q = random_quaternion(rng);
    const auto back = Quaternion::from_matrix(q.to_matrix());
    CHECK(quat_metric(q, back) < 1e-12);
    CHECK((q.to_matrix() * q.conjugate().to_matrix() - Eigen::Matrix3d::Identity()).norm() < 1e-12);
  }
  const auto a = Quaternion::from_axis_angle({1, 0, 0}, 0.3);
  const auto b = Quaternion::from_axis_angle({0, 1, 0}, 0.7);
  CHECK(((a * b).to_matrix() - a.to_matrix() * b.to_matrix()).norm() < 1e-12);
}

}
