#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "texopt/orientation_grid.hpp"

using namespace texopt;

namespace {

std::vector<Neighbor> brute_force(const OrientationGrid& grid, const Quaternion& q, std::size_t k) {
  std::vector<Neighbor> all;
  for (std::size_t i = 0; i < grid.size(); ++i) all.push_back({i, cubic_metric_exhaustive(q, grid[i])});
  std::stable_sort(all.begin(), all.end(),
                   [](const Neighbor& a, const Neighbor& b) { return a.distance < b.distance; });
  all.resize(k);
  return all;
}

double brute_force_cv(const OrientationGrid& grid) {
  std::vector<double> nn(grid.size(), 1e9);
  for (std::size_t i = 0; i < grid.size(); ++i)
    for (std::size_t j = 0; j < grid.size(); ++j)
      if (i != j) nn[i] = std::min(nn[i], cubic_metric(grid[i], grid[j]));
  const double mean = std::accumulate(nn.begin(), nn.end(), 0.0) / nn.size();
  double var = 0.0;
  for (double d : nn) var += (d - mean) * (d - mean);
  return std::sqrt(var / nn.size()) / mean;
}

}  // namespace

TEST_SUITE("grid") {

TEST_CASE("single-orientation grid") {
  const auto g = OrientationGrid::sample_uniform(1, 3);
  CHECK(g.size() == 1);
  CHECK(g.quality().cv == 0.0);
  CHECK(g.nearest({1, 0, 0, 0}, 1).size() == 1);
}

TEST_CASE("grid generation is deterministic") {
  const auto a = OrientationGrid::sample_uniform(64, 11);
  const auto b = OrientationGrid::sample_uniform(64, 11);
  CHECK(a.orientations() == b.orientations());
  CHECK(a.fingerprint() == b.fingerprint());
  const auto c = OrientationGrid::sample_uniform(64, 12);
  CHECK(a.fingerprint() != c.fingerprint());
}

TEST_CASE("invalid grid sizes") {
  CHECK_THROWS_AS(OrientationGrid::sample_uniform(0, 1), std::invalid_argument);
  CHECK_THROWS_AS(OrientationGrid::sample_uniform((std::size_t{1} << 23) + 1, 1), std::invalid_argument);
}

TEST_CASE("J=512 grid: fundamental zone, distinct bins, CV below 0.25") {
  const auto g = OrientationGrid::sample_uniform(512, 2024);
  for (const auto& q : g.orientations()) CHECK(quat_metric(to_fundamental_zone(q), q) < 1e-12);
  const double cv = brute_force_cv(g);
  CHECK(cv < 0.25);
  CHECK(g.quality().cv == doctest::Approx(cv).epsilon(1e-9));
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = i + 1; j < g.size(); ++j) CHECK(cubic_metric(g[i], g[j]) > 0.0);
}

TEST_CASE("nearest neighbours agree with brute force") {
  const auto g = OrientationGrid::sample_uniform(256, 5);
  std::mt19937_64 rng(99);
  for (int i = 0; i < 1000; ++i) {
    const auto q = random_quaternion(rng);
    const auto fast = g.nearest(q, 3);
    const auto slow = brute_force(g, q, 3);
    REQUIRE(fast.size() == 3);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(fast[j].distance == doctest::Approx(slow[j].distance).epsilon(1e-10));
      if (j + 1 < 3 && std::abs(slow[j].distance - slow[j + 1].distance) > 1e-10) {
        CHECK(fast[j].bin == slow[j].bin);
      }
    }
  }
}

TEST_CASE("nearest: grid point query, k = J, range errors") {
  const auto g = OrientationGrid::sample_uniform(40, 8);
  const auto hit = g.nearest(g[17] * cubic_symmetry()[5], 1);
  CHECK(hit[0].bin == 17);
  CHECK(hit[0].distance < 1e-12);
  const auto all = g.nearest(g[3], g.size());
  CHECK(all.size() == g.size());
  for (std::size_t i = 1; i < all.size(); ++i) CHECK(all[i - 1].distance <= all[i].distance);
  std::vector<std::size_t> ids;
  for (const auto& n : all) ids.push_back(n.bin);
  std::sort(ids.begin(), ids.end());
  CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
  CHECK_THROWS_AS((void)g.nearest(g[0], 0), std::invalid_argument);
  CHECK_THROWS_AS((void)g.nearest(g[0], g.size() + 1), std::invalid_argument);
}

TEST_CASE("grid file round trip") {
  const auto g = OrientationGrid::sample_uniform(30, 4);
  const auto path = std::filesystem::temp_directory_path() / "texopt_grid_roundtrip.txt";
  g.save(path);
  const auto back = OrientationGrid::load(path);
  CHECK(back.orientations() == g.orientations());
  CHECK(back.seed() == g.seed());
  std::filesystem::remove(path);
}

}
