#include <doctest.h>

#include <cmath>
#include <complex>
#include <random>

#include "texopt/gsh.hpp"

using namespace texopt;

namespace {

// Rotation about z by a, used to cross-check the Wigner-D phase convention.
Eigen::MatrixXcd expected_rz(int l, double a) {
  Eigen::MatrixXcd d = Eigen::MatrixXcd::Zero(2 * l + 1, 2 * l + 1);
  for (int m = -l; m <= l; ++m) d(m + l, m + l) = std::polar(1.0, -m * a);
  return d;
}

}  // namespace

TEST_SUITE("gsh") {

TEST_CASE("small-d matrices are orthogonal and match closed forms") {
  for (int l = 0; l <= 8; ++l) {
    const auto d = wigner_small_d(l, 0.7);
    CHECK((d * d.transpose() - Eigen::MatrixXd::Identity(2 * l + 1, 2 * l + 1)).norm() < 1e-12);
  }
  const double b = 0.9;
  const auto d1 = wigner_small_d(1, b);
  CHECK(d1(2, 2) == doctest::Approx((1 + std::cos(b)) / 2));
  CHECK(d1(1, 1) == doctest::Approx(std::cos(b)));
  CHECK(d1(2, 1) == doctest::Approx(-std::sin(b) / std::sqrt(2.0)));
}

TEST_CASE("Wigner D is a representation") {
  std::mt19937_64 rng(1);
  for (int l : {1, 2, 4, 8}) {
    for (int i = 0; i < 20; ++i) {
      const auto a = random_quaternion(rng), b = random_quaternion(rng);
      const auto lhs = wigner_D(l, a * b);
      const Eigen::MatrixXcd rhs = wigner_D(l, a) * wigner_D(l, b);
      CHECK((lhs - rhs).norm() < 1e-10);
      CHECK((wigner_D(l, a) * wigner_D(l, a).adjoint() -
             Eigen::MatrixXcd::Identity(2 * l + 1, 2 * l + 1)).norm() < 1e-10);
    }
    CHECK((wigner_D(l, Quaternion::from_axis_angle({0, 0, 1}, 0.4)) - expected_rz(l, 0.4)).norm() <
          1e-12);
  }
  // Gimbal cases: beta = 0 and beta = pi.
  const auto rz = Quaternion::from_axis_angle({0, 0, 1}, 1.1);
  const auto rx = Quaternion::from_axis_angle({1, 0, 0}, M_PI);
  CHECK((wigner_D(4, rz * rx) - wigner_D(4, rz) * wigner_D(4, rx)).norm() < 1e-10);
}

TEST_CASE("cubic invariant multiplicities") {
  const auto& basis = default_gsh_basis();
  const std::size_t expected[9] = {1, 0, 0, 0, 1, 0, 1, 0, 1};
  for (int l = 0; l <= 8; ++l) CHECK(basis.multiplicity(l) == expected[l]);
  CHECK_THROWS_AS(GshBasis::build(6), std::invalid_argument);
}

TEST_CASE("l = 0 basis function is the constant one") {
  std::mt19937_64 rng(2);
  const auto& basis = default_gsh_basis();
  for (int i = 0; i < 10; ++i) {
    const auto v = basis.evaluate(0, random_quaternion(rng));
    CHECK(std::abs(v(0, 0) - 1.0) < 1e-12);
  }
}

TEST_CASE("basis functions are invariant under crystal symmetry") {
  std::mt19937_64 rng(3);
  const auto& basis = default_gsh_basis();
  for (int l : kFeatureDegrees) {
    for (int i = 0; i < 10; ++i) {
      const auto q = random_quaternion(rng);
      const auto ref = basis.evaluate(l, q);
      for (const auto& g : cubic_symmetry()) CHECK((basis.evaluate(l, q * g) - ref).norm() < 1e-10);
      CHECK((basis.evaluate(l, -q) - ref).norm() < 1e-10);
    }
  }
}

TEST_CASE("Monte Carlo Gram matrix is the identity") {
  std::mt19937_64 rng(4);
  const auto& basis = default_gsh_basis();
  // Columns: every (l, nu) function for l in {0, 4, 6, 8}.
  const int n = 1 + 9 + 13 + 17;
  Eigen::MatrixXcd gram = Eigen::MatrixXcd::Zero(n, n);
  const int samples = 1000000;
  Eigen::VectorXcd f(n);
  for (int s = 0; s < samples; ++s) {
    const auto q = random_quaternion(rng);
    int off = 0;
    for (int l : {0, 4, 6, 8}) {
      f.segment(off, 2 * l + 1) = basis.evaluate(l, q).col(0);
      off += 2 * l + 1;
    }
    gram.noalias() += f.conjugate() * f.transpose();
  }
  gram /= samples;
  const double err = (gram - Eigen::MatrixXcd::Identity(n, n)).cwiseAbs().maxCoeff();
  MESSAGE("max Gram deviation " << err);
  CHECK(err < 5e-3);
}

TEST_CASE("features of a single identity orientation") {
  const auto& basis = default_gsh_basis();
  const auto tex = WeightedOrientationSet::uniform_weights({{1, 0, 0, 0}});
  const auto c = gsh_coefficients(basis, tex);
  REQUIRE(c.size() == 39);
  std::size_t off = 0;
  for (int l : kFeatureDegrees) {
    // D(identity) = I, so the coefficients are sqrt(2l+1) conj(a).
    const auto a = basis.invariant_vectors(l).col(0);
    for (int nu = -l; nu <= l; ++nu) {
      const auto expected = std::sqrt(2.0 * l + 1.0) * std::conj(a(nu + l));
      CHECK(std::abs(c[off + nu + l] - expected) < 1e-12);
    }
    off += 2 * l + 1;
  }
  const auto feats = compute_features(basis, tex);
  CHECK(feats.size() == kGshFeatureCount);
  CHECK(gsh_feature_names().size() == kGshFeatureCount);
  CHECK(gsh_feature_names().front() == "c4_0_re");
  CHECK(gsh_feature_names().back() == "c8_8_im");
}

TEST_CASE("feature invariances and bounds") {
  std::mt19937_64 rng(5);
  const auto& basis = default_gsh_basis();
  std::vector<WeightedOrientation> e;
  std::uniform_real_distribution<double> vol(0.5, 2.0);
  for (int i = 0; i < 50; ++i) e.push_back({random_quaternion(rng), vol(rng)});
  const WeightedOrientationSet tex(e);
  const auto f0 = compute_features(basis, tex);
  for (const auto& g : cubic_symmetry()) {
    const auto f1 = compute_features(basis, tex.right_compose(g));
    for (std::size_t i = 0; i < f0.size(); ++i) CHECK(std::abs(f0[i] - f1[i]) < 1e-9);
  }
  CHECK(compute_features(basis, tex) == f0);

  // Small perturbations give small changes.
  std::vector<WeightedOrientation> p = e;
  for (auto& w : p) w.orientation = random_small_rotation(rng, 0.5 * M_PI / 180.0) * w.orientation;
  const auto fp = compute_features(basis, WeightedOrientationSet(p));
  for (std::size_t i = 0; i < f0.size(); i += 2) {
    CHECK(std::hypot(f0[i] - fp[i], f0[i + 1] - fp[i + 1]) < 0.05);
  }
}

TEST_CASE("random textures have small coefficients") {
  std::mt19937_64 rng(6);
  const auto& basis = default_gsh_basis();
  std::vector<Quaternion> qs;
  for (int i = 0; i < 10000; ++i) qs.push_back(random_quaternion(rng));
  const auto c = gsh_coefficients(basis, WeightedOrientationSet::uniform_weights(qs));
  for (const auto& v : c) CHECK(std::abs(v) < 0.05);

  std::vector<Quaternion> small(qs.begin(), qs.begin() + 250);
  const auto cs = gsh_coefficients(basis, WeightedOrientationSet::uniform_weights(small));
  for (const auto& v : cs) CHECK(std::abs(v) < 5.0 / std::sqrt(250.0));
}

TEST_CASE("negative-order coefficients are signed conjugates") {
  std::mt19937_64 rng(7);
  const auto& basis = default_gsh_basis();
  std::vector<Quaternion> qs;
  for (int i = 0; i < 40; ++i) qs.push_back(random_quaternion(rng));
  const auto c = gsh_coefficients(basis, WeightedOrientationSet::uniform_weights(qs));
  std::size_t off = 0;
  for (int l : kFeatureDegrees) {
    for (int nu = 1; nu <= l; ++nu) {
      const double sign = nu % 2 == 0 ? 1.0 : -1.0;
      CHECK(std::abs(c[off + l - nu] - sign * std::conj(c[off + l + nu])) < 1e-12);
    }
    off += 2 * l + 1;
  }
}

}
