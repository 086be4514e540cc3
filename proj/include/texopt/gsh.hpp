#pragma once

// Symmetrized generalized spherical harmonics on SO(3) for cubic crystal
// symmetry and no sample symmetry.
//
// Wigner-D convention: D^l_{mn}(R) = exp(-i m alpha) d^l_{mn}(beta)
// exp(-i n gamma) with R = Rz(alpha) Ry(beta) Rz(gamma), so that
// D(R1 R2) = D(R1) D(R2). Basis functions
//   T^{l,u}_nu(g) = sqrt(2l+1) sum_n D^l_{nu n}(g) a^{l,u}_n
// are orthonormal under the normalized Haar measure, where the a^{l,u} span
// the vectors fixed by every cubic D^l(s).

#include <complex>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "texopt/odf_histogram.hpp"
#include "texopt/orientation.hpp"

namespace texopt {

Eigen::MatrixXd wigner_small_d(int l, double beta);
Eigen::MatrixXcd wigner_D(int l, const Quaternion& q);

class GshBasis {
 public:
  /// Only l_max = 8 is supported.
  static GshBasis build(int l_max = 8);

  [[nodiscard]] int l_max() const { return l_max_; }
  [[nodiscard]] std::size_t multiplicity(int l) const;
  /// (2l+1) x M(l) matrix of invariant coefficient vectors.
  [[nodiscard]] const Eigen::MatrixXcd& invariant_vectors(int l) const { return vectors_.at(l); }
  /// Values T^{l,u}_nu(q) as a (2l+1) x M(l) matrix, row nu + l.
  [[nodiscard]] Eigen::MatrixXcd evaluate(int l, const Quaternion& q) const;

 private:
  int l_max_ = 0;
  std::vector<Eigen::MatrixXcd> vectors_;
};

/// Degrees that carry features; l = 0 is fixed by normalization.
inline constexpr int kFeatureDegrees[] = {4, 6, 8};
inline constexpr std::size_t kGshComplexCount = 21;
inline constexpr std::size_t kGshFeatureCount = 42;

/// Coefficients C^l_nu = sum_i v_i conj(T^l_nu(g_i)) / V for l in {4, 6, 8}
/// and nu = -l..l (39 values, degree-major, nu ascending).
std::vector<std::complex<double>> gsh_coefficients(const GshBasis& basis,
                                                   const WeightedOrientationSet& texture);

/// The nu >= 0 coefficients as 42 reals: (re, im) pairs ordered by l then nu.
std::vector<double> compute_features(const GshBasis& basis, const WeightedOrientationSet& texture);

/// Column names `c<l>_<nu>_re` / `c<l>_<nu>_im` matching compute_features.
std::vector<std::string> gsh_feature_names();

/// Shared basis instance (built on first use).
const GshBasis& default_gsh_basis();

}  // namespace texopt
