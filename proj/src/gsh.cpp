#include "texopt/gsh.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

#include <Eigen/SVD>

namespace texopt {

namespace {

constexpr double kRankThreshold = 1e-8;
constexpr std::array<std::size_t, 9> kCubicMultiplicity = {1, 0, 0, 0, 1, 0, 1, 0, 1};

double factorial(int n) {
  static const auto table = [] {
    std::array<double, 41> t{};
    t[0] = 1.0;
    for (int i = 1; i < 41; ++i) t[i] = t[i - 1] * i;
    return t;
  }();
  return table.at(static_cast<std::size_t>(n));
}

struct Euler {
  double alpha, beta, gamma;
};

Euler zyz_angles(const Quaternion& q) {
  const Eigen::Matrix3d r = q.to_matrix();
  const double sb = std::hypot(r(0, 2), r(1, 2));
  Euler e{};
  e.beta = std::atan2(sb, r(2, 2));
  if (sb > 1e-10) {
    e.alpha = std::atan2(r(1, 2), r(0, 2));
    e.gamma = std::atan2(r(2, 1), -r(2, 0));
  } else if (r(2, 2) > 0.0) {
    e.alpha = std::atan2(r(1, 0), r(0, 0));
    e.gamma = 0.0;
  } else {
    e.alpha = std::atan2(-r(1, 0), r(1, 1));
    e.gamma = 0.0;
  }
  return e;
}

// Antiunitary map (Ja)_n = (-1)^n conj(a_{-n}); commutes with every D^l(R).
Eigen::VectorXcd real_structure(const Eigen::VectorXcd& a, int l) {
  Eigen::VectorXcd out(2 * l + 1);
  for (int n = -l; n <= l; ++n) {
    const double sign = (n % 2 == 0) ? 1.0 : -1.0;
    out(n + l) = sign * std::conj(a(-n + l));
  }
  return out;
}

// Basis of the J-fixed real form of span(vectors), orthonormalized with a
// deterministic sign (first significant component positive).
Eigen::MatrixXcd real_form_basis(const Eigen::MatrixXcd& vectors, int l) {
  const std::complex<double> i(0.0, 1.0);
  std::vector<Eigen::VectorXcd> out;
  for (Eigen::Index c = 0; c < vectors.cols(); ++c) {
    const Eigen::VectorXcd a = vectors.col(c);
    const Eigen::VectorXcd ja = real_structure(a, l);
    for (Eigen::VectorXcd cand : {Eigen::VectorXcd(a + ja), Eigen::VectorXcd(i * (a - ja))}) {
      for (const auto& b : out) cand -= b.dot(cand) * b;
      if (cand.norm() > 1e-6 && out.size() < static_cast<std::size_t>(vectors.cols())) {
        cand.normalize();
        for (Eigen::Index k = 0; k < cand.size(); ++k) {
          if (std::abs(cand(k)) > 1e-8) {
            cand *= std::abs(cand(k)) / cand(k);
            break;
          }
        }
        out.push_back(cand);
      }
    }
  }
  Eigen::MatrixXcd m(2 * l + 1, static_cast<Eigen::Index>(out.size()));
  for (std::size_t c = 0; c < out.size(); ++c) m.col(static_cast<Eigen::Index>(c)) = out[c];
  return m;
}

}  // namespace

Eigen::MatrixXd wigner_small_d(int l, double beta) {
  if (l < 0 || l > 20) throw std::invalid_argument("Wigner degree out of range");
  const double c = std::cos(0.5 * beta);
  const double s = std::sin(0.5 * beta);
  std::array<double, 41> cp{}, sp{};
  cp[0] = sp[0] = 1.0;
  for (int k = 1; k <= 2 * l; ++k) {
    cp[k] = cp[k - 1] * c;
    sp[k] = sp[k - 1] * s;
  }
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(2 * l + 1, 2 * l + 1);
  for (int mp = -l; mp <= l; ++mp) {
    for (int m = -l; m <= l; ++m) {
      const double pre =
          std::sqrt(factorial(l + mp) * factorial(l - mp) * factorial(l + m) * factorial(l - m));
      double sum = 0.0;
      const int smin = std::max(0, m - mp);
      const int smax = std::min(l + m, l - mp);
      for (int k = smin; k <= smax; ++k) {
        const double sign = ((mp - m + k) % 2 == 0) ? 1.0 : -1.0;
        const double denom =
            factorial(l + m - k) * factorial(k) * factorial(mp - m + k) * factorial(l - mp - k);
        sum += sign / denom * cp[2 * l + m - mp - 2 * k] * sp[mp - m + 2 * k];
      }
      d(mp + l, m + l) = pre * sum;
    }
  }
  return d;
}

Eigen::MatrixXcd wigner_D(int l, const Quaternion& q) {
  const Euler e = zyz_angles(q);
  const Eigen::MatrixXd d = wigner_small_d(l, e.beta);
  Eigen::MatrixXcd out(2 * l + 1, 2 * l + 1);
  for (int mp = -l; mp <= l; ++mp) {
    for (int m = -l; m <= l; ++m) {
      out(mp + l, m + l) = std::polar(d(mp + l, m + l), -(mp * e.alpha + m * e.gamma));
    }
  }
  return out;
}

GshBasis GshBasis::build(int l_max) {
  if (l_max != 8) throw std::invalid_argument("only l_max = 8 is supported");
  GshBasis basis;
  basis.l_max_ = l_max;
  for (int l = 0; l <= l_max; ++l) {
    const int dim = 2 * l + 1;
    Eigen::MatrixXcd projector = Eigen::MatrixXcd::Zero(dim, dim);
    for (const auto& g : cubic_symmetry()) projector += wigner_D(l, g);
    projector /= static_cast<double>(cubic_symmetry().size());
    const Eigen::JacobiSVD<Eigen::MatrixXcd> svd(projector, Eigen::ComputeFullU);
    Eigen::Index rank = 0;
    for (Eigen::Index k = 0; k < svd.singularValues().size(); ++k) {
      if (svd.singularValues()(k) > kRankThreshold) ++rank;
    }
    if (static_cast<std::size_t>(rank) != kCubicMultiplicity[static_cast<std::size_t>(l)]) {
      throw std::logic_error("cubic harmonic count mismatch at degree " + std::to_string(l));
    }
    basis.vectors_.push_back(real_form_basis(svd.matrixU().leftCols(rank), l));
  }
  return basis;
}

std::size_t GshBasis::multiplicity(int l) const {
  if (l < 0 || l > l_max_) return 0;
  return static_cast<std::size_t>(vectors_[static_cast<std::size_t>(l)].cols());
}

Eigen::MatrixXcd GshBasis::evaluate(int l, const Quaternion& q) const {
  const auto& a = vectors_.at(static_cast<std::size_t>(l));
  if (a.cols() == 0) return Eigen::MatrixXcd(2 * l + 1, 0);
  return std::sqrt(2.0 * l + 1.0) * (wigner_D(l, q) * a);
}

std::vector<std::complex<double>> gsh_coefficients(const GshBasis& basis,
                                                   const WeightedOrientationSet& texture) {
  std::vector<std::complex<double>> out;
  for (int l : kFeatureDegrees) {
    Eigen::VectorXcd acc = Eigen::VectorXcd::Zero(2 * l + 1);
    for (const auto& e : texture.entries()) {
      acc += e.volume * basis.evaluate(l, e.orientation).col(0).conjugate();
    }
    acc /= texture.total_volume();
    for (Eigen::Index k = 0; k < acc.size(); ++k) out.push_back(acc(k));
  }
  return out;
}

std::vector<double> compute_features(const GshBasis& basis, const WeightedOrientationSet& texture) {
  const auto coeffs = gsh_coefficients(basis, texture);
  std::vector<double> out;
  out.reserve(kGshFeatureCount);
  std::size_t offset = 0;
  for (int l : kFeatureDegrees) {
    for (int nu = 0; nu <= l; ++nu) {
      const auto c = coeffs[offset + static_cast<std::size_t>(nu + l)];
      out.push_back(c.real());
      out.push_back(c.imag());
    }
    offset += static_cast<std::size_t>(2 * l + 1);
  }
  return out;
}

std::vector<std::string> gsh_feature_names() {
  std::vector<std::string> names;
  for (int l : kFeatureDegrees) {
    for (int nu = 0; nu <= l; ++nu) {
      const std::string stem = "c" + std::to_string(l) + "_" + std::to_string(nu);
      names.push_back(stem + "_re");
      names.push_back(stem + "_im");
    }
  }
  return names;
}

const GshBasis& default_gsh_basis() {
  static const GshBasis basis = GshBasis::build(8);
  return basis;
}

}  // namespace texopt
