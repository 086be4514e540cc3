#pragma once

// Rate-dependent Taylor-type crystal plasticity for bcc polycrystals.
//
// Stresses are in MPa, elastic constants in MaterialParams are in GPa.
// Tensors live in the sample frame: each crystal's stiffness and slip
// systems are rotated once by its initial orientation, and F = Fe * Fp.

#include <array>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "texopt/odf_histogram.hpp"
#include "texopt/orientation.hpp"

namespace texopt {

using Matrix6d = Eigen::Matrix<double, 6, 6>;
using Vector6d = Eigen::Matrix<double, 6, 1>;

inline constexpr std::size_t kSlipSystems = 24;
using SlipArray = std::array<double, kSlipSystems>;

struct IntegrationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BalancingFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MaterialParams {
  double c11 = 226.0;  // GPa
  double c12 = 140.0;
  double c44 = 116.0;
  double gamma_dot0 = 0.001;  // 1/s
  double rate_sensitivity = 0.02;
  double tau0 = 90.0;  // MPa
  double tau1 = 32.0;
  double theta0 = 250.0;
  double theta1 = 60.0;
  double q_coplanar = 1.4;
  double q_noncoplanar = 1.4;

  /// Throws std::invalid_argument naming the first non-positive field.
  void validate() const;
};

struct SlipSystem {
  Eigen::Vector3d m;  // unit slip direction
  Eigen::Vector3d n;  // unit plane normal
  int family = 0;     // 0: {110}<111>, 1: {112}<111>
};

/// {110}<111> systems first (planes 110, 1-10, 101, 10-1, 011, 01-1, two
/// directions each), then {112}<111> (one direction per plane).
const std::array<SlipSystem, kSlipSystems>& bcc_slip_systems();

/// Latent hardening ratios: 1 on the diagonal, q_coplanar for parallel plane
/// normals, q_noncoplanar otherwise.
Eigen::Matrix<double, 24, 24> latent_hardening_matrix(const MaterialParams& params);

// Voigt notation: stress [11 22 33 23 13 12], strain with doubled shears.
Vector6d stress_to_voigt(const Eigen::Matrix3d& t);
Eigen::Matrix3d stress_from_voigt(const Vector6d& v);
Vector6d strain_to_voigt(const Eigen::Matrix3d& e);

/// Cubic stiffness in the crystal frame, MPa.
Matrix6d cubic_stiffness(const MaterialParams& params);
/// Stiffness rotated by R (Bond transformation).
Matrix6d rotate_stiffness(const Matrix6d& c, const Eigen::Matrix3d& rotation);

/// T* = C : (Fe^T Fe - I) / 2 with a given (sample-frame) stiffness.
Eigen::Matrix3d second_pk_stress(const Eigen::Matrix3d& fe, const Matrix6d& stiffness);
/// Crystal-frame variant using the cubic constants directly.
Eigen::Matrix3d second_pk_stress(const Eigen::Matrix3d& fe, const MaterialParams& params);

/// T = Fe T* Fe^T / det(Fe).
Eigen::Matrix3d cauchy_from_pk(const Eigen::Matrix3d& tstar, const Eigen::Matrix3d& fe);
/// T* = det(Fe) Fe^-1 T Fe^-T.
Eigen::Matrix3d pk_from_cauchy(const Eigen::Matrix3d& cauchy, const Eigen::Matrix3d& fe);

/// Schmid law: ((Fe^T Fe) T*) : (m (x) n).
double resolved_shear(const Eigen::Matrix3d& fe, const Eigen::Matrix3d& tstar,
                      const SlipSystem& system);

SlipArray shear_rates(const SlipArray& tau, const SlipArray& resistance,
                      const MaterialParams& params);

/// Saturation-plus-linear hardening curve and its slope in the accumulated shear.
double voce_resistance(double accumulated_shear, const MaterialParams& params);
double voce_slope(double accumulated_shear, const MaterialParams& params);

SlipArray hardening_rates(const SlipArray& shear_rate, double accumulated_shear,
                          const MaterialParams& params);

struct CrystalState {
  Quaternion initial_orientation;
  Eigen::Matrix3d fp = Eigen::Matrix3d::Identity();
  SlipArray resistance{};
  double accumulated_shear = 0.0;

  static CrystalState fresh(const Quaternion& orientation, const MaterialParams& params);
};

/// Orientation-dependent constants of one crystal, sample frame.
struct LatticeFrame {
  Matrix6d stiffness;
  Matrix6d compliance;
  std::array<Eigen::Matrix3d, kSlipSystems> schmid;  // m (x) n
  Eigen::Matrix3d initial_rotation;

  static LatticeFrame from_orientation(const Quaternion& q, const MaterialParams& params);
};

struct IntegrationOptions {
  double max_slip_increment = 2e-3;
  double max_stress_change = 0.05;  // bound on |delta tau| / r per substep
  int min_substeps = 20;
  int max_substeps = 1 << 14;
  int max_newton_iterations = 80;
};

struct CrystalStepResult {
  CrystalState state;
  Eigen::Matrix3d cauchy;
  int substeps = 0;
};

/// Advances one crystal while the total deformation moves from f_start to
/// f_end over dt, with constant velocity gradient. Each substep solves the
/// stress implicitly; throws IntegrationFailure past max_substeps.
CrystalStepResult integrate_crystal(const CrystalState& state, const LatticeFrame& frame,
                                    const Eigen::Matrix3d& f_start, const Eigen::Matrix3d& f_end,
                                    double dt, const MaterialParams& params,
                                    const IntegrationOptions& options = {});

/// Rigid rotation of Fe from its polar decomposition.
Eigen::Matrix3d elastic_rotation(const Eigen::Matrix3d& fe);

struct SimulationOptions {
  IntegrationOptions integration;
  double strain_rate = 1e-3;       // reference rate setting the step duration, 1/s
  double balance_abs_tol = 0.5;    // MPa
  double balance_rel_tol = 1e-3;   // fraction of |T'11|
  int balance_max_iterations = 25;
  double fd_relative_step = 1e-7;
  double strain_cap = 0.70;
};

struct LateralGuess {
  double f = 0.0;
  double f22 = 1.0;
  double f33 = 1.0;
};

class CrystalAggregate {
 public:
  CrystalAggregate() = default;
  static CrystalAggregate from_texture(const WeightedOrientationSet& texture,
                                       const MaterialParams& params);

  [[nodiscard]] std::size_t size() const { return crystals_.size(); }
  [[nodiscard]] const std::vector<CrystalState>& crystals() const { return crystals_; }
  [[nodiscard]] const std::vector<LatticeFrame>& frames() const { return *frames_; }
  [[nodiscard]] const std::vector<double>& volumes() const { return volumes_; }
  [[nodiscard]] const Eigen::Matrix3d& deformation() const { return f_; }
  [[nodiscard]] double eq_strain() const { return eq_strain_; }
  [[nodiscard]] const Eigen::Matrix3d& stress() const { return stress_; }
  [[nodiscard]] const std::optional<LateralGuess>& last_lateral() const { return last_lateral_; }

  [[nodiscard]] Quaternion current_orientation(std::size_t i) const;
  [[nodiscard]] WeightedOrientationSet texture() const;

  /// Text snapshot: `# F` and `# eq_strain` header lines, then per crystal
  /// `volume q(4) Fp(9 row-major) r(24) Gamma` with q the initial orientation.
  void save_snapshot(const std::filesystem::path& path) const;
  static CrystalAggregate load_snapshot(const std::filesystem::path& path,
                                        const MaterialParams& params);

 private:
  friend struct AggregateAccess;
  std::vector<CrystalState> crystals_;
  std::shared_ptr<const std::vector<LatticeFrame>> frames_;
  std::vector<double> volumes_;  // fractions summing to one
  Eigen::Matrix3d f_ = Eigen::Matrix3d::Identity();
  double eq_strain_ = 0.0;
  Eigen::Matrix3d stress_ = Eigen::Matrix3d::Zero();
  std::optional<LateralGuess> last_lateral_;
};

struct BalanceResult {
  CrystalAggregate aggregate;
  double f22 = 1.0;
  double f33 = 1.0;
  Eigen::Matrix3d stress;          // volume average, sample frame
  Eigen::Matrix3d rotated_stress;  // R^T stress R
  double tolerance = 0.0;
  int iterations = 0;
  int evaluations = 0;
};

/// Imposes R diag(f11, F22, F33) R^T on top of the current deformation and
/// solves F22, F33 so the rotated lateral stresses vanish.
BalanceResult balance_lateral(const CrystalAggregate& aggregate, double f11,
                              const Quaternion& rotation, double dt, const MaterialParams& params,
                              const SimulationOptions& options = {});

struct ProcessAction {
  double f = 0.0;  // axial stretch increment, F11 = 1 + f
  Quaternion rotation;
};

struct ProcessStepOutcome {
  CrystalAggregate aggregate;  // unchanged input when the cap is hit or f = 0
  bool cap_exceeded = false;
  double f22 = 1.0;
  double f33 = 1.0;
  double eq_strain_increment = 0.0;
  int balance_iterations = 0;
};

ProcessStepOutcome apply_process_step(const CrystalAggregate& aggregate,
                                      const ProcessAction& action, const MaterialParams& params,
                                      const SimulationOptions& options = {});

/// Voigt-averaged stiffness of a texture, MPa.
Matrix6d voigt_average_stiffness(const WeightedOrientationSet& texture,
                                 const MaterialParams& params);

/// E_ii in GPa from the inverted Voigt-average stiffness; axis in {1, 2, 3}.
double young_modulus(const WeightedOrientationSet& texture, int axis,
                     const MaterialParams& params);

}  // namespace texopt
