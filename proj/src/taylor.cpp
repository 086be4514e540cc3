#include "texopt/taylor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

namespace texopt {

using Eigen::Matrix3d;

struct AggregateAccess {
  static std::vector<CrystalState>& crystals(CrystalAggregate& a) { return a.crystals_; }
  static Matrix3d& deformation(CrystalAggregate& a) { return a.f_; }
  static double& eq_strain(CrystalAggregate& a) { return a.eq_strain_; }
  static Matrix3d& stress(CrystalAggregate& a) { return a.stress_; }
  static std::optional<LateralGuess>& last_lateral(CrystalAggregate& a) { return a.last_lateral_; }
};

namespace {

Matrix3d sym(const Matrix3d& a) { return 0.5 * (a + a.transpose()); }

void require_invertible(const Matrix3d& f, const char* what) {
  const double det = f.determinant();
  if (!(det > 1e-12) || !std::isfinite(det)) {
    throw std::invalid_argument(std::string(what) + " must have a positive determinant");
  }
}

// Stress-Voigt transformation for T' = R T R^T.
Matrix6d bond_matrix(const Matrix3d& r) {
  Matrix6d k;
  const int a[6] = {0, 1, 2, 1, 0, 0};
  const int b[6] = {0, 1, 2, 2, 2, 1};
  for (int i = 0; i < 6; ++i) {
    const int p = a[i], q = b[i];
    for (int j = 0; j < 6; ++j) {
      const int s = a[j], t = b[j];
      k(i, j) = (j < 3) ? r(p, s) * r(q, t) : r(p, s) * r(q, t) + r(p, t) * r(q, s);
    }
  }
  return k;
}

}  // namespace

void MaterialParams::validate() const {
  const std::pair<const char*, double> fields[] = {
      {"c11", c11},         {"c12", c12},
      {"c44", c44},         {"gamma_dot0", gamma_dot0},
      {"rate_sensitivity", rate_sensitivity},
      {"tau0", tau0},       {"tau1", tau1},
      {"theta0", theta0},   {"theta1", theta1},
      {"q_coplanar", q_coplanar},
      {"q_noncoplanar", q_noncoplanar}};
  for (const auto& [name, v] : fields) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument(std::string("material parameter ") + name + " must be positive");
    }
  }
}

const std::array<SlipSystem, kSlipSystems>& bcc_slip_systems() {
  static const auto systems = [] {
    const Eigen::Vector3d dirs[4] = {{1, 1, 1}, {-1, 1, 1}, {1, -1, 1}, {1, 1, -1}};
    const Eigen::Vector3d planes110[6] = {{1, 1, 0}, {1, -1, 0}, {1, 0, 1},
                                          {1, 0, -1}, {0, 1, 1}, {0, 1, -1}};
    std::vector<Eigen::Vector3d> planes112;
    for (int two = 0; two < 3; ++two) {
      for (int s1 : {1, -1}) {
        for (int s2 : {1, -1}) {
          Eigen::Vector3d n;
          n(two) = 2;
          n((two + 1) % 3) = s1;
          n((two + 2) % 3) = s2;
          planes112.push_back(n);
        }
      }
    }
    std::array<SlipSystem, kSlipSystems> out{};
    std::size_t idx = 0;
    auto add = [&](const Eigen::Vector3d& n, int family) {
      for (const auto& m : dirs) {
        if (std::abs(m.dot(n)) < 1e-12) out.at(idx++) = {m.normalized(), n.normalized(), family};
      }
    };
    for (const auto& n : planes110) add(n, 0);
    for (const auto& n : planes112) add(n, 1);
    if (idx != kSlipSystems) throw std::logic_error("slip system enumeration is inconsistent");
    return out;
  }();
  return systems;
}

Eigen::Matrix<double, 24, 24> latent_hardening_matrix(const MaterialParams& params) {
  const auto& sys = bcc_slip_systems();
  Eigen::Matrix<double, 24, 24> q;
  for (std::size_t a = 0; a < kSlipSystems; ++a) {
    for (std::size_t b = 0; b < kSlipSystems; ++b) {
      if (a == b) {
        q(a, b) = 1.0;
      } else if (std::abs(sys[a].n.dot(sys[b].n)) > 1.0 - 1e-9) {
        q(a, b) = params.q_coplanar;
      } else {
        q(a, b) = params.q_noncoplanar;
      }
    }
  }
  return q;
}

Vector6d stress_to_voigt(const Matrix3d& t) {
  Vector6d v;
  v << t(0, 0), t(1, 1), t(2, 2), t(1, 2), t(0, 2), t(0, 1);
  return v;
}

Matrix3d stress_from_voigt(const Vector6d& v) {
  Matrix3d t;
  t << v(0), v(5), v(4), v(5), v(1), v(3), v(4), v(3), v(2);
  return t;
}

Vector6d strain_to_voigt(const Matrix3d& e) {
  Vector6d v;
  v << e(0, 0), e(1, 1), e(2, 2), e(1, 2) + e(2, 1), e(0, 2) + e(2, 0), e(0, 1) + e(1, 0);
  return v;
}

Matrix6d cubic_stiffness(const MaterialParams& params) {
  const double c11 = params.c11 * 1000.0, c12 = params.c12 * 1000.0, c44 = params.c44 * 1000.0;
  Matrix6d c = Matrix6d::Zero();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) c(i, j) = (i == j) ? c11 : c12;
    c(i + 3, i + 3) = c44;
  }
  return c;
}

Matrix6d rotate_stiffness(const Matrix6d& c, const Matrix3d& rotation) {
  const Matrix6d k = bond_matrix(rotation);
  return k * c * k.transpose();
}

Matrix3d second_pk_stress(const Matrix3d& fe, const Matrix6d& stiffness) {
  require_invertible(fe, "elastic deformation gradient");
  const Matrix3d green = 0.5 * (fe.transpose() * fe - Matrix3d::Identity());
  return stress_from_voigt(stiffness * strain_to_voigt(green));
}

Matrix3d second_pk_stress(const Matrix3d& fe, const MaterialParams& params) {
  return second_pk_stress(fe, cubic_stiffness(params));
}

Matrix3d cauchy_from_pk(const Matrix3d& tstar, const Matrix3d& fe) {
  require_invertible(fe, "elastic deformation gradient");
  return sym(fe * tstar * fe.transpose()) / fe.determinant();
}

Matrix3d pk_from_cauchy(const Matrix3d& cauchy, const Matrix3d& fe) {
  require_invertible(fe, "elastic deformation gradient");
  const Matrix3d inv = fe.inverse();
  return sym(fe.determinant() * inv * cauchy * inv.transpose());
}

double resolved_shear(const Matrix3d& fe, const Matrix3d& tstar, const SlipSystem& system) {
  const Matrix3d ct = fe.transpose() * fe * tstar;
  return system.m.dot(ct * system.n);
}

SlipArray shear_rates(const SlipArray& tau, const SlipArray& resistance,
                      const MaterialParams& params) {
  SlipArray out{};
  const double n = 1.0 / params.rate_sensitivity;
  for (std::size_t a = 0; a < kSlipSystems; ++a) {
    if (!(resistance[a] > 0.0)) throw std::invalid_argument("slip resistance must be positive");
    const double x = std::abs(tau[a]) / resistance[a];
    out[a] = params.gamma_dot0 * std::pow(x, n) * (tau[a] < 0.0 ? -1.0 : 1.0);
    if (tau[a] == 0.0) out[a] = 0.0;
  }
  return out;
}

double voce_resistance(double g, const MaterialParams& p) {
  return p.tau0 + (p.tau1 + p.theta1 * g) * (1.0 - std::exp(-g * p.theta0 / p.tau1));
}

double voce_slope(double g, const MaterialParams& p) {
  const double e = std::exp(-g * p.theta0 / p.tau1);
  return p.theta1 * (1.0 - e) + (p.tau1 + p.theta1 * g) * (p.theta0 / p.tau1) * e;
}

SlipArray hardening_rates(const SlipArray& shear_rate, double accumulated_shear,
                          const MaterialParams& params) {
  if (accumulated_shear < 0.0) throw std::invalid_argument("accumulated shear must be >= 0");
  const auto q = latent_hardening_matrix(params);
  const double slope = voce_slope(accumulated_shear, params);
  SlipArray out{};
  for (std::size_t a = 0; a < kSlipSystems; ++a) {
    double s = 0.0;
    for (std::size_t b = 0; b < kSlipSystems; ++b) s += q(a, b) * std::abs(shear_rate[b]);
    out[a] = slope * s;
  }
  return out;
}

CrystalState CrystalState::fresh(const Quaternion& orientation, const MaterialParams& params) {
  require_unit(orientation, "crystal orientation");
  CrystalState s;
  s.initial_orientation = orientation;
  s.resistance.fill(params.tau0);
  return s;
}

LatticeFrame LatticeFrame::from_orientation(const Quaternion& q, const MaterialParams& params) {
  LatticeFrame f;
  f.initial_rotation = q.to_matrix();
  f.stiffness = rotate_stiffness(cubic_stiffness(params), f.initial_rotation);
  f.compliance = f.stiffness.inverse();
  const auto& sys = bcc_slip_systems();
  for (std::size_t a = 0; a < kSlipSystems; ++a) {
    f.schmid[a] = (f.initial_rotation * sys[a].m) * (f.initial_rotation * sys[a].n).transpose();
  }
  return f;
}

namespace {

struct Substep {
  bool ok = false;
  CrystalState state;
  Vector6d tstar;
  double max_slip = 0.0;
  double max_stress_change = 0.0;  // max |delta tau| / r over the substep
};

class SubstepSolver {
 public:
  SubstepSolver(const LatticeFrame& frame, const MaterialParams& params,
                const IntegrationOptions& options)
      : frame_(frame), params_(params), options_(options), latent_(latent_hardening_matrix(params)) {}

  Substep solve(const CrystalState& start, const Matrix3d& f_next, double dt,
                const Vector6d& guess) {
    Substep out;
    fe_trial_ = f_next * start.fp.inverse();
    const Matrix3d a = fe_trial_.transpose() * fe_trial_;
    t_trial_ = frame_.stiffness * strain_to_voigt(0.5 * (a - Matrix3d::Identity()));
    for (std::size_t s = 0; s < kSlipSystems; ++s) {
      p_[s] = strain_to_voigt(sym(a * frame_.schmid[s]));
      c_[s] = frame_.stiffness * p_[s];
    }
    dt_ = dt;
    tol_ = 1e-9 * std::max(100.0, t_trial_.cwiseAbs().maxCoeff());

    // Hardening is solved by fixed-point iteration around the stress solve.
    SlipArray r = start.resistance;
    Vector6d t = guess;
    SlipArray slip{};
    double gamma_new = start.accumulated_shear;
    bool settled = false;
    for (int outer = 0; outer < 12 && !settled; ++outer) {
      if (!newton(t, r, slip)) return out;
      double total = 0.0;
      for (double g : slip) total += std::abs(g);
      gamma_new = start.accumulated_shear + total;
      const double slope = voce_slope(start.accumulated_shear + 0.5 * total, params_);
      double change = 0.0;
      SlipArray r_next{};
      for (std::size_t i = 0; i < kSlipSystems; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < kSlipSystems; ++j) s += latent_(i, j) * std::abs(slip[j]);
        r_next[i] = start.resistance[i] + slope * s;
        change = std::max(change, std::abs(r_next[i] - r[i]));
      }
      r = r_next;
      settled = change < 1e-9;
    }
    if (!settled) return out;
    if (!newton(t, r, slip)) return out;

    Matrix3d lp = Matrix3d::Zero();
    for (std::size_t s = 0; s < kSlipSystems; ++s) {
      lp += slip[s] * frame_.schmid[s];
      out.max_slip = std::max(out.max_slip, std::abs(slip[s]));
    }
    SlipArray tau_start{}, tau_end{};
    resolve(guess, tau_start, nullptr);
    resolve(t, tau_end, nullptr);
    for (std::size_t s = 0; s < kSlipSystems; ++s) {
      out.max_stress_change = std::max(out.max_stress_change, std::abs(tau_end[s] - tau_start[s]) / r[s]);
    }
    out.state = start;
    Matrix3d fp = lp.exp() * start.fp;
    fp /= std::cbrt(fp.determinant());
    out.state.fp = fp;
    out.state.resistance = r;
    out.state.accumulated_shear = gamma_new;
    out.tstar = t;
    out.ok = true;
    return out;
  }

 private:
  // Resolved shears with the elastic stretch implied by the stress itself,
  // Ce = I + 2 S:T*, and their gradients with respect to t.
  void resolve(const Vector6d& t, SlipArray& tau, std::array<Vector6d, kSlipSystems>* grad) const {
    const Matrix3d ts = stress_from_voigt(t);
    const Vector6d e = frame_.compliance * t;
    Matrix3d ce;
    ce << 1.0 + 2.0 * e(0), e(5), e(4), e(5), 1.0 + 2.0 * e(1), e(3), e(4), e(3), 1.0 + 2.0 * e(2);
    const Matrix3d m = ce * ts;
    for (std::size_t s = 0; s < kSlipSystems; ++s) {
      tau[s] = m.cwiseProduct(frame_.schmid[s]).sum();
      if (grad) {
        (*grad)[s] = strain_to_voigt(sym(ce * frame_.schmid[s])) +
                     2.0 * frame_.compliance.transpose() *
                         stress_to_voigt(sym(frame_.schmid[s] * ts));
      }
    }
  }

  // Residual G(t) = t - t_trial + sum dgamma_s C p_s, with slip from the
  // power law evaluated at the end-of-substep stress.
  bool residual(const Vector6d& t, const SlipArray& r, SlipArray& slip, SlipArray& dslip,
                Vector6d& g) const {
    const double n = 1.0 / params_.rate_sensitivity;
    SlipArray tau{};
    resolve(t, tau, nullptr);
    g = t - t_trial_;
    for (std::size_t s = 0; s < kSlipSystems; ++s) {
      const double x = std::abs(tau[s]) / r[s];
      if (x > 50.0) return false;
      const double mag = params_.gamma_dot0 * dt_ * std::pow(x, n);
      slip[s] = tau[s] < 0.0 ? -mag : mag;
      dslip[s] = tau[s] != 0.0 ? n * mag / std::abs(tau[s]) : 0.0;
    }
    Matrix3d lp = Matrix3d::Zero();
    for (std::size_t s = 0; s < kSlipSystems; ++s) lp += slip[s] * frame_.schmid[s];
    const Matrix3d fe = fe_trial_ * (-lp).exp();
    g = t - frame_.stiffness * strain_to_voigt(0.5 * (fe.transpose() * fe - Matrix3d::Identity()));
    return g.allFinite();
  }

  bool newton(Vector6d& t, const SlipArray& r, SlipArray& slip) const {
    SlipArray dslip{};
    Vector6d g;
    if (!residual(t, r, slip, dslip, g)) {
      t = t_trial_;
      if (!residual(t, r, slip, dslip, g)) return false;
    }
    double norm = g.norm();
    std::array<Vector6d, kSlipSystems> grad;
    SlipArray tau{};
    for (int it = 0; it < options_.max_newton_iterations; ++it) {
      if (g.cwiseAbs().maxCoeff() < tol_) return true;
      resolve(t, tau, &grad);
      Matrix6d jac = Matrix6d::Identity();
      for (std::size_t s = 0; s < kSlipSystems; ++s) {
        if (dslip[s] != 0.0) jac.noalias() += dslip[s] * c_[s] * grad[s].transpose();
      }
      const Vector6d delta = jac.partialPivLu().solve(-g);
      double lambda = 1.0;
      bool accepted = false;
      SlipArray slip_try{}, dslip_try{};
      Vector6d g_try;
      for (int ls = 0; ls < 40; ++ls, lambda *= 0.5) {
        const Vector6d t_try = t + lambda * delta;
        if (residual(t_try, r, slip_try, dslip_try, g_try) &&
            g_try.norm() < (1.0 - 1e-4 * lambda) * norm) {
          t = t_try;
          accepted = true;
          break;
        }
      }
      if (!accepted) return g.cwiseAbs().maxCoeff() < 10.0 * tol_;
      slip = slip_try;
      dslip = dslip_try;
      g = g_try;
      norm = g.norm();
    }
    return g.cwiseAbs().maxCoeff() < tol_;
  }

  const LatticeFrame& frame_;
  const MaterialParams& params_;
  const IntegrationOptions& options_;
  Eigen::Matrix<double, 24, 24> latent_;
  std::array<Vector6d, kSlipSystems> p_;
  std::array<Vector6d, kSlipSystems> c_;
  Vector6d t_trial_;
  Matrix3d fe_trial_;
  double dt_ = 0.0;
  double tol_ = 0.0;
};

}  // namespace

CrystalStepResult integrate_crystal(const CrystalState& state, const LatticeFrame& frame,
                                    const Matrix3d& f_start, const Matrix3d& f_end, double dt,
                                    const MaterialParams& params,
                                    const IntegrationOptions& options) {
  require_invertible(f_start, "start deformation gradient");
  require_invertible(f_end, "end deformation gradient");
  if (!(dt >= 0.0) || !std::isfinite(dt)) throw std::invalid_argument("time step must be >= 0");
  if (options.min_substeps < 1 || options.max_substeps < options.min_substeps) {
    throw std::invalid_argument("invalid substep limits");
  }

  const Matrix3d increment = f_end * f_start.inverse();
  const Matrix3d log_increment = increment.log();
  SubstepSolver solver(frame, params, options);

  CrystalStepResult result;
  result.state = state;
  Vector6d t = stress_to_voigt(second_pk_stress(f_start * state.fp.inverse(), frame.stiffness));
  const double h_max = 1.0 / options.min_substeps;
  const double h_min = 1.0 / options.max_substeps;
  double s = 0.0;
  double h = h_max;
  while (1.0 - s > 1e-12) {
    h = std::min(h, 1.0 - s);
    const bool last = s + h >= 1.0 - 1e-12;
    const Matrix3d f_next = last ? f_end : Matrix3d((log_increment * (s + h)).exp() * f_start);
    Substep sub = solver.solve(result.state, f_next, dt * h, t);
    if (!sub.ok || sub.max_slip > options.max_slip_increment ||
        sub.max_stress_change > options.max_stress_change) {
      h *= 0.5;
      if (h < h_min * (1.0 - 1e-9)) {
        std::ostringstream msg;
        msg << "crystal integration did not converge: substep below 1/" << options.max_substeps
            << " at fraction " << s << " (accumulated shear " << result.state.accumulated_shear
            << ")";
        throw IntegrationFailure(msg.str());
      }
      continue;
    }
    result.state = sub.state;
    t = sub.tstar;
    s = last ? 1.0 : s + h;
    if (++result.substeps > options.max_substeps) {
      throw IntegrationFailure("crystal integration exceeded the substep limit");
    }
    h = std::min(2.0 * h, h_max);
  }
  result.cauchy = cauchy_from_pk(stress_from_voigt(t), f_end * result.state.fp.inverse());
  return result;
}

Matrix3d elastic_rotation(const Matrix3d& fe) {
  const Eigen::JacobiSVD<Matrix3d> svd(fe, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix3d u = svd.matrixU();
  const Matrix3d v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return u * v.transpose();
}

CrystalAggregate CrystalAggregate::from_texture(const WeightedOrientationSet& texture,
                                                const MaterialParams& params) {
  params.validate();
  if (texture.size() == 0) throw std::invalid_argument("aggregate needs at least one crystal");
  CrystalAggregate agg;
  auto frames = std::make_shared<std::vector<LatticeFrame>>();
  frames->reserve(texture.size());
  for (const auto& e : texture.entries()) {
    agg.crystals_.push_back(CrystalState::fresh(e.orientation, params));
    frames->push_back(LatticeFrame::from_orientation(e.orientation, params));
    agg.volumes_.push_back(e.volume / texture.total_volume());
  }
  agg.frames_ = std::move(frames);
  return agg;
}

Quaternion CrystalAggregate::current_orientation(std::size_t i) const {
  const Matrix3d fe = f_ * crystals_.at(i).fp.inverse();
  return Quaternion::from_matrix(elastic_rotation(fe) * (*frames_)[i].initial_rotation);
}

WeightedOrientationSet CrystalAggregate::texture() const {
  std::vector<WeightedOrientation> entries;
  entries.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) entries.push_back({current_orientation(i), volumes_[i]});
  return WeightedOrientationSet(std::move(entries));
}

void CrystalAggregate::save_snapshot(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write snapshot " + path.string());
  out << std::setprecision(17) << "# F";
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out << ' ' << f_(i, j);
  out << "\n# eq_strain " << eq_strain_ << "\n";
  for (std::size_t c = 0; c < size(); ++c) {
    const auto& s = crystals_[c];
    const auto& q = s.initial_orientation;
    out << volumes_[c] << ' ' << q.w << ' ' << q.x << ' ' << q.y << ' ' << q.z;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) out << ' ' << s.fp(i, j);
    for (double r : s.resistance) out << ' ' << r;
    out << ' ' << s.accumulated_shear << "\n";
  }
}

CrystalAggregate CrystalAggregate::load_snapshot(const std::filesystem::path& path,
                                                 const MaterialParams& params) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read snapshot " + path.string());
  std::vector<WeightedOrientation> entries;
  std::vector<CrystalState> states;
  Matrix3d f = Matrix3d::Identity();
  double eq = 0.0;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    if (line.rfind("# F", 0) == 0) {
      ss.ignore(3);
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) ss >> f(i, j);
      continue;
    }
    if (line.rfind("# eq_strain", 0) == 0) {
      ss.ignore(11);
      ss >> eq;
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    double v, w, x, y, z;
    ss >> v >> w >> x >> y >> z;
    CrystalState s;
    s.initial_orientation = Quaternion{w, x, y, z};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) ss >> s.fp(i, j);
    for (double& r : s.resistance) ss >> r;
    ss >> s.accumulated_shear;
    if (!ss) throw std::invalid_argument("malformed snapshot line in " + path.string());
    entries.push_back({s.initial_orientation, v});
    states.push_back(s);
  }
  CrystalAggregate agg = from_texture(WeightedOrientationSet(std::move(entries)), params);
  agg.crystals_ = std::move(states);
  agg.f_ = f;
  agg.eq_strain_ = eq;
  return agg;
}

namespace {

struct Evaluation {
  Eigen::Vector2d residual;
  Matrix3d stress;
  Matrix3d rotated;
  std::vector<CrystalState> states;
};

Evaluation evaluate_lateral(const CrystalAggregate& agg, const Matrix3d& rot, double f11,
                            const Eigen::Vector2d& x, double dt, const MaterialParams& params,
                            const IntegrationOptions& options) {
  const Matrix3d delta = rot * Eigen::Vector3d(f11, x(0), x(1)).asDiagonal() * rot.transpose();
  const Matrix3d f_end = delta * agg.deformation();
  Evaluation ev;
  ev.stress.setZero();
  ev.states.reserve(agg.size());
  for (std::size_t i = 0; i < agg.size(); ++i) {
    auto r = integrate_crystal(agg.crystals()[i], agg.frames()[i], agg.deformation(), f_end, dt,
                               params, options);
    ev.stress += agg.volumes()[i] * r.cauchy;
    ev.states.push_back(std::move(r.state));
  }
  ev.stress = sym(ev.stress);
  ev.rotated = sym(rot.transpose() * ev.stress * rot);
  ev.residual = {ev.rotated(1, 1), ev.rotated(2, 2)};
  return ev;
}

}  // namespace

BalanceResult balance_lateral(const CrystalAggregate& aggregate, double f11,
                              const Quaternion& rotation, double dt, const MaterialParams& params,
                              const SimulationOptions& options) {
  require_unit(rotation, "process rotation");
  if (!(f11 > 0.0)) throw std::invalid_argument("axial stretch must be positive");
  const Matrix3d rot = rotation.to_matrix();
  const double f = f11 - 1.0;

  Eigen::Vector2d x;
  const auto& last = aggregate.last_lateral();
  if (last && f != 0.0 && (last->f > 0.0) == (f > 0.0)) {
    x = {last->f22, last->f33};
  } else {
    x.setConstant(1.0 / std::sqrt(f11));
  }

  BalanceResult out;
  Evaluation ev = evaluate_lateral(aggregate, rot, f11, x, dt, params, options.integration);
  out.evaluations = 1;
  Eigen::Matrix2d jac;
  bool have_jac = false;
  for (int iter = 0;; ++iter) {
    const double tol =
        std::max(options.balance_abs_tol, options.balance_rel_tol * std::abs(ev.rotated(0, 0)));
    if (ev.residual.cwiseAbs().maxCoeff() < tol) {
      out.tolerance = tol;
      out.iterations = iter;
      break;
    }
    if (iter >= options.balance_max_iterations) {
      std::ostringstream msg;
      msg << "lateral stress balance failed after " << iter << " iterations (residual "
          << ev.residual.transpose() << " MPa)";
      throw BalancingFailure(msg.str());
    }
    if (!have_jac) {
      for (int j = 0; j < 2; ++j) {
        Eigen::Vector2d xp = x;
        const double step = options.fd_relative_step * x(j);
        xp(j) += step;
        const auto ep = evaluate_lateral(aggregate, rot, f11, xp, dt, params, options.integration);
        jac.col(j) = (ep.residual - ev.residual) / step;
        ++out.evaluations;
      }
      have_jac = true;
    }
    if (!(std::abs(jac.determinant()) > 0.0)) throw BalancingFailure("singular balance Jacobian");
    Eigen::Vector2d dx = jac.fullPivLu().solve(-ev.residual);
    const double max_step = 0.05;
    if (dx.cwiseAbs().maxCoeff() > max_step) dx *= max_step / dx.cwiseAbs().maxCoeff();
    Eigen::Vector2d x_new = x + dx;
    Evaluation ev_new = evaluate_lateral(aggregate, rot, f11, x_new, dt, params, options.integration);
    ++out.evaluations;
    const Eigen::Vector2d dr = ev_new.residual - ev.residual;
    if (ev_new.residual.norm() < 0.5 * ev.residual.norm()) {
      jac += (dr - jac * dx) * dx.transpose() / dx.squaredNorm();
    } else {
      have_jac = false;
    }
    x = x_new;
    ev = std::move(ev_new);
  }

  out.aggregate = aggregate;
  const Matrix3d delta = rot * Eigen::Vector3d(f11, x(0), x(1)).asDiagonal() * rot.transpose();
  AggregateAccess::crystals(out.aggregate) = std::move(ev.states);
  AggregateAccess::deformation(out.aggregate) = delta * aggregate.deformation();
  AggregateAccess::stress(out.aggregate) = ev.stress;
  AggregateAccess::last_lateral(out.aggregate) = LateralGuess{f, x(0), x(1)};
  out.f22 = x(0);
  out.f33 = x(1);
  out.stress = ev.stress;
  out.rotated_stress = ev.rotated;
  return out;
}

ProcessStepOutcome apply_process_step(const CrystalAggregate& aggregate,
                                      const ProcessAction& action, const MaterialParams& params,
                                      const SimulationOptions& options) {
  if (!(std::abs(action.f) <= 0.02 + 1e-12)) {
    throw std::invalid_argument("process step magnitude must lie in [-0.02, 0.02]");
  }
  require_unit(action.rotation, "process rotation");
  ProcessStepOutcome out;
  if (action.f == 0.0) {
    out.aggregate = aggregate;
    return out;
  }
  const double dt = std::abs(action.f) / options.strain_rate;
  BalanceResult bal = balance_lateral(aggregate, 1.0 + action.f, action.rotation, dt, params, options);
  const double a = std::log1p(action.f), b = std::log(bal.f22), c = std::log(bal.f33);
  const double inc = std::sqrt(2.0 / 3.0 * (a * a + b * b + c * c));
  out.f22 = bal.f22;
  out.f33 = bal.f33;
  out.eq_strain_increment = inc;
  out.balance_iterations = bal.iterations;
  if (aggregate.eq_strain() + inc > options.strain_cap) {
    out.cap_exceeded = true;
    out.aggregate = aggregate;
    return out;
  }
  out.aggregate = std::move(bal.aggregate);
  AggregateAccess::eq_strain(out.aggregate) = aggregate.eq_strain() + inc;
  return out;
}

Matrix6d voigt_average_stiffness(const WeightedOrientationSet& texture,
                                 const MaterialParams& params) {
  const Matrix6d c = cubic_stiffness(params);
  Matrix6d avg = Matrix6d::Zero();
  for (const auto& e : texture.entries()) {
    avg += e.volume * rotate_stiffness(c, e.orientation.to_matrix());
  }
  return avg / texture.total_volume();
}

double young_modulus(const WeightedOrientationSet& texture, int axis,
                     const MaterialParams& params) {
  if (axis < 1 || axis > 3) throw std::invalid_argument("axis must be 1, 2 or 3");
  const Matrix6d c = voigt_average_stiffness(texture, params);
  const Eigen::FullPivLU<Matrix6d> lu(c);
  if (!lu.isInvertible()) throw std::invalid_argument("average stiffness is singular");
  const Matrix6d s = lu.inverse();
  return 1.0 / s(axis - 1, axis - 1) / 1000.0;
}

}  // namespace texopt
