#include "texopt/qnet.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace texopt {

namespace nn {

Eigen::MatrixXd linear_forward(const Eigen::MatrixXd& w, const Eigen::VectorXd& b,
                               const Eigen::MatrixXd& x) {
  Eigen::MatrixXd y = w * x;
  y.colwise() += b;
  return y;
}

Eigen::MatrixXd linear_backward(const Eigen::MatrixXd& w, const Eigen::MatrixXd& x,
                                const Eigen::MatrixXd& dy, Eigen::MatrixXd& dw,
                                Eigen::VectorXd& db) {
  dw += dy * x.transpose();
  db += dy.rowwise().sum();
  return w.transpose() * dy;
}

Eigen::MatrixXd layer_norm_forward(const Eigen::MatrixXd& z, const Eigen::VectorXd& gain,
                                   const Eigen::VectorXd& offset, LayerNormCache& cache) {
  const double n = static_cast<double>(z.rows());
  const Eigen::RowVectorXd mean = z.colwise().sum() / n;
  Eigen::MatrixXd centered = z.rowwise() - mean;
  const Eigen::RowVectorXd var = centered.array().square().colwise().sum() / n;
  cache.inv_std = (var.array() + kLayerNormEps).rsqrt();
  cache.xhat = centered.array().rowwise() * cache.inv_std.array();
  Eigen::MatrixXd y = cache.xhat.array().colwise() * gain.array();
  y.colwise() += offset;
  return y;
}

Eigen::MatrixXd layer_norm_backward(const LayerNormCache& cache, const Eigen::VectorXd& gain,
                                    const Eigen::MatrixXd& dy, Eigen::VectorXd& dgain,
                                    Eigen::VectorXd& doffset) {
  const double n = static_cast<double>(dy.rows());
  dgain += (dy.array() * cache.xhat.array()).rowwise().sum().matrix();
  doffset += dy.rowwise().sum();
  const Eigen::MatrixXd dxhat = dy.array().colwise() * gain.array();
  const Eigen::RowVectorXd mean_d = dxhat.colwise().sum() / n;
  const Eigen::RowVectorXd mean_dx = (dxhat.array() * cache.xhat.array()).colwise().sum() / n;
  Eigen::MatrixXd dz = dxhat.rowwise() - mean_d;
  dz -= (cache.xhat.array().rowwise() * mean_dx.array()).matrix();
  return dz.array().rowwise() * cache.inv_std.array();
}

Eigen::MatrixXd relu_forward(const Eigen::MatrixXd& x) { return x.cwiseMax(0.0); }

Eigen::MatrixXd relu_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy) {
  return (x.array() > 0.0).select(dy, 0.0);
}

Eigen::MatrixXd dueling_forward(const Eigen::RowVectorXd& v, const Eigen::MatrixXd& a) {
  const Eigen::RowVectorXd mean = a.colwise().sum() / static_cast<double>(a.rows());
  Eigen::MatrixXd q = a.rowwise() - mean;
  q.rowwise() += v;
  return q;
}

void dueling_backward(const Eigen::MatrixXd& dq, Eigen::RowVectorXd& dv, Eigen::MatrixXd& da) {
  dv = dq.colwise().sum();
  da = dq.rowwise() - dv / static_cast<double>(dq.rows());
}

double loss_value(double td, LossKind kind) {
  if (kind == LossKind::Mse) return 0.5 * td * td;
  const double a = std::abs(td);
  return a <= 1.0 ? 0.5 * td * td : a - 0.5;
}

double loss_slope(double td, LossKind kind) {
  if (kind == LossKind::Mse) return td;
  return std::clamp(td, -1.0, 1.0);
}

}  // namespace nn

std::size_t Architecture::parameter_count() const {
  std::size_t n = 0;
  int prev = inputs;
  for (int h : hidden) {
    n += static_cast<std::size_t>(h) * (prev + 3);
    prev = h;
  }
  return n + static_cast<std::size_t>(prev + 1) * (actions + 1);
}

using CMap = Eigen::Map<const Eigen::MatrixXd>;
using CVMap = Eigen::Map<const Eigen::VectorXd>;
using MMap = Eigen::Map<Eigen::MatrixXd>;
using MVMap = Eigen::Map<Eigen::VectorXd>;

// Offsets of every tensor inside the flat parameter vector.
struct QNetwork::Views {
  struct Layer {
    int in, out;
    std::size_t w, b, gain, offset;
  };
  std::vector<Layer> layers;
  int last = 0;
  std::size_t wv = 0, bv = 0, wa = 0, ba = 0;

  explicit Views(const Architecture& arch) {
    std::size_t at = 0;
    int prev = arch.inputs;
    for (int h : arch.hidden) {
      Layer l{prev, h, at, 0, 0, 0};
      at += static_cast<std::size_t>(h) * prev;
      l.b = at;
      at += h;
      l.gain = at;
      at += h;
      l.offset = at;
      at += h;
      layers.push_back(l);
      prev = h;
    }
    last = prev;
    wv = at;
    at += prev;
    bv = at;
    at += 1;
    wa = at;
    at += static_cast<std::size_t>(arch.actions) * prev;
    ba = at;
  }
};

namespace {

void check_arch(const Architecture& arch) {
  if (arch.inputs < 1 || arch.actions < 1) throw std::invalid_argument("empty network shape");
  for (int h : arch.hidden) {
    if (h < 1) throw std::invalid_argument("hidden layer sizes must be positive");
  }
}

}  // namespace

QNetwork QNetwork::zeros(Architecture arch) {
  check_arch(arch);
  QNetwork net;
  net.arch_ = std::move(arch);
  net.params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.arch_.parameter_count()));
  return net;
}

QNetwork::QNetwork(Architecture arch, std::uint64_t seed) {
  *this = zeros(std::move(arch));
  std::mt19937_64 rng(seed);
  const Views views(arch_);
  auto fill = [&](std::size_t at, std::size_t n, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = 0; i < n; ++i) params_[static_cast<Eigen::Index>(at + i)] = u(rng);
  };
  for (const auto& l : views.layers) {
    fill(l.w, static_cast<std::size_t>(l.in) * l.out, std::sqrt(6.0 / l.in));
    params_.segment(static_cast<Eigen::Index>(l.gain), l.out).setOnes();
  }
  // heads start at zero so untried actions carry no spurious preference
}

ForwardResult QNetwork::forward(const Eigen::MatrixXd& inputs) const {
  if (inputs.rows() != arch_.inputs) {
    throw std::invalid_argument("network expects " + std::to_string(arch_.inputs) +
                                " inputs, got " + std::to_string(inputs.rows()));
  }
  const Views views(arch_);
  const double* p = params_.data();
  Eigen::MatrixXd h = inputs;
  for (const auto& l : views.layers) {
    nn::LayerNormCache cache;
    const Eigen::MatrixXd z = nn::linear_forward(CMap(p + l.w, l.out, l.in), CVMap(p + l.b, l.out), h);
    h = nn::relu_forward(
        nn::layer_norm_forward(z, CVMap(p + l.gain, l.out), CVMap(p + l.offset, l.out), cache));
  }
  ForwardResult r;
  r.v = nn::linear_forward(CMap(p + views.wv, 1, views.last), CVMap(p + views.bv, 1), h);
  const Eigen::MatrixXd a =
      nn::linear_forward(CMap(p + views.wa, arch_.actions, views.last),
                         CVMap(p + views.ba, arch_.actions), h);
  r.q = nn::dueling_forward(r.v, a);
  return r;
}

LossResult QNetwork::loss_and_gradient(const Eigen::MatrixXd& inputs,
                                       const std::vector<int>& actions,
                                       const std::vector<double>& targets,
                                       const std::vector<double>& weights,
                                       nn::LossKind kind) const {
  const auto batch = static_cast<std::size_t>(inputs.cols());
  if (actions.size() != batch || targets.size() != batch || weights.size() != batch) {
    throw std::invalid_argument("batch vectors differ in length");
  }
  if (inputs.rows() != arch_.inputs) throw std::invalid_argument("network input size mismatch");
  const Views views(arch_);
  const double* p = params_.data();

  std::vector<Eigen::MatrixXd> layer_in, pre_relu;
  std::vector<nn::LayerNormCache> caches(views.layers.size());
  std::vector<Eigen::MatrixXd> pre_norm;
  Eigen::MatrixXd h = inputs;
  for (std::size_t i = 0; i < views.layers.size(); ++i) {
    const auto& l = views.layers[i];
    layer_in.push_back(h);
    pre_norm.push_back(
        nn::linear_forward(CMap(p + l.w, l.out, l.in), CVMap(p + l.b, l.out), h));
    pre_relu.push_back(nn::layer_norm_forward(pre_norm.back(), CVMap(p + l.gain, l.out),
                                              CVMap(p + l.offset, l.out), caches[i]));
    h = nn::relu_forward(pre_relu.back());
  }
  const Eigen::RowVectorXd v =
      nn::linear_forward(CMap(p + views.wv, 1, views.last), CVMap(p + views.bv, 1), h);
  const Eigen::MatrixXd a = nn::linear_forward(CMap(p + views.wa, arch_.actions, views.last),
                                               CVMap(p + views.ba, arch_.actions), h);
  const Eigen::MatrixXd q = nn::dueling_forward(v, a);

  LossResult r;
  r.abs_td.resize(batch);
  Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(q.rows(), q.cols());
  const double inv_b = 1.0 / static_cast<double>(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    if (actions[i] < 0 || actions[i] >= arch_.actions) throw std::out_of_range("action id");
    const auto c = static_cast<Eigen::Index>(i);
    const double td = targets[i] - q(actions[i], c);
    r.abs_td[i] = std::abs(td);
    r.loss += weights[i] * nn::loss_value(td, kind) * inv_b;
    dq(actions[i], c) = -weights[i] * nn::loss_slope(td, kind) * inv_b;
  }

  r.gradient = Eigen::VectorXd::Zero(params_.size());
  double* g = r.gradient.data();
  Eigen::RowVectorXd dv;
  Eigen::MatrixXd da;
  nn::dueling_backward(dq, dv, da);
  Eigen::MatrixXd dwv = Eigen::MatrixXd::Zero(1, views.last);
  Eigen::VectorXd dbv = Eigen::VectorXd::Zero(1);
  Eigen::MatrixXd dwa = Eigen::MatrixXd::Zero(arch_.actions, views.last);
  Eigen::VectorXd dba = Eigen::VectorXd::Zero(arch_.actions);
  Eigen::MatrixXd dh = nn::linear_backward(CMap(p + views.wv, 1, views.last), h, dv, dwv, dbv);
  dh += nn::linear_backward(CMap(p + views.wa, arch_.actions, views.last), h, da, dwa, dba);
  MMap(g + views.wv, 1, views.last) = dwv;
  g[views.bv] = dbv(0);
  MMap(g + views.wa, arch_.actions, views.last) = dwa;
  MVMap(g + views.ba, arch_.actions) = dba;

  for (std::size_t i = views.layers.size(); i-- > 0;) {
    const auto& l = views.layers[i];
    Eigen::VectorXd dgain = Eigen::VectorXd::Zero(l.out), doffset = Eigen::VectorXd::Zero(l.out);
    Eigen::VectorXd db = Eigen::VectorXd::Zero(l.out);
    Eigen::MatrixXd dw = Eigen::MatrixXd::Zero(l.out, l.in);
    const Eigen::MatrixXd dy = nn::relu_backward(pre_relu[i], dh);
    const Eigen::MatrixXd dz =
        nn::layer_norm_backward(caches[i], CVMap(p + l.gain, l.out), dy, dgain, doffset);
    dh = nn::linear_backward(CMap(p + l.w, l.out, l.in), layer_in[i], dz, dw, db);
    MMap(g + l.w, l.out, l.in) = dw;
    MVMap(g + l.b, l.out) = db;
    MVMap(g + l.gain, l.out) = dgain;
    MVMap(g + l.offset, l.out) = doffset;
  }
  return r;
}

void QNetwork::copy_from(const QNetwork& other) {
  if (!(arch_ == other.arch_)) throw std::invalid_argument("network architectures differ");
  params_ = other.params_;
}

Eigen::VectorXd network_input(const std::vector<double>& state, const std::vector<double>& goal) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(state.size() + goal.size()));
  for (std::size_t i = 0; i < state.size(); ++i) x[static_cast<Eigen::Index>(i)] = state[i];
  for (std::size_t i = 0; i < goal.size(); ++i) {
    x[static_cast<Eigen::Index>(state.size() + i)] = goal[i];
  }
  return x;
}

void Adam::apply(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  if (m.size() != params.size()) {
    m = Eigen::VectorXd::Zero(params.size());
    v = Eigen::VectorXd::Zero(params.size());
    step = 0;
  }
  ++step;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

LossResult train_batch(QNetwork& net, Adam& adam, const Eigen::MatrixXd& inputs,
                       const std::vector<int>& actions, const std::vector<double>& targets,
                       const std::vector<double>& weights, nn::LossKind kind) {
  LossResult r = net.loss_and_gradient(inputs, actions, targets, weights, kind);
  if (!std::isfinite(r.loss) || !r.gradient.allFinite()) {
    throw TrainingFailure("non-finite loss or gradient", net.parameters());
  }
  adam.apply(net.parameters(), r.gradient);
  if (!net.parameters().allFinite()) {
    throw TrainingFailure("non-finite parameters after update", net.parameters());
  }
  return r;
}

void sync_target(const QNetwork& online, QNetwork& target) { target.copy_from(online); }

namespace {

constexpr const char* kMagic = "texopt-checkpoint";
constexpr int kVersion = 1;

void write_vector(std::ostream& out, const char* name, const Eigen::VectorXd& v) {
  out << name << ' ' << v.size();
  for (Eigen::Index i = 0; i < v.size(); ++i) out << ' ' << v[i];
  out << "\n";
}

Eigen::VectorXd read_vector(std::istream& in, const char* name) {
  std::string tag;
  Eigen::Index n = 0;
  if (!(in >> tag >> n) || tag != name || n < 0) {
    throw std::runtime_error(std::string("checkpoint: expected ") + name);
  }
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(in >> v[i])) throw std::runtime_error(std::string("checkpoint: short ") + name);
  }
  return v;
}

void write_arch(std::ostream& out, const Architecture& a) {
  out << "arch " << a.inputs << ' ' << a.actions << ' ' << a.hidden.size();
  for (int h : a.hidden) out << ' ' << h;
  out << "\n";
}

Architecture read_arch(std::istream& in) {
  std::string tag;
  Architecture a;
  std::size_t n = 0;
  if (!(in >> tag >> a.inputs >> a.actions >> n) || tag != "arch") {
    throw std::runtime_error("checkpoint: expected arch");
  }
  a.hidden.resize(n);
  for (auto& h : a.hidden) in >> h;
  return a;
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << kMagic << ' ' << kVersion << "\n" << std::setprecision(17);
  write_arch(out, online.architecture());
  write_vector(out, "online", online.parameters());
  write_vector(out, "target", target.parameters());
  out << "adam " << adam.lr << ' ' << adam.beta1 << ' ' << adam.beta2 << ' ' << adam.eps << ' '
      << adam.step << "\n";
  write_vector(out, "adam_m", adam.m);
  write_vector(out, "adam_v", adam.v);
  out << "extras " << extras.size() << "\n";
  for (const auto& [k, v] : extras) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw std::invalid_argument("checkpoint extra '" + k + "' is not single-line");
    }
    out << k << ' ' << v << "\n";
  }
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kMagic || version != kVersion) {
    throw std::runtime_error("not a version " + std::to_string(kVersion) + " checkpoint");
  }
  Checkpoint c;
  const Architecture arch = read_arch(in);
  c.online = QNetwork::zeros(arch);
  c.target = QNetwork::zeros(arch);
  c.online.parameters() = read_vector(in, "online");
  c.target.parameters() = read_vector(in, "target");
  const auto expected = static_cast<Eigen::Index>(arch.parameter_count());
  if (c.online.parameters().size() != expected || c.target.parameters().size() != expected) {
    throw std::runtime_error("checkpoint parameter count does not match architecture");
  }
  std::string tag;
  if (!(in >> tag >> c.adam.lr >> c.adam.beta1 >> c.adam.beta2 >> c.adam.eps >> c.adam.step) ||
      tag != "adam") {
    throw std::runtime_error("checkpoint: expected adam");
  }
  c.adam.m = read_vector(in, "adam_m");
  c.adam.v = read_vector(in, "adam_v");
  std::size_t n = 0;
  if (!(in >> tag >> n) || tag != "extras") throw std::runtime_error("checkpoint: expected extras");
  std::string line;
  std::getline(in, line);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw std::runtime_error("checkpoint: short extras");
    const auto sp = line.find(' ');
    c.extras[line.substr(0, sp)] = sp == std::string::npos ? "" : line.substr(sp + 1);
  }
  return c;
}

}  // namespace texopt
