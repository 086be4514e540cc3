#pragma once

// Dueling MLP (linear -> layer norm -> ReLU blocks) with hand-written
// backward passes and an ADAM optimizer. All parameters live in one flat
// vector; columns of input matrices are samples.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace texopt {

struct TrainingFailure : std::runtime_error {
  TrainingFailure(const std::string& what, Eigen::VectorXd snapshot)
      : std::runtime_error(what), parameters(std::move(snapshot)) {}
  Eigen::VectorXd parameters;
};

namespace nn {

inline constexpr double kLayerNormEps = 1e-8;

// Building blocks, exposed for gradient checks.
Eigen::MatrixXd linear_forward(const Eigen::MatrixXd& w, const Eigen::VectorXd& b,
                               const Eigen::MatrixXd& x);
/// Returns dX; accumulates dW, db.
Eigen::MatrixXd linear_backward(const Eigen::MatrixXd& w, const Eigen::MatrixXd& x,
                                const Eigen::MatrixXd& dy, Eigen::MatrixXd& dw,
                                Eigen::VectorXd& db);

struct LayerNormCache {
  Eigen::MatrixXd xhat;
  Eigen::RowVectorXd inv_std;
};
/// Normalizes each column to zero mean, unit variance, then gain and offset.
Eigen::MatrixXd layer_norm_forward(const Eigen::MatrixXd& z, const Eigen::VectorXd& gain,
                                   const Eigen::VectorXd& offset, LayerNormCache& cache);
Eigen::MatrixXd layer_norm_backward(const LayerNormCache& cache, const Eigen::VectorXd& gain,
                                    const Eigen::MatrixXd& dy, Eigen::VectorXd& dgain,
                                    Eigen::VectorXd& doffset);

Eigen::MatrixXd relu_forward(const Eigen::MatrixXd& x);
Eigen::MatrixXd relu_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy);

/// Q = V + A - mean_a A, per column.
Eigen::MatrixXd dueling_forward(const Eigen::RowVectorXd& v, const Eigen::MatrixXd& a);
void dueling_backward(const Eigen::MatrixXd& dq, Eigen::RowVectorXd& dv, Eigen::MatrixXd& da);

enum class LossKind { Huber, Mse };
double loss_value(double td, LossKind kind);
/// d loss / d td.
double loss_slope(double td, LossKind kind);

}  // namespace nn

struct Architecture {
  int inputs = 44;
  std::vector<int> hidden = {128, 64, 32};
  int actions = 201;

  [[nodiscard]] std::size_t parameter_count() const;
  bool operator==(const Architecture&) const = default;
};

struct ForwardResult {
  Eigen::MatrixXd q;      // actions x batch
  Eigen::RowVectorXd v;   // value stream
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> abs_td;
  Eigen::VectorXd gradient;
};

class QNetwork {
 public:
  QNetwork() = default;
  /// He-uniform hidden weights, zero value and advantage heads, zero biases
  /// and offsets, unit gains.
  QNetwork(Architecture arch, std::uint64_t seed);
  static QNetwork zeros(Architecture arch);

  [[nodiscard]] const Architecture& architecture() const { return arch_; }
  [[nodiscard]] const Eigen::VectorXd& parameters() const { return params_; }
  Eigen::VectorXd& parameters() { return params_; }

  /// Throws std::invalid_argument when inputs.rows() != architecture inputs.
  [[nodiscard]] ForwardResult forward(const Eigen::MatrixXd& inputs) const;

  /// Mean over the batch of weight_i * loss(Y_i - Q(s_i, a_i)) and its gradient.
  [[nodiscard]] LossResult loss_and_gradient(const Eigen::MatrixXd& inputs,
                                             const std::vector<int>& actions,
                                             const std::vector<double>& targets,
                                             const std::vector<double>& weights,
                                             nn::LossKind kind = nn::LossKind::Huber) const;

  /// Copies parameters bitwise; throws std::invalid_argument on architecture mismatch.
  void copy_from(const QNetwork& other);

 private:
  struct Views;
  Architecture arch_;
  Eigen::VectorXd params_;
};

/// Stacks feature vectors (state, then goal if non-empty) as one column.
Eigen::VectorXd network_input(const std::vector<double>& state, const std::vector<double>& goal);

struct Adam {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t step = 0;

  void apply(Eigen::VectorXd& params, const Eigen::VectorXd& grad);
};

/// One optimizer step; returns (loss, |td|). Throws TrainingFailure on a
/// non-finite loss or parameters.
LossResult train_batch(QNetwork& net, Adam& adam, const Eigen::MatrixXd& inputs,
                       const std::vector<int>& actions, const std::vector<double>& targets,
                       const std::vector<double>& weights, nn::LossKind kind = nn::LossKind::Huber);

void sync_target(const QNetwork& online, QNetwork& target);

/// Versioned text container; doubles in 17 significant digits.
struct Checkpoint {
  QNetwork online;
  QNetwork target;
  Adam adam;
  std::map<std::string, std::string> extras;  // e.g. serialized RNG states

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace texopt
