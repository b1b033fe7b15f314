#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gpi/data_model.hpp"
#include "gpi/rng.hpp"

namespace gpi {

/// Hyperparameters of the deconfounder network. The rectifier activation is
/// fixed. `d_q == 0` means "d_r / 2".
struct NetworkConfig {
  Eigen::Index d_r = 0;
  Eigen::Index d_q = 0;
  Eigen::Index head_hidden = 500;
  double dropout_rate = 0.15;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 500;
  std::size_t patience = 15;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
  bool iv_mode = false;

  /// Defaults for an input of width `d_r`: d_q = d_r / 2, two-layer heads of
  /// width 500, dropout 0.15, Adam at 1e-3, batch 32, 500 epochs, patience 15.
  static NetworkConfig defaults_for(Eigen::Index d_r);

  Eigen::Index resolved_d_q() const noexcept { return d_q > 0 ? d_q : std::max<Eigen::Index>(1, d_r / 2); }

  /// Throws ErrorKind::Validation on any violated invariant.
  void validate() const;

  bool operator==(const NetworkConfig&) const = default;
};

struct DenseLayer {
  Matrix w;               // out x in
  Eigen::RowVectorXd b;   // out
};

/// Two affine layers with a rectifier in between: in -> hidden -> 1.
struct Head {
  DenseLayer hidden;
  DenseLayer output;
};

/// All trainable tensors. Also used as the gradient container.
struct TarNetWeights {
  DenseLayer deconfounder;                     // lambda
  std::array<Head, 2> outcome;                 // theta_0, theta_1
  std::optional<std::array<Head, 2>> perceived;  // zeta_0, zeta_1 (IV mode only)

  /// Views over every tensor in a fixed order.
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;
  std::size_t parameter_count() const;
  TarNetWeights zeros_like() const;
  bool all_finite() const;
};

/// Fixed (non-trainable) affine maps fitted on the training slice: input
/// standardization folded into the deconfounder and outcome rescaling of the
/// outcome heads. Identity for a freshly initialized model.
struct Normalization {
  Eigen::RowVectorXd input_mean;
  Eigen::RowVectorXd input_scale;
  double outcome_shift = 0.0;
  double outcome_scale = 1.0;  // 0 when the training outcome is constant
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
  std::vector<std::string> warnings;
};

class TarNetModel {
 public:
  /// Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
  static TarNetModel initialize(const NetworkConfig& config);
  /// Every weight and bias zero.
  static TarNetModel zeros(const NetworkConfig& config);

  const NetworkConfig& config() const noexcept { return config_; }
  const TarNetWeights& weights() const noexcept { return weights_; }
  TarNetWeights& weights() noexcept { return weights_; }
  const Normalization& normalization() const noexcept { return norm_; }
  Normalization& normalization() noexcept { return norm_; }
  const TrainLog& train_log() const noexcept { return log_; }
  TrainLog& train_log() noexcept { return log_; }

  void save(const std::filesystem::path& path) const;
  static TarNetModel load(const std::filesystem::path& path);

  friend bool operator==(const TarNetModel& a, const TarNetModel& b);

 private:
  TarNetModel() = default;

  NetworkConfig config_;
  TarNetWeights weights_;
  Normalization norm_;
  TrainLog log_;
};

struct Prediction {
  Eigen::VectorXd q;
  double mu0 = 0.0;
  double mu1 = 0.0;
  std::optional<double> m0;
  std::optional<double> m1;
};

/// Evaluation-mode forward pass (no dropout). Pure.
Prediction forward(const TarNetModel& model, const Eigen::RowVectorXd& r);
/// Training-mode forward pass with dropout drawn from `dropout_rng`.
Prediction forward(const TarNetModel& model, const Eigen::RowVectorXd& r, Rng& dropout_rng);

/// Evaluation-mode predictions for every row of `r`.
struct BatchPrediction {
  Matrix q;
  Vector mu0;
  Vector mu1;
  Vector m0;  // empty unless IV mode
  Vector m1;
};
BatchPrediction predict(const TarNetModel& model, const Matrix& r);

/// Inverted-dropout masks (entries 0 or 1/(1-p)) for a batch of rows. The
/// hidden masks hold one row per batch row; each row is applied to the head of
/// that row's own arm.
struct DropoutMasks {
  Matrix q;
  Matrix outcome_hidden;
  Matrix perceived_hidden;  // empty unless IV mode
};
DropoutMasks draw_dropout_masks(const TarNetModel& model, std::size_t rows, Rng& rng);

/// Mean squared outcome residual, each row routed to its own arm's head.
double loss_ate(const TarNetModel& model, const Dataset& data, std::span<const std::size_t> rows);
double loss_ate(const TarNetModel& model, const Dataset& data, std::span<const std::size_t> rows,
                const DropoutMasks& masks);

/// loss_ate plus the mean squared perceived-treatment residual. Requires IV
/// mode and a dataset carrying t_tilde.
double loss_late(const TarNetModel& model, const Dataset& data, std::span<const std::size_t> rows);
double loss_late(const TarNetModel& model, const Dataset& data, std::span<const std::size_t> rows,
                 const DropoutMasks& masks);

struct Gradients {
  double loss = 0.0;
  TarNetWeights grad;
};

/// Exact gradient of the model's training loss (loss_late in IV mode,
/// loss_ate otherwise) on `rows`, with dropout masks held fixed when given.
Gradients gradients(const TarNetModel& model, const Dataset& data, std::span<const std::size_t> rows,
                    const DropoutMasks* masks = nullptr);

/// Mini-batch Adam on the training slice `rows` with early stopping on a
/// seeded, arm-stratified validation carve-out. Returns the weights snapshot
/// with the lowest validation loss.
TarNetModel train(const Dataset& data, std::span<const std::size_t> rows, const NetworkConfig& config);

}  // namespace gpi
