#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gpi/data_model.hpp"
#include "gpi/kv_report.hpp"
#include "gpi/propensity.hpp"
#include "gpi/tarnet.hpp"

namespace gpi {

/// K-fold partition plus, for each fold k, the split of the remaining rows
/// into I1 (deconfounder/outcome training) and I2 (propensity training).
/// Fold indices are zero-based.
struct FoldPlan {
  std::size_t k_folds = 2;
  double inner_split_fraction = 0.5;
  std::uint64_t seed = 0;
  std::vector<std::size_t> assignment;
  std::vector<std::vector<std::size_t>> outcome_rows;     // I1^(-k)
  std::vector<std::vector<std::size_t>> propensity_rows;  // I2^(-k)

  std::size_t size() const noexcept { return assignment.size(); }
  std::vector<std::size_t> fold_rows(std::size_t k) const;
};

FoldPlan make_folds(std::size_t n, std::size_t k, double inner_split_fraction, std::uint64_t seed);

/// Uncentered AIPW score: T(Y-mu1)/pi - (1-T)(Y-mu0)/(1-pi) + mu1 - mu0.
double aipw_uncentered(double y, int t, double mu0, double mu1, double pi);

/// Centered influence-function score psi = aipw_uncentered(...) - tau.
double aipw_score(double y, int t, double mu0, double mu1, double pi, double tau);

struct LateComponents {
  double numerator = 0.0;    // outcome AIPW score
  double denominator = 0.0;  // perceived-treatment AIPW score
};

LateComponents late_score_components(double y, int t, std::optional<int> t_tilde, double mu0, double mu1,
                                     double m0, double m1, double pi);

enum class Estimand { ATE, LATE, DiffInMeans };
std::string_view to_string(Estimand e) noexcept;

struct EstimateResult {
  Estimand estimand = Estimand::ATE;
  double estimate = 0.0;
  /// psi (ATE) or phi (LATE) evaluated at the estimate. Empty for
  /// difference-in-means.
  Vector scores;
  /// LATE only: per-row numerator and denominator components.
  Vector numerator_scores;
  Vector denominator_scores;
  double variance = 0.0;  // sigma^2; std_error = sqrt(variance / n_used)
  double std_error = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double confidence = 0.95;
  std::size_t n_used = 0;
};

/// Two-sided normal critical value for `confidence`.
double normal_critical_value(double confidence);

/// Per-row nuisance values used by the scoring step.
struct NuisanceValues {
  Vector mu0;
  Vector mu1;
  Vector pi;
  Vector m0;  // LATE only
  Vector m1;
};

/// Scores already-computed nuisances. This is the exact path used by
/// estimate_ate after cross-fitting, exposed so true nuisances can be
/// injected.
EstimateResult score_ate(std::span<const double> y, std::span<const int> t, const NuisanceValues& nuisances,
                         double confidence = 0.95);

EstimateResult score_late(std::span<const double> y, std::span<const int> t, std::span<const int> t_tilde,
                          const NuisanceValues& nuisances, double confidence = 0.95);

/// Nuisances fitted for one fold, trained only on rows outside that fold.
struct FoldNuisance {
  std::size_t fold = 0;
  TarNetModel network;
  PropensityModel propensity;
  std::vector<std::string> training_ids;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  double best_val_loss = 0.0;
  std::vector<std::string> warnings;
};

struct CrossFitOptions {
  double confidence = 0.95;
};

/// Everything produced by cross-fitting: the estimate, the per-fold
/// nuisances, and the out-of-fold quantities the diagnostics consume.
struct CrossFitResult {
  EstimateResult result;
  std::vector<FoldNuisance> nuisances;
  NuisanceValues values;  // out-of-fold predictions for every row
  /// Deconfounder outputs per fold (rows of fold k under fold k's network).
  std::vector<Matrix> fold_q;
  std::uint64_t fold_seed = 0;
};

CrossFitResult estimate_ate(const Dataset& data, const FoldPlan& plan, const NetworkConfig& net_config,
                            const PropensityConfig& prop_config, const CrossFitOptions& options = {});

CrossFitResult estimate_late(const Dataset& data, const FoldPlan& plan, const NetworkConfig& net_config,
                             const PropensityConfig& prop_config, const CrossFitOptions& options = {});

EstimateResult difference_in_means(std::span<const double> y, std::span<const int> t, double confidence = 0.95);
EstimateResult difference_in_means(const Dataset& data, double confidence = 0.95);

/// Versioned key-value report of an estimate (no per-row scores).
KvDocument estimate_report(const EstimateResult& result);
/// Adds per-fold nuisance summaries and the fold-plan seed.
KvDocument estimate_report(const CrossFitResult& fit);

}  // namespace gpi
