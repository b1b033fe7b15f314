#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gpi/data_model.hpp"
#include "gpi/dml.hpp"
#include "gpi/kv_report.hpp"
#include "gpi/propensity.hpp"
#include "gpi/tarnet.hpp"

namespace gpi {

/// Perceived-treatment block for instrumental-variable scenarios. The
/// outcome then depends on T only through the perceived treatment T~, and
/// the ATE target of T in Monte Carlo runs is the intent-to-treat effect.
struct IvBlock {
  double compliance_rate = 1.0;
  bool confounded_perception = false;

  bool operator==(const IvBlock&) const = default;
};

/// How Monte Carlo trials relate to each other.
///  - Conditional: latents and representations are drawn once per scenario
///    seed; each trial redraws only the outcome noise (and perceived-treatment
///    noise). The target is the sample ATE of the fixed units.
///  - Superpopulation: each trial draws a fresh sample of units through the
///    same representation map. The target is the population ATE.
enum class SimulationDesign { Conditional, Superpopulation };

std::string_view to_string(SimulationDesign design) noexcept;
SimulationDesign parse_simulation_design(std::string_view text);

enum class ConfoundingStrength { Weak, Moderate, Strong };

struct SimulationScenario {
  double alpha1 = 10.0;
  double alpha2 = 10.0;
  double alpha3 = 50.0;
  double alpha4 = 50.0;
  std::size_t n = 2000;
  std::size_t d_r = 64;
  double latent_corr = 0.5;
  bool separability = true;
  double noise_sd = 1.0;
  std::optional<IvBlock> iv;
  std::uint64_t seed = 0;
  SimulationDesign design = SimulationDesign::Conditional;

  void validate() const;
  bool operator==(const SimulationScenario&) const = default;
};

SimulationScenario make_preset(ConfoundingStrength strength, bool separable);

/// Parses names such as "weak-separable" or "strong-nonseparable".
SimulationScenario preset_from_name(std::string_view name);

/// Treatment and confounding latents for one sample of units.
struct Latents {
  std::vector<int> t;
  std::vector<int> h1;
  std::vector<double> h2;
};

Latents generate_latents(const SimulationScenario& scenario, std::uint64_t seed);
/// Uses the scenario's own seed.
Latents generate_latents(const SimulationScenario& scenario);

/// alpha1 + alpha2 * mean(h1).
double sample_tau(double alpha1, double alpha2, std::span<const int> h1);

struct SyntheticTruth {
  std::vector<int> t;
  std::vector<int> h1;
  std::vector<double> h2;
  double true_tau = 0.0;
  std::optional<double> true_beta;
  std::vector<int> t_tilde;    // empty without an iv block
  std::vector<int> compliers;  // 1 where T~(1,U)=1 and T~(0,U)=0
};

/// Fixed random map from (t, h1, h2, s) to representation space:
/// R = B * softplus(A * x + a) + sigma_r * eta.
class RepresentationMap {
 public:
  static constexpr std::size_t kNuisanceDim = 5;
  static constexpr std::size_t kInputDim = 3 + kNuisanceDim;
  static constexpr double kNoiseSd = 0.01;
  /// Input loading of the treatment latent. The treatment occupies a
  /// low-variance direction of R: linearly decodable, but a small share of
  /// the representation's variance.
  static constexpr double kTreatmentLoading = 0.03;
  static Eigen::Index treatment_units(std::size_t d_r) noexcept {
    return std::max<Eigen::Index>(2, static_cast<Eigen::Index>(d_r) / 16);
  }
  static constexpr double kProbeThreshold = 0.95;
  static constexpr std::size_t kProbeRows = 2000;
  static constexpr int kMaxAttempts = 10;

  /// Draws the map and checks that linear probes recover t, h1 and h2 from
  /// R; redraws with a new sub-seed on failure.
  static RepresentationMap build(std::size_t d_r, std::uint64_t seed);

  /// Draws A, a, B without the probe check.
  static RepresentationMap draw(std::size_t d_r, std::uint64_t seed);

  std::size_t d_r() const noexcept { return static_cast<std::size_t>(b_.rows()); }
  int attempts() const noexcept { return attempts_; }

  /// One row per unit; `s` is n x kNuisanceDim, `eta` is n x d_r (may be
  /// empty when sigma_r is 0).
  Matrix apply(std::span<const int> t, std::span<const int> h1, std::span<const double> h2, const Matrix& s,
               const Matrix& eta, double sigma_r = kNoiseSd) const;

  /// Draws s and eta from `seed` and applies the map.
  Matrix sample(std::span<const int> t, std::span<const int> h1, std::span<const double> h2,
                std::uint64_t seed) const;

 private:
  Matrix a_;                // hidden x kInputDim
  Eigen::RowVectorXd bias_; // hidden
  Matrix b_;                // d_r x hidden
  int attempts_ = 1;
};

struct ProbeScores {
  double t_accuracy = 0.0;
  double h1_accuracy = 0.0;
  double h2_r2 = 0.0;
};

/// Least-squares linear probes (with intercept) fitted and scored in-sample.
ProbeScores linear_probe(const Matrix& r, std::span<const int> t, std::span<const int> h1,
                         std::span<const double> h2);

Matrix generate_representations(std::span<const int> t, std::span<const int> h1, std::span<const double> h2,
                                std::size_t d_r, std::uint64_t seed);

Vector generate_outcome(std::span<const int> t, std::span<const int> h1, std::span<const double> h2,
                        const SimulationScenario& scenario, std::uint64_t seed);

/// Noise-free outcome model evaluated at treatment `arm`.
double outcome_mean(const SimulationScenario& scenario, int arm, int h1, double h2);

struct PerceivedDraw {
  std::vector<int> t_tilde;
  std::vector<int> compliers;
};

/// Probability that a unit with confounder h1 is a complier.
double compliance_probability(const IvBlock& iv, int h1);

PerceivedDraw generate_perceived(std::span<const int> t, std::span<const int> h1,
                                 const SimulationScenario& scenario, std::uint64_t seed);

/// Mean of alpha1 + alpha2*h1 over the recorded complier set.
double true_late(const SimulationScenario& scenario, const SyntheticTruth& truth);

/// alpha1 + alpha2 * P(h1 = 1).
double population_tau(const SimulationScenario& scenario);
/// alpha1 + alpha2 * P(h1 = 1 | complier).
double population_late(const SimulationScenario& scenario);

/// P(T = 1 | h1) implied by the latent mechanism (separable scenarios), or
/// the degenerate 0/1 values when T = h1.
double true_propensity(const SimulationScenario& scenario, int h1);

/// True nuisance functions evaluated at each unit.
NuisanceValues oracle_nuisances(const SimulationScenario& scenario, const SyntheticTruth& truth);

/// One simulated sample: ground truth and the observed dataset.
struct SimulatedSample {
  SyntheticTruth truth;
  Dataset data;
};

/// Generates the fixed units of the scenario (trial-independent part).
SimulatedSample generate_sample(const SimulationScenario& scenario, const RepresentationMap& map);
SimulatedSample generate_sample(const SimulationScenario& scenario);

enum class EstimatorKind { Gpi, DiffInMeans, Oracle };
std::string_view to_string(EstimatorKind kind) noexcept;
EstimatorKind parse_estimator_kind(std::string_view text);

struct EstimatorConfig {
  NetworkConfig network;
  PropensityConfig propensity;
  std::size_t k_folds = 2;
  double inner_split_fraction = 0.5;
  double confidence = 0.95;
  /// Estimate the LATE instead of the ATE (needs an iv block).
  bool late = false;
  /// Record propensity and IOSS diagnostics for GPI trials.
  bool diagnostics = false;
  std::uint64_t seed = 0;
};

struct TrialRecord {
  std::size_t trial = 0;
  EstimatorKind estimator = EstimatorKind::Gpi;
  bool ok = false;
  std::string error;
  double target = 0.0;
  double estimate = 0.0;
  double std_error = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  bool covered = false;
  double seconds = 0.0;
  std::optional<double> ioss;
  std::optional<double> control_fraction_below_005;
  std::optional<double> extreme_fraction;
};

struct EstimatorSummary {
  EstimatorKind estimator = EstimatorKind::Gpi;
  std::size_t trials_ok = 0;
  std::size_t failures = 0;
  double mean_estimate = 0.0;
  double mean_target = 0.0;
  double bias = 0.0;
  /// Standard error of mean(estimate - target) across trials.
  double bias_se = 0.0;
  double rmse = 0.0;
  double coverage = 0.0;
  double avg_ci_length = 0.0;
  double avg_runtime_seconds = 0.0;
  std::optional<double> mean_ioss;
  std::optional<double> mean_control_fraction_below_005;
  std::optional<double> mean_extreme_fraction;
};

struct MCReport {
  SimulationScenario scenario;
  std::size_t trials = 0;
  std::vector<TrialRecord> records;
  std::vector<EstimatorSummary> summaries;

  const EstimatorSummary& summary(EstimatorKind kind) const;
  /// Records of one estimator in trial order.
  std::vector<TrialRecord> records_for(EstimatorKind kind) const;
};

struct MonteCarloOptions {
  std::vector<EstimatorKind> estimators{EstimatorKind::Gpi, EstimatorKind::DiffInMeans};
  /// Called after each trial with the number of completed trials.
  std::function<void(std::size_t)> progress;
};

/// Runs every requested estimator on the same simulated data in each trial.
/// Trial t uses sub-seeds derived from (scenario seed, t), so the first m
/// trials of a longer run equal an m-trial run.
MCReport run_monte_carlo(const SimulationScenario& scenario, const EstimatorConfig& config, std::size_t trials,
                         const MonteCarloOptions& options = {});

/// Summaries recomputed from records (failures excluded).
EstimatorSummary summarize(EstimatorKind kind, std::span<const TrialRecord> records);

/// One CSV row per (trial, estimator). Runtime is not included so the file
/// is reproducible; see mc_timing_report.
std::string mc_records_csv(const MCReport& report);
KvDocument mc_summary_report(const MCReport& report);
KvDocument mc_timing_report(const MCReport& report);

KvDocument scenario_report(const SimulationScenario& scenario);

}  // namespace gpi
