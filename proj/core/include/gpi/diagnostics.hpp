#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gpi/data_model.hpp"
#include "gpi/kv_report.hpp"

namespace gpi {

struct CrossFitResult;
struct FoldPlan;

/// Per-arm histogram of estimated propensity scores over [0,1].
struct PropensitySummary {
  std::size_t bins = 50;
  std::array<std::vector<std::size_t>, 2> histogram;  // [arm][bin]
  std::array<std::size_t, 2> n_per_arm{0, 0};
  /// Share of the pooled scores outside [0.01, 0.99].
  double extreme_fraction = 0.0;
};

PropensitySummary propensity_summary(std::span<const double> pscores, std::span<const int> t,
                                     std::size_t bins = 50);

/// Share of arm `arm`'s scores strictly below `threshold`.
double arm_fraction_below(std::span<const double> pscores, std::span<const int> t, int arm, double threshold);

/// Column-wise (q - min) / (max - min). Constant columns map to 0.5.
Matrix min_max_standardize(const Matrix& q);

/// Symmetric Hausdorff distance between two finite point sets under the
/// Euclidean metric (rows are points).
double hausdorff_distance(const Matrix& a, const Matrix& b);

struct IossOptions {
  /// Rows per arm above which a seeded subsample is drawn.
  std::size_t max_rows_per_arm = 5000;
  std::uint64_t seed = 0;
};

/// Independence-of-support score: Hausdorff distance between the standardized
/// deconfounder rows of the treated and of the control arm, divided by
/// sqrt(d_Q) so the value lies in [0,1].
double ioss(const Matrix& q, std::span<const int> t, const IossOptions& options = {});

struct DiagnosticsReport {
  PropensitySummary pscores;
  /// Mean of the per-fold scores (deconfounders of different folds live in
  /// different coordinate systems, so IOSS is computed fold by fold).
  double ioss = 0.0;
  std::vector<double> fold_ioss;
  double control_fraction_below_005 = 0.0;
  std::vector<std::string> notes;
};

DiagnosticsReport diagnose(const CrossFitResult& fit, const FoldPlan& plan, std::span<const int> t, std::size_t bins = 50,
                           const IossOptions& options = {});

KvDocument diagnostics_report(const DiagnosticsReport& report);

/// `bin_low,bin_high,control,treated` rows for external plotting.
std::string histogram_csv(const PropensitySummary& summary);

}  // namespace gpi
