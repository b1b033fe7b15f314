#pragma once

#include <cstdint>
#include <memory>
#include <string_view>
#include <vector>

#include "gpi/data_model.hpp"

namespace gpi {

enum class PropensityKind { LogisticL2, TreeEnsemble };

std::string_view to_string(PropensityKind kind) noexcept;
PropensityKind parse_propensity_kind(std::string_view text);

struct PropensityConfig {
  PropensityKind kind = PropensityKind::LogisticL2;
  /// Ridge strength for logistic_l2 (penalty regularization/2 * ||w||^2 on
  /// the slopes, intercept unpenalized).
  double regularization = 1.0;
  /// Predictions are clipped to [clip_eps, 1 - clip_eps] when clip_eps > 0.
  double clip_eps = 0.0;
  std::size_t trees = 200;
  std::size_t max_depth = 8;
  std::size_t min_leaf = 1;
  std::size_t max_newton_iterations = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Fitted ridge-logistic coefficients.
struct LogisticFit {
  double intercept = 0.0;
  Vector slopes;
  std::size_t iterations = 0;
  double gradient_norm = 0.0;
};

/// Flat-array CART tree; leaves hold Laplace-smoothed treated fractions so
/// ensemble predictions stay strictly inside (0,1).
struct ClassificationTree {
  struct Node {
    int feature = -1;       // -1 for leaves
    double threshold = 0.0; // go left when x[feature] <= threshold
    int left = -1;
    int right = -1;
    double value = 0.5;     // leaf probability
  };
  std::vector<Node> nodes;

  double predict(const double* row) const;
};

class PropensityModel {
 public:
  PropensityKind kind() const noexcept { return kind_; }
  double clip_eps() const noexcept { return clip_eps_; }
  Eigen::Index input_width() const noexcept { return width_; }
  const LogisticFit& logistic() const noexcept { return logistic_; }
  const std::vector<ClassificationTree>& trees() const noexcept { return trees_; }

  /// Unclipped probabilities in (0,1).
  Vector predict_raw(const Matrix& q) const;

  friend PropensityModel fit_propensity(const Matrix& q, std::span<const int> t, const PropensityConfig& config);

 private:
  PropensityKind kind_ = PropensityKind::LogisticL2;
  double clip_eps_ = 0.0;
  Eigen::Index width_ = 0;
  LogisticFit logistic_;
  std::vector<ClassificationTree> trees_;
};

/// Fits P(T = 1 | q). Throws DegenerateData for single-arm input and
/// ConvergenceError (carrying the final gradient norm) when the Newton solver
/// fails to reach gradient norm 1e-8 within the iteration cap.
PropensityModel fit_propensity(const Matrix& q, std::span<const int> t, const PropensityConfig& config);

/// Probabilities, clipped to [clip_eps, 1 - clip_eps] when clip_eps > 0.
Vector predict_propensity(const PropensityModel& model, const Matrix& q);

}  // namespace gpi
