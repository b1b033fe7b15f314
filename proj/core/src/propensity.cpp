#include "gpi/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gpi/error.hpp"
#include "gpi/rng.hpp"

namespace gpi {

namespace {

constexpr double kGradientTolerance = 1e-8;

double log1pexp(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Penalized negative log-likelihood in "sum over rows" form.
double objective(const Matrix& x, const Vector& y, const Vector& beta, double reg) {
  const Vector eta = x * beta;
  double f = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) f += log1pexp(eta[i]) - y[i] * eta[i];
  return f + 0.5 * reg * beta.tail(beta.size() - 1).squaredNorm();
}

LogisticFit fit_logistic(const Matrix& q, std::span<const int> t, const PropensityConfig& config) {
  const auto n = q.rows();
  const auto d = q.cols();
  Matrix x(n, d + 1);
  x.col(0).setOnes();
  x.rightCols(d) = q;
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = t[static_cast<std::size_t>(i)];

  Vector beta = Vector::Zero(d + 1);
  const double frac = y.mean();
  beta[0] = std::log(frac / (1.0 - frac));
  Vector penalty = Vector::Constant(d + 1, config.regularization);
  penalty[0] = 0.0;

  double f = objective(x, y, beta, config.regularization);
  double gnorm = 0.0;
  for (std::size_t iter = 0; iter <= config.max_newton_iterations; ++iter) {
    const Vector eta = x * beta;
    Vector p(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p[i] = sigmoid(eta[i]);
      w[i] = p[i] * (1.0 - p[i]);
    }
    const Vector grad = x.transpose() * (p - y) + penalty.cwiseProduct(beta);
    gnorm = grad.norm();
    if (gnorm <= kGradientTolerance) {
      LogisticFit fit;
      fit.intercept = beta[0];
      fit.slopes = beta.tail(d);
      fit.iterations = iter;
      fit.gradient_norm = gnorm;
      return fit;
    }
    if (iter == config.max_newton_iterations) break;
    Matrix h = x.transpose() * w.asDiagonal() * x;
    h.diagonal() += penalty;
    // Tiny ridge on the intercept guards against an all-constant design.
    h(0, 0) += 1e-12;
    const Vector step = h.ldlt().solve(grad);
    // Near the optimum the objective changes below its rounding error, so
    // allow that much slack before backtracking.
    const double slack = 1e-13 * std::max(1.0, std::abs(f));
    double alpha = 1.0;
    double f_new = objective(x, y, beta - step, config.regularization);
    while (!(f_new <= f + slack) && alpha > 1e-10) {
      alpha *= 0.5;
      f_new = objective(x, y, beta - alpha * step, config.regularization);
    }
    if (!(f_new <= f + slack)) break;
    beta -= alpha * step;
    f = f_new;
  }
  throw ConvergenceError("logistic_l2 did not reach gradient norm 1e-8 (final norm " +
                             std::to_string(gnorm) + ")",
                         gnorm);
}

struct TreeBuilder {
  const Matrix& q;
  std::span<const int> t;
  const PropensityConfig& config;
  Rng& rng;
  std::size_t mtry;
  ClassificationTree tree;

  int build(std::vector<Eigen::Index>& idx, std::size_t depth) {
    std::size_t n1 = 0;
    for (auto i : idx) n1 += static_cast<std::size_t>(t[static_cast<std::size_t>(i)]);
    const std::size_t n = idx.size();
    const int node_id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    tree.nodes[static_cast<std::size_t>(node_id)].value =
        (static_cast<double>(n1) + 1.0) / (static_cast<double>(n) + 2.0);
    if (depth >= config.max_depth || n1 == 0 || n1 == n || n < 2 * config.min_leaf) return node_id;

    // Random feature subset without replacement.
    std::vector<Eigen::Index> features(static_cast<std::size_t>(q.cols()));
    std::iota(features.begin(), features.end(), Eigen::Index{0});
    rng.shuffle(std::span<Eigen::Index>(features));
    features.resize(mtry);

    double best_gain = 0.0;
    Eigen::Index best_feature = -1;
    double best_threshold = 0.0;
    const double parent_impurity = gini(n1, n);
    std::vector<std::pair<double, int>> col(n);
    for (auto f : features) {
      for (std::size_t k = 0; k < n; ++k) col[k] = {q(idx[k], f), t[static_cast<std::size_t>(idx[k])]};
      std::sort(col.begin(), col.end());
      std::size_t left1 = 0;
      for (std::size_t k = 0; k + 1 < n; ++k) {
        left1 += static_cast<std::size_t>(col[k].second);
        if (col[k].first == col[k + 1].first) continue;
        const std::size_t nl = k + 1;
        const std::size_t nr = n - nl;
        if (nl < config.min_leaf || nr < config.min_leaf) continue;
        const double child = (static_cast<double>(nl) * gini(left1, nl) +
                              static_cast<double>(nr) * gini(n1 - left1, nr)) /
                             static_cast<double>(n);
        const double gain = parent_impurity - child;
        if (gain > best_gain + 1e-15) {
          best_gain = gain;
          best_feature = f;
          best_threshold = 0.5 * (col[k].first + col[k + 1].first);
        }
      }
    }
    if (best_feature < 0) return node_id;

    std::vector<Eigen::Index> left, right;
    for (auto i : idx) (q(i, best_feature) <= best_threshold ? left : right).push_back(i);
    idx.clear();
    idx.shrink_to_fit();
    const int l = build(left, depth + 1);
    const int r = build(right, depth + 1);
    auto& node = tree.nodes[static_cast<std::size_t>(node_id)];
    node.feature = static_cast<int>(best_feature);
    node.threshold = best_threshold;
    node.left = l;
    node.right = r;
    return node_id;
  }

  static double gini(std::size_t n1, std::size_t n) {
    const double p = static_cast<double>(n1) / static_cast<double>(n);
    return 2.0 * p * (1.0 - p);
  }
};

}  // namespace

std::string_view to_string(PropensityKind kind) noexcept {
  return kind == PropensityKind::LogisticL2 ? "logistic_l2" : "tree_ensemble";
}

PropensityKind parse_propensity_kind(std::string_view text) {
  if (text == "logistic_l2") return PropensityKind::LogisticL2;
  if (text == "tree_ensemble") return PropensityKind::TreeEnsemble;
  fail(ErrorKind::Config, "unknown propensity kind '" + std::string(text) + "'");
}

void PropensityConfig::validate() const {
  if (!(regularization > 0.0) || !std::isfinite(regularization)) {
    fail(ErrorKind::Validation, "propensity regularization must be positive");
  }
  if (!(clip_eps >= 0.0 && clip_eps < 0.5)) fail(ErrorKind::Validation, "clip_eps must lie in [0, 0.5)");
  if (kind == PropensityKind::TreeEnsemble && (trees == 0 || max_depth == 0 || min_leaf == 0)) {
    fail(ErrorKind::Validation, "tree_ensemble needs trees, max_depth and min_leaf >= 1");
  }
}

double ClassificationTree::predict(const double* row) const {
  std::size_t k = 0;
  while (nodes[k].feature >= 0) {
    k = static_cast<std::size_t>(row[nodes[k].feature] <= nodes[k].threshold ? nodes[k].left : nodes[k].right);
  }
  return nodes[k].value;
}

PropensityModel fit_propensity(const Matrix& q, std::span<const int> t, const PropensityConfig& config) {
  config.validate();
  if (static_cast<std::size_t>(q.rows()) != t.size()) fail(ErrorKind::Shape, "q rows and t length differ");
  if (q.rows() == 0 || q.cols() == 0) fail(ErrorKind::Shape, "empty propensity design");
  if (!q.allFinite()) fail(ErrorKind::Validation, "propensity design has non-finite entries");
  std::size_t treated = 0;
  for (int v : t) {
    if (v != 0 && v != 1) fail(ErrorKind::Validation, "treatment must be binary");
    treated += static_cast<std::size_t>(v);
  }
  if (treated == 0 || treated == t.size()) {
    fail(ErrorKind::DegenerateData, "propensity fit needs both treatment arms");
  }

  PropensityModel model;
  model.kind_ = config.kind;
  model.clip_eps_ = config.clip_eps;
  model.width_ = q.cols();
  if (config.kind == PropensityKind::LogisticL2) {
    model.logistic_ = fit_logistic(q, t, config);
    return model;
  }

  const auto n = static_cast<std::size_t>(q.rows());
  const auto mtry = static_cast<std::size_t>(std::max<double>(1.0, std::floor(std::sqrt(static_cast<double>(q.cols())))));
  model.trees_.reserve(config.trees);
  for (std::size_t b = 0; b < config.trees; ++b) {
    Rng rng(derive_seed(config.seed, "tree-ensemble", b));
    std::vector<Eigen::Index> idx(n);
    for (auto& i : idx) i = static_cast<Eigen::Index>(rng.index(n));
    TreeBuilder builder{q, t, config, rng, mtry, {}};
    builder.build(idx, 0);
    model.trees_.push_back(std::move(builder.tree));
  }
  return model;
}

Vector PropensityModel::predict_raw(const Matrix& q) const {
  if (q.cols() != width_) {
    fail(ErrorKind::Shape, "propensity input has " + std::to_string(q.cols()) + " columns, model expects " +
                               std::to_string(width_));
  }
  Vector p(q.rows());
  if (kind_ == PropensityKind::LogisticL2) {
    const Vector eta = (q * logistic_.slopes).array() + logistic_.intercept;
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = sigmoid(eta[i]);
    return p;
  }
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const double* row = q.data() + i * q.cols();
    double s = 0.0;
    for (const auto& tree : trees_) s += tree.predict(row);
    p[i] = s / static_cast<double>(trees_.size());
  }
  return p;
}

Vector predict_propensity(const PropensityModel& model, const Matrix& q) {
  Vector p = model.predict_raw(q);
  const double eps = model.clip_eps();
  if (eps > 0.0) p = p.cwiseMax(eps).cwiseMin(1.0 - eps);
  return p;
}

}  // namespace gpi
