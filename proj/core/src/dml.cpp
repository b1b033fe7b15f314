#include "gpi/dml.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "gpi/error.hpp"
#include "gpi/rng.hpp"

namespace gpi {

std::vector<std::size_t> FoldPlan::fold_rows(std::size_t k) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] == k) rows.push_back(i);
  }
  return rows;
}

FoldPlan make_folds(std::size_t n, std::size_t k, double inner_split_fraction, std::uint64_t seed) {
  if (k < 2) fail(ErrorKind::Validation, "cross-fitting needs K >= 2 folds");
  if (!(inner_split_fraction > 0.0 && inner_split_fraction < 1.0)) {
    fail(ErrorKind::Validation, "inner_split_fraction must lie in (0,1)");
  }
  if (n < 2 * k) {
    fail(ErrorKind::InsufficientData,
         "need n >= 2K rows (n=" + std::to_string(n) + ", K=" + std::to_string(k) + ")");
  }
  FoldPlan plan;
  plan.k_folds = k;
  plan.inner_split_fraction = inner_split_fraction;
  plan.seed = seed;
  plan.assignment.resize(n);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "folds"));
  rng.shuffle(std::span<std::size_t>(perm));
  for (std::size_t j = 0; j < n; ++j) plan.assignment[perm[j]] = j % k;

  plan.outcome_rows.resize(k);
  plan.propensity_rows.resize(k);
  for (std::size_t fold = 0; fold < k; ++fold) {
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < n; ++i) {
      if (plan.assignment[i] != fold) train.push_back(i);
    }
    Rng inner(derive_seed(seed, "inner-split", fold));
    inner.shuffle(std::span<std::size_t>(train));
    auto n1 = static_cast<std::size_t>(std::llround(inner_split_fraction * static_cast<double>(train.size())));
    n1 = std::clamp<std::size_t>(n1, 1, train.size() - 1);
    plan.outcome_rows[fold].assign(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(n1));
    plan.propensity_rows[fold].assign(train.begin() + static_cast<std::ptrdiff_t>(n1), train.end());
    std::sort(plan.outcome_rows[fold].begin(), plan.outcome_rows[fold].end());
    std::sort(plan.propensity_rows[fold].begin(), plan.propensity_rows[fold].end());
  }
  return plan;
}

namespace {

void check_pi(double pi) {
  if (!(pi > 0.0 && pi < 1.0)) {
    fail(ErrorKind::Domain, "propensity " + format_double(pi) +
                                " is outside (0,1); overlap is violated (set clip_eps to clip)");
  }
}

void finish_interval(EstimateResult& r) {
  const double n = static_cast<double>(r.n_used);
  r.std_error = std::sqrt(r.variance / n);
  const double z = normal_critical_value(r.confidence);
  r.ci_low = r.estimate - z * r.std_error;
  r.ci_high = r.estimate + z * r.std_error;
}

}  // namespace

double aipw_uncentered(double y, int t, double mu0, double mu1, double pi) {
  check_pi(pi);
  return static_cast<double>(t) * (y - mu1) / pi - static_cast<double>(1 - t) * (y - mu0) / (1.0 - pi) + mu1 - mu0;
}

double aipw_score(double y, int t, double mu0, double mu1, double pi, double tau) {
  return aipw_uncentered(y, t, mu0, mu1, pi) - tau;
}

LateComponents late_score_components(double y, int t, std::optional<int> t_tilde, double mu0, double mu1,
                                     double m0, double m1, double pi) {
  if (!t_tilde) fail(ErrorKind::Validation, "LATE scores require t_tilde");
  LateComponents c;
  c.numerator = aipw_uncentered(y, t, mu0, mu1, pi);
  c.denominator = aipw_uncentered(static_cast<double>(*t_tilde), t, m0, m1, pi);
  return c;
}

std::string_view to_string(Estimand e) noexcept {
  switch (e) {
    case Estimand::ATE: return "ATE";
    case Estimand::LATE: return "LATE";
    case Estimand::DiffInMeans: return "DIFF_IN_MEANS";
  }
  return "?";
}

double normal_critical_value(double confidence) {
  if (!(confidence > 0.0 && confidence < 1.0)) fail(ErrorKind::Validation, "confidence must lie in (0,1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 + 0.5 * confidence);
}

EstimateResult score_ate(std::span<const double> y, std::span<const int> t, const NuisanceValues& nu,
                         double confidence) {
  const auto n = y.size();
  if (n == 0) fail(ErrorKind::DegenerateData, "no rows to score");
  if (t.size() != n || static_cast<std::size_t>(nu.mu0.size()) != n || static_cast<std::size_t>(nu.mu1.size()) != n ||
      static_cast<std::size_t>(nu.pi.size()) != n) {
    fail(ErrorKind::Shape, "score inputs have inconsistent lengths");
  }
  EstimateResult r;
  r.estimand = Estimand::ATE;
  r.confidence = confidence;
  r.n_used = n;
  Vector u(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    u[k] = aipw_uncentered(y[i], t[i], nu.mu0[k], nu.mu1[k], nu.pi[k]);
  }
  r.estimate = u.mean();
  r.scores = u.array() - r.estimate;
  r.variance = r.scores.squaredNorm() / static_cast<double>(n);
  finish_interval(r);
  return r;
}

EstimateResult score_late(std::span<const double> y, std::span<const int> t, std::span<const int> t_tilde,
                          const NuisanceValues& nu, double confidence) {
  const auto n = y.size();
  if (n == 0) fail(ErrorKind::DegenerateData, "no rows to score");
  if (t_tilde.size() != n) fail(ErrorKind::Validation, "LATE scoring requires t_tilde on every row");
  if (t.size() != n || static_cast<std::size_t>(nu.mu0.size()) != n || static_cast<std::size_t>(nu.mu1.size()) != n ||
      static_cast<std::size_t>(nu.pi.size()) != n || static_cast<std::size_t>(nu.m0.size()) != n ||
      static_cast<std::size_t>(nu.m1.size()) != n) {
    fail(ErrorKind::Shape, "score inputs have inconsistent lengths");
  }
  EstimateResult r;
  r.estimand = Estimand::LATE;
  r.confidence = confidence;
  r.n_used = n;
  r.numerator_scores.resize(static_cast<Eigen::Index>(n));
  r.denominator_scores.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const auto c = late_score_components(y[i], t[i], t_tilde[i], nu.mu0[k], nu.mu1[k], nu.m0[k], nu.m1[k], nu.pi[k]);
    r.numerator_scores[k] = c.numerator;
    r.denominator_scores[k] = c.denominator;
  }
  const double mean_den = r.denominator_scores.mean();
  if (!(std::abs(mean_den) >= 1e-6)) {
    fail(ErrorKind::WeakInstrument,
         "mean first-stage score " + format_double(mean_den) + " is below 1e-6 in magnitude");
  }
  r.estimate = r.numerator_scores.mean() / mean_den;
  r.scores = r.numerator_scores - r.estimate * r.denominator_scores;
  r.variance = (r.scores.squaredNorm() / static_cast<double>(n)) / (mean_den * mean_den);
  finish_interval(r);
  return r;
}

namespace {

CrossFitResult cross_fit(const Dataset& data, const FoldPlan& plan, const NetworkConfig& net_config,
                         const PropensityConfig& prop_config, const CrossFitOptions& options, bool late) {
  if (plan.size() != data.size()) {
    fail(ErrorKind::Shape, "fold plan covers " + std::to_string(plan.size()) + " rows, dataset has " +
                               std::to_string(data.size()));
  }
  if (late && !data.has_perceived()) {
    fail(ErrorKind::Validation, "LATE estimation requires t_tilde on every observation");
  }
  prop_config.validate();
  const auto n = static_cast<Eigen::Index>(data.size());
  CrossFitResult out;
  out.fold_seed = plan.seed;
  out.values.mu0 = Vector::Zero(n);
  out.values.mu1 = Vector::Zero(n);
  out.values.pi = Vector::Zero(n);
  if (late) {
    out.values.m0 = Vector::Zero(n);
    out.values.m1 = Vector::Zero(n);
  }

  for (std::size_t k = 0; k < plan.k_folds; ++k) {
    const std::string context = "fold " + std::to_string(k + 1);
    try {
      NetworkConfig cfg = net_config;
      if (cfg.d_r == 0) cfg.d_r = data.d_r();
      cfg.iv_mode = late;
      cfg.seed = derive_seed(net_config.seed, "fold-network", k);
      const auto& outcome_rows = plan.outcome_rows.at(k);
      const auto& prop_rows = plan.propensity_rows.at(k);
      const auto fold_rows = plan.fold_rows(k);

      TarNetModel network = train(data, outcome_rows, cfg);

      Matrix r2(static_cast<Eigen::Index>(prop_rows.size()), data.d_r());
      std::vector<int> t2(prop_rows.size());
      for (std::size_t i = 0; i < prop_rows.size(); ++i) {
        r2.row(static_cast<Eigen::Index>(i)) = data.representations().row(static_cast<Eigen::Index>(prop_rows[i]));
        t2[i] = data.t()[prop_rows[i]];
      }
      PropensityConfig pc = prop_config;
      pc.seed = derive_seed(prop_config.seed, "fold-propensity", k);
      PropensityModel propensity = fit_propensity(predict(network, r2).q, t2, pc);

      Matrix rk(static_cast<Eigen::Index>(fold_rows.size()), data.d_r());
      for (std::size_t i = 0; i < fold_rows.size(); ++i) {
        rk.row(static_cast<Eigen::Index>(i)) = data.representations().row(static_cast<Eigen::Index>(fold_rows[i]));
      }
      const BatchPrediction pred = predict(network, rk);
      const Vector pi = predict_propensity(propensity, pred.q);
      for (std::size_t i = 0; i < fold_rows.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(fold_rows[i]);
        const auto j = static_cast<Eigen::Index>(i);
        check_pi(pi[j]);
        out.values.mu0[row] = pred.mu0[j];
        out.values.mu1[row] = pred.mu1[j];
        out.values.pi[row] = pi[j];
        if (late) {
          out.values.m0[row] = pred.m0[j];
          out.values.m1[row] = pred.m1[j];
        }
      }
      out.fold_q.push_back(pred.q);

      FoldNuisance fn{k, std::move(network), std::move(propensity), {}, 0, 0, 0.0, {}};
      for (auto r : outcome_rows) fn.training_ids.push_back(data.ids()[r]);
      for (auto r : prop_rows) fn.training_ids.push_back(data.ids()[r]);
      const auto& log = fn.network.train_log();
      fn.best_epoch = log.best_epoch;
      fn.epochs_run = log.epochs.size();
      fn.best_val_loss = log.best_epoch > 0 ? log.epochs[log.best_epoch - 1].val_loss : 0.0;
      fn.warnings = log.warnings;
      out.nuisances.push_back(std::move(fn));
    } catch (const Error& e) {
      rethrow_with_context(e, context);
    }
  }

  const std::vector<double> y(data.y().data(), data.y().data() + n);
  out.result = late ? score_late(y, data.t(), data.t_tilde(), out.values, options.confidence)
                    : score_ate(y, data.t(), out.values, options.confidence);
  return out;
}

}  // namespace

CrossFitResult estimate_ate(const Dataset& data, const FoldPlan& plan, const NetworkConfig& net_config,
                            const PropensityConfig& prop_config, const CrossFitOptions& options) {
  return cross_fit(data, plan, net_config, prop_config, options, false);
}

CrossFitResult estimate_late(const Dataset& data, const FoldPlan& plan, const NetworkConfig& net_config,
                             const PropensityConfig& prop_config, const CrossFitOptions& options) {
  return cross_fit(data, plan, net_config, prop_config, options, true);
}

EstimateResult difference_in_means(std::span<const double> y, std::span<const int> t, double confidence) {
  if (y.size() != t.size()) fail(ErrorKind::Shape, "y and t lengths differ");
  double sum[2] = {0.0, 0.0};
  std::size_t cnt[2] = {0, 0};
  for (std::size_t i = 0; i < y.size(); ++i) {
    sum[t[i]] += y[i];
    ++cnt[t[i]];
  }
  if (cnt[0] == 0 || cnt[1] == 0) fail(ErrorKind::DegenerateData, "difference-in-means needs both arms");
  const double mean[2] = {sum[0] / static_cast<double>(cnt[0]), sum[1] / static_cast<double>(cnt[1])};
  double ss[2] = {0.0, 0.0};
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - mean[t[i]];
    ss[t[i]] += d * d;
  }
  auto var_of_mean = [&](int a) {
    return cnt[a] > 1 ? ss[a] / static_cast<double>(cnt[a] - 1) / static_cast<double>(cnt[a]) : 0.0;
  };
  EstimateResult r;
  r.estimand = Estimand::DiffInMeans;
  r.confidence = confidence;
  r.n_used = y.size();
  r.estimate = mean[1] - mean[0];
  r.variance = static_cast<double>(r.n_used) * (var_of_mean(0) + var_of_mean(1));
  finish_interval(r);
  return r;
}

EstimateResult difference_in_means(const Dataset& data, double confidence) {
  const std::vector<double> y(data.y().data(), data.y().data() + data.y().size());
  return difference_in_means(y, data.t(), confidence);
}

KvDocument estimate_report(const EstimateResult& r) {
  KvDocument doc;
  doc.set("", "format", "gpi-estimate");
  doc.set("", "format_version", 1);
  doc.set("estimate", "estimand", std::string(to_string(r.estimand)));
  doc.set("estimate", "estimate", r.estimate);
  doc.set("estimate", "std_error", r.std_error);
  doc.set("estimate", "variance", r.variance);
  doc.set("estimate", "confidence", r.confidence);
  doc.set("estimate", "ci_low", r.ci_low);
  doc.set("estimate", "ci_high", r.ci_high);
  doc.set("estimate", "n_used", r.n_used);
  return doc;
}

KvDocument estimate_report(const CrossFitResult& fit) {
  KvDocument doc = estimate_report(fit.result);
  doc.set("folds", "k_folds", fit.nuisances.size());
  doc.set("folds", "fold_plan_seed", static_cast<unsigned long long>(fit.fold_seed));
  for (const auto& fn : fit.nuisances) {
    const std::string section = "fold" + std::to_string(fn.fold + 1);
    doc.set(section, "training_rows", fn.training_ids.size());
    doc.set(section, "epochs_run", fn.epochs_run);
    doc.set(section, "best_epoch", fn.best_epoch);
    doc.set(section, "best_val_loss", fn.best_val_loss);
    doc.set(section, "propensity_kind", std::string(to_string(fn.propensity.kind())));
    doc.set(section, "warnings", fn.warnings.size());
  }
  return doc;
}

}  // namespace gpi
