#include "gpi/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gpi/dml.hpp"
#include "gpi/error.hpp"
#include "gpi/rng.hpp"

namespace gpi {

namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) fail(ErrorKind::Shape, "length mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
}

/// max over rows of `from` of the distance to the nearest row of `to`.
double directed_hausdorff(const Matrix& from, const Matrix& to) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < from.rows(); ++i) {
    double nearest = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < to.rows(); ++j) {
      const double d = (from.row(i) - to.row(j)).squaredNorm();
      if (d < nearest) {
        nearest = d;
        if (nearest <= worst) break;  // cannot raise the running maximum
      }
    }
    worst = std::max(worst, nearest);
  }
  return std::sqrt(worst);
}

Matrix take_arm(const Matrix& q, std::span<const int> t, int arm, std::size_t cap, std::uint64_t seed) {
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] == arm) rows.push_back(static_cast<Eigen::Index>(i));
  }
  if (rows.size() > cap) {
    Rng rng(derive_seed(seed, "ioss-subsample", static_cast<std::uint64_t>(arm)));
    rng.shuffle(std::span<Eigen::Index>(rows));
    rows.resize(cap);
    std::sort(rows.begin(), rows.end());
  }
  Matrix out(static_cast<Eigen::Index>(rows.size()), q.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = q.row(rows[i]);
  return out;
}

}  // namespace

PropensitySummary propensity_summary(std::span<const double> pscores, std::span<const int> t, std::size_t bins) {
  check_lengths(pscores.size(), t.size());
  if (bins == 0) fail(ErrorKind::Validation, "histogram needs at least one bin");
  PropensitySummary s;
  s.bins = bins;
  s.histogram[0].assign(bins, 0);
  s.histogram[1].assign(bins, 0);
  std::size_t extreme = 0;
  for (std::size_t i = 0; i < pscores.size(); ++i) {
    const double p = pscores[i];
    if (!(p >= 0.0 && p <= 1.0)) fail(ErrorKind::Domain, "propensity score " + format_double(p) + " outside [0,1]");
    if (t[i] != 0 && t[i] != 1) fail(ErrorKind::Validation, "treatment must be binary");
    auto bin = static_cast<std::size_t>(p * static_cast<double>(bins));
    bin = std::min(bin, bins - 1);
    ++s.histogram[static_cast<std::size_t>(t[i])][bin];
    ++s.n_per_arm[static_cast<std::size_t>(t[i])];
    if (p < 0.01 || p > 0.99) ++extreme;
  }
  if (s.n_per_arm[0] == 0 || s.n_per_arm[1] == 0) {
    fail(ErrorKind::DegenerateData, "propensity summary needs both treatment arms");
  }
  s.extreme_fraction = static_cast<double>(extreme) / static_cast<double>(pscores.size());
  return s;
}

double arm_fraction_below(std::span<const double> pscores, std::span<const int> t, int arm, double threshold) {
  check_lengths(pscores.size(), t.size());
  std::size_t total = 0, below = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] != arm) continue;
    ++total;
    if (pscores[i] < threshold) ++below;
  }
  if (total == 0) fail(ErrorKind::DegenerateData, "arm has no units");
  return static_cast<double>(below) / static_cast<double>(total);
}

Matrix min_max_standardize(const Matrix& q) {
  if (q.rows() < 2) fail(ErrorKind::InsufficientData, "standardization needs at least two rows");
  Matrix out(q.rows(), q.cols());
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    const double lo = q.col(j).minCoeff();
    const double hi = q.col(j).maxCoeff();
    if (hi > lo) {
      out.col(j) = (q.col(j).array() - lo) / (hi - lo);
    } else {
      out.col(j).setConstant(0.5);
    }
  }
  return out;
}

double hausdorff_distance(const Matrix& a, const Matrix& b) {
  if (a.rows() == 0 || b.rows() == 0) fail(ErrorKind::DegenerateData, "Hausdorff distance of an empty set");
  if (a.cols() != b.cols()) fail(ErrorKind::Shape, "point sets have different dimensions");
  return std::max(directed_hausdorff(a, b), directed_hausdorff(b, a));
}

double ioss(const Matrix& q, std::span<const int> t, const IossOptions& options) {
  check_lengths(static_cast<std::size_t>(q.rows()), t.size());
  std::size_t treated = 0;
  for (int v : t) treated += static_cast<std::size_t>(v == 1);
  if (treated == 0 || treated == t.size()) fail(ErrorKind::DegenerateData, "IOSS needs both treatment arms");
  const Matrix z = min_max_standardize(q);
  const Matrix a = take_arm(z, t, 1, options.max_rows_per_arm, options.seed);
  const Matrix b = take_arm(z, t, 0, options.max_rows_per_arm, options.seed);
  const double value = hausdorff_distance(a, b) / std::sqrt(static_cast<double>(q.cols()));
  return std::clamp(value, 0.0, 1.0);
}

DiagnosticsReport diagnose(const CrossFitResult& fit, const FoldPlan& plan, std::span<const int> t,
                           std::size_t bins, const IossOptions& options) {
  check_lengths(plan.size(), t.size());
  const auto& pi = fit.values.pi;
  const std::vector<double> p(pi.data(), pi.data() + pi.size());
  DiagnosticsReport r;
  r.pscores = propensity_summary(p, t, bins);
  r.control_fraction_below_005 = arm_fraction_below(p, t, 0, 0.05);

  double sum = 0.0;
  for (std::size_t k = 0; k < fit.fold_q.size(); ++k) {
    const auto rows = plan.fold_rows(k);
    std::vector<int> fold_t;
    fold_t.reserve(rows.size());
    for (std::size_t i : rows) fold_t.push_back(t[i]);
    IossOptions fold_options = options;
    fold_options.seed = derive_seed(options.seed, "ioss-fold", k);
    const double v = ioss(fit.fold_q[k], fold_t, fold_options);
    r.fold_ioss.push_back(v);
    sum += v;
  }
  if (!r.fold_ioss.empty()) r.ioss = sum / static_cast<double>(r.fold_ioss.size());

  if (r.pscores.extreme_fraction > 0.05) {
    r.notes.push_back(format_double(100.0 * r.pscores.extreme_fraction) +
                      "% of propensity scores lie outside [0.01, 0.99]; the deconfounder may retain treatment "
                      "information, consider clip_eps or trimming");
  }
  if (r.control_fraction_below_005 > 0.5) {
    r.notes.push_back("most control units have propensity below 0.05; overlap is weak");
  }
  return r;
}

KvDocument diagnostics_report(const DiagnosticsReport& report) {
  KvDocument doc;
  doc.set("", "format", "gpi-diagnostics");
  doc.set("", "format_version", 1);
  doc.set("diagnostics", "ioss", report.ioss);
  for (std::size_t f = 0; f < report.fold_ioss.size(); ++f) {
    doc.set("diagnostics", "ioss_fold" + std::to_string(f + 1), report.fold_ioss[f]);
  }
  doc.set("diagnostics", "extreme_fraction", report.pscores.extreme_fraction);
  doc.set("diagnostics", "control_fraction_below_005", report.control_fraction_below_005);
  doc.set("diagnostics", "n_control", report.pscores.n_per_arm[0]);
  doc.set("diagnostics", "n_treated", report.pscores.n_per_arm[1]);
  doc.set("diagnostics", "bins", report.pscores.bins);
  for (std::size_t i = 0; i < report.notes.size(); ++i) {
    doc.set("notes", "note" + std::to_string(i + 1), report.notes[i]);
  }
  return doc;
}

std::string histogram_csv(const PropensitySummary& s) {
  std::string out = "bin_low,bin_high,control,treated\n";
  for (std::size_t b = 0; b < s.bins; ++b) {
    out += format_double(static_cast<double>(b) / static_cast<double>(s.bins));
    out += ',';
    out += format_double(static_cast<double>(b + 1) / static_cast<double>(s.bins));
    out += ',';
    out += std::to_string(s.histogram[0][b]);
    out += ',';
    out += std::to_string(s.histogram[1][b]);
    out += '\n';
  }
  return out;
}

}  // namespace gpi
