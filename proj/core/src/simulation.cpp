#include "gpi/simulation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>

#include "gpi/diagnostics.hpp"
#include "gpi/error.hpp"
#include "gpi/rng.hpp"

namespace gpi {

std::string_view to_string(SimulationDesign design) noexcept {
  return design == SimulationDesign::Conditional ? "conditional" : "superpopulation";
}

SimulationDesign parse_simulation_design(std::string_view text) {
  if (text == "conditional") return SimulationDesign::Conditional;
  if (text == "superpopulation") return SimulationDesign::Superpopulation;
  fail(ErrorKind::Config, "unknown simulation design '" + std::string(text) + "'");
}

void SimulationScenario::validate() const {
  if (n < 100) fail(ErrorKind::Validation, "scenario n must be at least 100");
  if (d_r < 8) fail(ErrorKind::Validation, "scenario d_R must be at least 8");
  if (!(latent_corr >= 0.0 && latent_corr < 1.0)) fail(ErrorKind::Validation, "latent_corr must lie in [0,1)");
  if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd)) fail(ErrorKind::Validation, "noise_sd must be >= 0");
  for (double a : {alpha1, alpha2, alpha3, alpha4}) {
    if (!std::isfinite(a)) fail(ErrorKind::Validation, "scenario coefficients must be finite");
  }
  if (iv && !(iv->compliance_rate > 0.0 && iv->compliance_rate <= 1.0)) {
    fail(ErrorKind::Validation, "compliance_rate must lie in (0,1]");
  }
}

SimulationScenario make_preset(ConfoundingStrength strength, bool separable) {
  SimulationScenario s;
  const double a = strength == ConfoundingStrength::Weak ? 50.0 : strength == ConfoundingStrength::Moderate ? 100.0 : 1000.0;
  s.alpha3 = a;
  s.alpha4 = a;
  s.separability = separable;
  return s;
}

SimulationScenario preset_from_name(std::string_view name) {
  const auto dash = name.find('-');
  if (dash == std::string_view::npos) fail(ErrorKind::Config, "preset must look like weak-separable");
  const auto strength = name.substr(0, dash);
  const auto kind = name.substr(dash + 1);
  ConfoundingStrength s{};
  if (strength == "weak") {
    s = ConfoundingStrength::Weak;
  } else if (strength == "moderate") {
    s = ConfoundingStrength::Moderate;
  } else if (strength == "strong") {
    s = ConfoundingStrength::Strong;
  } else {
    fail(ErrorKind::Config, "unknown confounding strength '" + std::string(strength) + "'");
  }
  if (kind != "separable" && kind != "nonseparable") {
    fail(ErrorKind::Config, "preset suffix must be separable or nonseparable");
  }
  return make_preset(s, kind == "separable");
}

Latents generate_latents(const SimulationScenario& scenario, std::uint64_t seed) {
  scenario.validate();
  Rng rng(seed);
  const double rho = scenario.latent_corr;
  const double rest = std::sqrt(1.0 - rho * rho);
  Latents out;
  out.t.resize(scenario.n);
  out.h1.resize(scenario.n);
  out.h2.resize(scenario.n);
  for (std::size_t i = 0; i < scenario.n; ++i) {
    const double zt = rng.normal();
    const double z1 = rho * zt + rest * rng.normal();
    const double z2 = rng.normal();
    out.h1[i] = z1 > 0.0 ? 1 : 0;
    out.h2[i] = std::tanh(z2);
    out.t[i] = scenario.separability ? (zt > 0.0 ? 1 : 0) : out.h1[i];
  }
  return out;
}

Latents generate_latents(const SimulationScenario& scenario) {
  return generate_latents(scenario, derive_seed(scenario.seed, "latents"));
}

double sample_tau(double alpha1, double alpha2, std::span<const int> h1) {
  if (h1.empty()) fail(ErrorKind::DegenerateData, "no units");
  double sum = 0.0;
  for (int v : h1) sum += v;
  return alpha1 + alpha2 * (sum / static_cast<double>(h1.size()));
}

// ---------------------------------------------------------------------------
// Representations

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

void check_aligned(std::size_t a, std::size_t b, std::size_t c) {
  if (a != b || a != c) fail(ErrorKind::Shape, "latent vectors must have equal length");
}

}  // namespace

RepresentationMap RepresentationMap::draw(std::size_t d_r, std::uint64_t seed) {
  if (d_r < 8) fail(ErrorKind::Validation, "d_R must be at least 8");
  Rng rng(seed);
  const auto d = static_cast<Eigen::Index>(d_r);
  const Eigen::Index k = treatment_units(d_r);
  RepresentationMap m;
  // The first k hidden units read only the treatment, the rest only the
  // confounders and nuisance latents.
  m.a_ = normal_matrix(d, kInputDim, rng, 1.0);
  m.a_.topRows(k).rightCols(kInputDim - 1).setZero();
  m.a_.bottomRows(d - k).col(0).setZero();
  m.bias_ = normal_matrix(1, d, rng, 0.5);
  // Block-diagonal mixing followed by a random rotation, so the treatment
  // units span a k-dimensional subspace orthogonal to everything else.
  Matrix block = Matrix::Zero(d, d);
  block.topLeftCorner(k, k) = normal_matrix(k, k, rng, 1.0 / std::sqrt(static_cast<double>(k)));
  block.bottomRightCorner(d - k, d - k) =
      normal_matrix(d - k, d - k, rng, 1.0 / std::sqrt(static_cast<double>(d - k)));
  const Matrix rotation = Eigen::HouseholderQR<Matrix>(normal_matrix(d, d, rng, 1.0)).householderQ();
  m.b_ = rotation * block;
  return m;
}

RepresentationMap RepresentationMap::build(std::size_t d_r, std::uint64_t seed) {
  SimulationScenario probe;
  probe.n = kProbeRows;
  probe.d_r = d_r;
  probe.latent_corr = 0.0;
  const Latents lat = generate_latents(probe, derive_seed(seed, "probe-latents"));
  ProbeScores last;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    RepresentationMap m = draw(d_r, derive_seed(seed, "map-attempt", static_cast<std::uint64_t>(attempt)));
    m.attempts_ = attempt + 1;
    const Matrix r = m.sample(lat.t, lat.h1, lat.h2, derive_seed(seed, "probe-representations"));
    last = linear_probe(r, lat.t, lat.h1, lat.h2);
    if (last.t_accuracy >= kProbeThreshold && last.h1_accuracy >= kProbeThreshold &&
        last.h2_r2 >= kProbeThreshold) {
      return m;
    }
  }
  fail(ErrorKind::Generation, "no representation map passed the linear probe check after " +
                                  std::to_string(kMaxAttempts) + " attempts (last: t acc " +
                                  format_double(last.t_accuracy) + ", h1 acc " + format_double(last.h1_accuracy) +
                                  ", h2 R2 " + format_double(last.h2_r2) + ")");
}

Matrix RepresentationMap::apply(std::span<const int> t, std::span<const int> h1, std::span<const double> h2,
                                const Matrix& s, const Matrix& eta, double sigma_r) const {
  check_aligned(t.size(), h1.size(), h2.size());
  const auto n = static_cast<Eigen::Index>(t.size());
  if (s.rows() != n || s.cols() != static_cast<Eigen::Index>(kNuisanceDim)) {
    fail(ErrorKind::Shape, "nuisance latents must be n x 5");
  }
  if (sigma_r != 0.0 && (eta.rows() != n || eta.cols() != b_.rows())) {
    fail(ErrorKind::Shape, "representation noise must be n x d_R");
  }
  Matrix x(n, static_cast<Eigen::Index>(kInputDim));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    x(i, 0) = kTreatmentLoading * (2.0 * t[u] - 1.0);
    x(i, 1) = 2.0 * h1[u] - 1.0;
    x(i, 2) = h2[u];
    x.row(i).tail(static_cast<Eigen::Index>(kNuisanceDim)) = s.row(i);
  }
  Matrix pre = x * a_.transpose();
  pre.rowwise() += bias_;
  pre = pre.unaryExpr([](double v) { return softplus(v); });
  Matrix r = pre * b_.transpose();
  if (sigma_r != 0.0) r += sigma_r * eta;
  return r;
}

Matrix RepresentationMap::sample(std::span<const int> t, std::span<const int> h1, std::span<const double> h2,
                                 std::uint64_t seed) const {
  const auto n = static_cast<Eigen::Index>(t.size());
  Rng rng(seed);
  const Matrix s = normal_matrix(n, static_cast<Eigen::Index>(kNuisanceDim), rng, 1.0);
  const Matrix eta = normal_matrix(n, b_.rows(), rng, 1.0);
  return apply(t, h1, h2, s, eta, kNoiseSd);
}

ProbeScores linear_probe(const Matrix& r, std::span<const int> t, std::span<const int> h1,
                         std::span<const double> h2) {
  check_aligned(t.size(), h1.size(), h2.size());
  const auto n = r.rows();
  if (static_cast<std::size_t>(n) != t.size()) fail(ErrorKind::Shape, "probe rows do not match latents");
  Eigen::MatrixXd x(n, r.cols() + 1);
  x.col(0).setOnes();
  x.rightCols(r.cols()) = r;
  const auto qr = x.colPivHouseholderQr();
  auto fitted = [&](const Eigen::VectorXd& target) -> Eigen::VectorXd { return x * qr.solve(target); };

  Eigen::VectorXd vt(n), v1(n), v2(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    vt[i] = t[u];
    v1[i] = h1[u];
    v2[i] = h2[u];
  }
  auto accuracy = [&](const Eigen::VectorXd& target) {
    const Eigen::VectorXd f = fitted(target);
    Eigen::Index hit = 0;
    for (Eigen::Index i = 0; i < n; ++i) hit += ((f[i] >= 0.5 ? 1.0 : 0.0) == target[i]) ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(n);
  };
  ProbeScores out;
  out.t_accuracy = accuracy(vt);
  out.h1_accuracy = accuracy(v1);
  const Eigen::VectorXd f2 = fitted(v2);
  const double ss_res = (v2 - f2).squaredNorm();
  const double ss_tot = (v2.array() - v2.mean()).square().sum();
  out.h2_r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
  return out;
}

Matrix generate_representations(std::span<const int> t, std::span<const int> h1, std::span<const double> h2,
                                std::size_t d_r, std::uint64_t seed) {
  const RepresentationMap map = RepresentationMap::build(d_r, derive_seed(seed, "representation-map"));
  return map.sample(t, h1, h2, derive_seed(seed, "representations"));
}

// ---------------------------------------------------------------------------
// Outcomes and perceived treatment

double outcome_mean(const SimulationScenario& s, int arm, int h1, double h2) {
  return s.alpha1 * arm + s.alpha2 * arm * h1 - s.alpha3 * h1 - s.alpha4 * h2;
}

Vector generate_outcome(std::span<const int> t, std::span<const int> h1, std::span<const double> h2,
                        const SimulationScenario& scenario, std::uint64_t seed) {
  check_aligned(t.size(), h1.size(), h2.size());
  Rng rng(seed);
  Vector y(static_cast<Eigen::Index>(t.size()));
  for (std::size_t i = 0; i < t.size(); ++i) {
    y[static_cast<Eigen::Index>(i)] = outcome_mean(scenario, t[i], h1[i], h2[i]) + scenario.noise_sd * rng.normal();
  }
  return y;
}

double compliance_probability(const IvBlock& iv, int h1) {
  double rate = iv.compliance_rate;
  if (iv.confounded_perception) rate += h1 == 1 ? 0.1 : -0.1;
  return std::clamp(rate, 0.0, 1.0);
}

PerceivedDraw generate_perceived(std::span<const int> t, std::span<const int> h1,
                                 const SimulationScenario& scenario, std::uint64_t seed) {
  if (!scenario.iv) fail(ErrorKind::Validation, "scenario has no iv block");
  if (t.size() != h1.size()) fail(ErrorKind::Shape, "t and h1 must have equal length");
  Rng rng(seed);
  PerceivedDraw out;
  out.t_tilde.resize(t.size());
  out.compliers.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = rng.uniform();
    const int complier = v < compliance_probability(*scenario.iv, h1[i]) ? 1 : 0;
    out.compliers[i] = complier;
    out.t_tilde[i] = t[i] * complier;
  }
  return out;
}

double true_late(const SimulationScenario& scenario, const SyntheticTruth& truth) {
  if (!scenario.iv) fail(ErrorKind::Validation, "scenario has no iv block");
  if (truth.compliers.size() != truth.h1.size()) {
    fail(ErrorKind::Validation, "perceived treatment has not been generated");
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < truth.h1.size(); ++i) {
    if (truth.compliers[i] == 0) continue;
    sum += scenario.alpha1 + scenario.alpha2 * truth.h1[i];
    ++count;
  }
  if (count == 0) fail(ErrorKind::DegenerateData, "complier set is empty");
  return sum / static_cast<double>(count);
}

double population_tau(const SimulationScenario& s) { return s.alpha1 + 0.5 * s.alpha2; }

double population_late(const SimulationScenario& s) {
  if (!s.iv) fail(ErrorKind::Validation, "scenario has no iv block");
  const double r1 = compliance_probability(*s.iv, 1);
  const double r0 = compliance_probability(*s.iv, 0);
  if (r1 + r0 <= 0.0) fail(ErrorKind::DegenerateData, "no compliers in the population");
  return s.alpha1 + s.alpha2 * r1 / (r1 + r0);
}

double true_propensity(const SimulationScenario& s, int h1) {
  if (!s.separability) return h1 == 1 ? 1.0 : 0.0;
  // P(z_t > 0 | z_1 > 0) for a standard bivariate normal with correlation rho.
  const double shift = std::asin(s.latent_corr) / std::numbers::pi;
  return h1 == 1 ? 0.5 + shift : 0.5 - shift;
}

NuisanceValues oracle_nuisances(const SimulationScenario& s, const SyntheticTruth& truth) {
  const auto n = static_cast<Eigen::Index>(truth.t.size());
  NuisanceValues v;
  v.mu0.resize(n);
  v.mu1.resize(n);
  v.pi.resize(n);
  if (s.iv) {
    v.m0 = Vector::Zero(n);
    v.m1.resize(n);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    v.mu0[i] = outcome_mean(s, 0, truth.h1[u], truth.h2[u]);
    v.mu1[i] = outcome_mean(s, 1, truth.h1[u], truth.h2[u]);
    v.pi[i] = true_propensity(s, truth.h1[u]);
    if (s.iv) {
      // T reaches the outcome only through the perceived treatment.
      const double c = compliance_probability(*s.iv, truth.h1[u]);
      v.m1[i] = c;
      v.mu1[i] = c * v.mu1[i] + (1.0 - c) * v.mu0[i];
    }
  }
  return v;
}

// ---------------------------------------------------------------------------
// Samples

namespace {

struct Units {
  Latents latents;
  Matrix r;
};

Units draw_units(const SimulationScenario& s, const RepresentationMap& map, std::uint64_t latent_seed,
                 std::uint64_t representation_seed) {
  Units u;
  u.latents = generate_latents(s, latent_seed);
  u.r = map.sample(u.latents.t, u.latents.h1, u.latents.h2, representation_seed);
  return u;
}

SimulatedSample assemble(const SimulationScenario& s, const Units& units, std::uint64_t outcome_seed,
                         std::uint64_t perceived_seed) {
  SyntheticTruth truth;
  truth.t = units.latents.t;
  truth.h1 = units.latents.h1;
  truth.h2 = units.latents.h2;
  truth.true_tau = sample_tau(s.alpha1, s.alpha2, truth.h1);
  std::optional<std::vector<int>> t_tilde;
  if (s.iv) {
    PerceivedDraw p = generate_perceived(truth.t, truth.h1, s, perceived_seed);
    truth.t_tilde = p.t_tilde;
    truth.compliers = std::move(p.compliers);
    t_tilde = std::move(p.t_tilde);
    bool any = std::any_of(truth.compliers.begin(), truth.compliers.end(), [](int c) { return c == 1; });
    if (any) truth.true_beta = true_late(s, truth);
  }
  // With a perceived-treatment block the outcome responds to T~, not T.
  Vector y = generate_outcome(s.iv ? std::span<const int>(truth.t_tilde) : std::span<const int>(truth.t), truth.h1,
                              truth.h2, s, outcome_seed);
  std::vector<std::string> ids(s.n);
  for (std::size_t i = 0; i < s.n; ++i) ids[i] = std::to_string(i);
  Dataset data = Dataset::from_columns(std::move(ids), std::move(y), truth.t, std::move(t_tilde), units.r);
  return SimulatedSample{std::move(truth), std::move(data)};
}

// Effect of T itself on the outcome when T acts through the perceived
// treatment: the complier-weighted effect.
double sample_intent_to_treat(const SimulationScenario& s, std::span<const int> h1) {
  double sum = 0.0;
  for (int h : h1) sum += compliance_probability(*s.iv, h) * (s.alpha1 + s.alpha2 * h);
  return sum / static_cast<double>(h1.size());
}

double population_intent_to_treat(const SimulationScenario& s) {
  return 0.5 * (compliance_probability(*s.iv, 0) * s.alpha1 + compliance_probability(*s.iv, 1) * (s.alpha1 + s.alpha2));
}

RepresentationMap scenario_map(const SimulationScenario& s) {
  return RepresentationMap::build(s.d_r, derive_seed(s.seed, "representation-map"));
}

}  // namespace

SimulatedSample generate_sample(const SimulationScenario& s, const RepresentationMap& map) {
  s.validate();
  const Units units = draw_units(s, map, derive_seed(s.seed, "latents"), derive_seed(s.seed, "representations"));
  return assemble(s, units, derive_seed(s.seed, "outcome"), derive_seed(s.seed, "perceived"));
}

SimulatedSample generate_sample(const SimulationScenario& s) { return generate_sample(s, scenario_map(s)); }

// ---------------------------------------------------------------------------
// Monte Carlo

std::string_view to_string(EstimatorKind kind) noexcept {
  switch (kind) {
    case EstimatorKind::Gpi:
      return "gpi";
    case EstimatorKind::DiffInMeans:
      return "diff_in_means";
    case EstimatorKind::Oracle:
      return "oracle";
  }
  return "unknown";
}

EstimatorKind parse_estimator_kind(std::string_view text) {
  if (text == "gpi") return EstimatorKind::Gpi;
  if (text == "diff_in_means") return EstimatorKind::DiffInMeans;
  if (text == "oracle") return EstimatorKind::Oracle;
  fail(ErrorKind::Config, "unknown estimator '" + std::string(text) + "'");
}

const EstimatorSummary& MCReport::summary(EstimatorKind kind) const {
  for (const auto& s : summaries) {
    if (s.estimator == kind) return s;
  }
  fail(ErrorKind::Validation, "no summary for estimator " + std::string(to_string(kind)));
}

std::vector<TrialRecord> MCReport::records_for(EstimatorKind kind) const {
  std::vector<TrialRecord> out;
  for (const auto& r : records) {
    if (r.estimator == kind) out.push_back(r);
  }
  return out;
}

namespace {

void fill_interval(TrialRecord& rec, const EstimateResult& est) {
  rec.ok = true;
  rec.estimate = est.estimate;
  rec.std_error = est.std_error;
  rec.ci_low = est.ci_low;
  rec.ci_high = est.ci_high;
  rec.covered = est.ci_low <= rec.target && rec.target <= est.ci_high;
}

TrialRecord run_estimator(EstimatorKind kind, const SimulationScenario& s, const EstimatorConfig& config,
                          const SimulatedSample& sample, double target, std::size_t trial) {
  TrialRecord rec;
  rec.trial = trial;
  rec.estimator = kind;
  rec.target = target;
  const auto start = std::chrono::steady_clock::now();
  try {
    const Dataset& data = sample.data;
    const std::vector<double> y(data.y().data(), data.y().data() + data.y().size());
    switch (kind) {
      case EstimatorKind::DiffInMeans:
        fill_interval(rec, difference_in_means(data, config.confidence));
        break;
      case EstimatorKind::Oracle: {
        const NuisanceValues nv = oracle_nuisances(s, sample.truth);
        fill_interval(rec, config.late ? score_late(y, data.t(), data.t_tilde(), nv, config.confidence)
                                       : score_ate(y, data.t(), nv, config.confidence));
        break;
      }
      case EstimatorKind::Gpi: {
        const FoldPlan plan = make_folds(data.size(), config.k_folds, config.inner_split_fraction,
                                         derive_seed(config.seed, "trial-folds", trial));
        NetworkConfig net = config.network;
        net.seed = derive_seed(config.seed, "trial-network", trial);
        PropensityConfig prop = config.propensity;
        prop.seed = derive_seed(config.seed, "trial-propensity", trial);
        CrossFitOptions options;
        options.confidence = config.confidence;
        const CrossFitResult fit = config.late ? estimate_late(data, plan, net, prop, options)
                                               : estimate_ate(data, plan, net, prop, options);
        fill_interval(rec, fit.result);
        if (config.diagnostics) {
          IossOptions io;
          io.seed = derive_seed(config.seed, "trial-ioss", trial);
          const DiagnosticsReport d = diagnose(fit, plan, data.t(), 50, io);
          rec.ioss = d.ioss;
          rec.control_fraction_below_005 = d.control_fraction_below_005;
          rec.extreme_fraction = d.pscores.extreme_fraction;
        }
        break;
      }
    }
  } catch (const Error& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

std::optional<double> mean_of(std::span<const TrialRecord> records, std::optional<double> TrialRecord::*field) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& r : records) {
    if (!r.ok || !(r.*field)) continue;
    sum += *(r.*field);
    ++count;
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

}  // namespace

EstimatorSummary summarize(EstimatorKind kind, std::span<const TrialRecord> records) {
  EstimatorSummary s;
  s.estimator = kind;
  std::vector<const TrialRecord*> ok;
  double runtime = 0.0;
  std::size_t seen = 0;
  for (const auto& r : records) {
    if (r.estimator != kind) continue;
    ++seen;
    runtime += r.seconds;
    if (r.ok) {
      ok.push_back(&r);
    } else {
      ++s.failures;
    }
  }
  s.trials_ok = ok.size();
  if (seen > 0) s.avg_runtime_seconds = runtime / static_cast<double>(seen);
  if (ok.empty()) return s;
  const double m = static_cast<double>(ok.size());
  double sum_err = 0.0, sum_sq = 0.0, sum_est = 0.0, sum_target = 0.0, covered = 0.0, length = 0.0;
  for (const auto* r : ok) {
    const double err = r->estimate - r->target;
    sum_err += err;
    sum_sq += err * err;
    sum_est += r->estimate;
    sum_target += r->target;
    covered += r->covered ? 1.0 : 0.0;
    length += r->ci_high - r->ci_low;
  }
  s.bias = sum_err / m;
  s.rmse = std::sqrt(sum_sq / m);
  s.mean_estimate = sum_est / m;
  s.mean_target = sum_target / m;
  s.coverage = covered / m;
  s.avg_ci_length = length / m;
  if (ok.size() > 1) {
    double ss = 0.0;
    for (const auto* r : ok) ss += std::pow(r->estimate - r->target - s.bias, 2);
    s.bias_se = std::sqrt(ss / (m - 1.0) / m);
  }
  std::vector<TrialRecord> mine;
  for (const auto* r : ok) mine.push_back(*r);
  s.mean_ioss = mean_of(mine, &TrialRecord::ioss);
  s.mean_control_fraction_below_005 = mean_of(mine, &TrialRecord::control_fraction_below_005);
  s.mean_extreme_fraction = mean_of(mine, &TrialRecord::extreme_fraction);
  return s;
}

MCReport run_monte_carlo(const SimulationScenario& scenario, const EstimatorConfig& config, std::size_t trials,
                         const MonteCarloOptions& options) {
  scenario.validate();
  if (trials < 50) fail(ErrorKind::Validation, "Monte Carlo runs need at least 50 trials");
  if (config.late && !scenario.iv) fail(ErrorKind::Validation, "LATE simulation needs an iv block");
  if (options.estimators.empty()) fail(ErrorKind::Validation, "no estimators requested");

  const RepresentationMap map = scenario_map(scenario);
  const bool conditional = scenario.design == SimulationDesign::Conditional;
  std::optional<Units> fixed;
  if (conditional) {
    fixed = draw_units(scenario, map, derive_seed(scenario.seed, "latents"),
                       derive_seed(scenario.seed, "representations"));
  }

  MCReport report;
  report.scenario = scenario;
  report.trials = trials;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    std::optional<SimulatedSample> sample;
    std::string generation_error;
    try {
      const Units units = conditional ? *fixed
                                      : draw_units(scenario, map, derive_seed(scenario.seed, "trial-latents", trial),
                                                   derive_seed(scenario.seed, "trial-representations", trial));
      sample = assemble(scenario, units, derive_seed(scenario.seed, "trial-outcome", trial),
                        derive_seed(scenario.seed, "trial-perceived", trial));
    } catch (const Error& e) {
      generation_error = e.what();
    }

    double target = 0.0;
    if (sample) {
      if (config.late) {
        if (!conditional) {
          target = population_late(scenario);
        } else if (sample->truth.true_beta) {
          target = *sample->truth.true_beta;
        } else {
          generation_error = "complier set is empty";
          sample.reset();
        }
      } else if (scenario.iv) {
        target = conditional ? sample_intent_to_treat(scenario, sample->truth.h1) : population_intent_to_treat(scenario);
      } else {
        target = conditional ? sample->truth.true_tau : population_tau(scenario);
      }
    }

    for (EstimatorKind kind : options.estimators) {
      if (!sample) {
        TrialRecord rec;
        rec.trial = trial;
        rec.estimator = kind;
        rec.error = generation_error;
        report.records.push_back(std::move(rec));
        continue;
      }
      report.records.push_back(run_estimator(kind, scenario, config, *sample, target, trial));
    }
    if (options.progress) options.progress(trial + 1);
  }
  for (EstimatorKind kind : options.estimators) report.summaries.push_back(summarize(kind, report.records));
  return report;
}

namespace {

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\n") == std::string::npos) return text;
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

std::string optional_field(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

std::string mc_records_csv(const MCReport& report) {
  std::string out =
      "trial,estimator,ok,target,estimate,std_error,ci_low,ci_high,covered,ioss,control_fraction_below_0.05,"
      "extreme_fraction,error\n";
  for (const auto& r : report.records) {
    out += std::to_string(r.trial) + ',' + std::string(to_string(r.estimator)) + ',' + (r.ok ? "1" : "0") + ',';
    if (r.ok) {
      out += format_double(r.target) + ',' + format_double(r.estimate) + ',' + format_double(r.std_error) + ',' +
             format_double(r.ci_low) + ',' + format_double(r.ci_high) + ',' + (r.covered ? "1" : "0") + ',';
    } else {
      out += ",,,,,,";
    }
    out += optional_field(r.ioss) + ',' + optional_field(r.control_fraction_below_005) + ',' +
           optional_field(r.extreme_fraction) + ',' + csv_field(r.error) + '\n';
  }
  return out;
}

KvDocument scenario_report(const SimulationScenario& s) {
  KvDocument doc;
  doc.set("scenario", "alpha1", s.alpha1);
  doc.set("scenario", "alpha2", s.alpha2);
  doc.set("scenario", "alpha3", s.alpha3);
  doc.set("scenario", "alpha4", s.alpha4);
  doc.set("scenario", "n", s.n);
  doc.set("scenario", "d_r", s.d_r);
  doc.set("scenario", "latent_corr", s.latent_corr);
  doc.set("scenario", "separability", s.separability);
  doc.set("scenario", "noise_sd", s.noise_sd);
  doc.set("scenario", "seed", static_cast<unsigned long long>(s.seed));
  doc.set("scenario", "design", std::string(to_string(s.design)));
  if (s.iv) {
    doc.set("scenario", "compliance_rate", s.iv->compliance_rate);
    doc.set("scenario", "confounded_perception", s.iv->confounded_perception);
  }
  return doc;
}

KvDocument mc_summary_report(const MCReport& report) {
  KvDocument doc = scenario_report(report.scenario);
  doc.set("", "format", "gpi-mc-summary");
  doc.set("", "format_version", 1);
  doc.set("", "trials", report.trials);
  for (const auto& s : report.summaries) {
    const std::string sec(to_string(s.estimator));
    doc.set(sec, "trials_ok", s.trials_ok);
    doc.set(sec, "failures", s.failures);
    doc.set(sec, "bias", s.bias);
    doc.set(sec, "bias_se", s.bias_se);
    doc.set(sec, "rmse", s.rmse);
    doc.set(sec, "coverage", s.coverage);
    doc.set(sec, "avg_ci_length", s.avg_ci_length);
    doc.set(sec, "mean_estimate", s.mean_estimate);
    doc.set(sec, "mean_target", s.mean_target);
    if (s.mean_ioss) doc.set(sec, "mean_ioss", *s.mean_ioss);
    if (s.mean_control_fraction_below_005) {
      doc.set(sec, "mean_control_fraction_below_005", *s.mean_control_fraction_below_005);
    }
    if (s.mean_extreme_fraction) doc.set(sec, "mean_extreme_fraction", *s.mean_extreme_fraction);
  }
  return doc;
}

KvDocument mc_timing_report(const MCReport& report) {
  KvDocument doc;
  doc.set("", "format", "gpi-mc-timing");
  doc.set("", "format_version", 1);
  for (const auto& s : report.summaries) {
    doc.set(std::string(to_string(s.estimator)), "avg_runtime_seconds", s.avg_runtime_seconds);
  }
  return doc;
}

}  // namespace gpi
