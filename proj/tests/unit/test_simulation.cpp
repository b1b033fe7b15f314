#include <gtest/gtest.h>

#include <cmath>

#include "gpi/error.hpp"
#include "gpi/simulation.hpp"

namespace gpi {
namespace {

double correlation(const std::vector<int>& a, const std::vector<int>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

SimulationScenario small_scenario() {
  SimulationScenario s = preset_from_name("weak-separable");
  s.n = 300;
  s.d_r = 32;
  s.seed = 11;
  return s;
}

TEST(Presets, ConfoundingStrengthsAndNames) {
  const auto weak = preset_from_name("weak-separable");
  const auto moderate = preset_from_name("moderate-separable");
  const auto strong = preset_from_name("strong-nonseparable");
  EXPECT_EQ(weak.alpha3, 50.0);
  EXPECT_EQ(weak.alpha4, 50.0);
  EXPECT_GT(moderate.alpha3, weak.alpha3);
  EXPECT_GT(strong.alpha3, moderate.alpha3);
  EXPECT_TRUE(weak.separability);
  EXPECT_FALSE(strong.separability);
  EXPECT_EQ(weak.d_r, 64u);
  EXPECT_EQ(weak.n, 2000u);
  EXPECT_EQ(make_preset(ConfoundingStrength::Moderate, true), moderate);
  EXPECT_THROW(preset_from_name("extreme-separable"), Error);
  EXPECT_EQ(parse_simulation_design("superpopulation"), SimulationDesign::Superpopulation);
  EXPECT_EQ(to_string(SimulationDesign::Conditional), "conditional");
}

TEST(Latents, UncorrelatedWhenLatentCorrIsZero) {
  SimulationScenario s = small_scenario();
  s.n = 5000;
  s.latent_corr = 0.0;
  const Latents l = generate_latents(s, 3);
  EXPECT_LT(std::abs(correlation(l.t, l.h1)), 0.05);
  for (double v : l.h2) {
    EXPECT_GT(v, -1.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Latents, NonSeparableMeansTreatmentEqualsH1) {
  SimulationScenario s = small_scenario();
  s.separability = false;
  const Latents l = generate_latents(s, 4);
  EXPECT_EQ(l.t, l.h1);
}

TEST(Latents, SeededAndConfounded) {
  SimulationScenario s = small_scenario();
  s.n = 5000;
  const Latents a = generate_latents(s, 5);
  const Latents b = generate_latents(s, 5);
  EXPECT_EQ(a.t, b.t);
  EXPECT_EQ(a.h2, b.h2);
  EXPECT_NE(a.t, generate_latents(s, 6).t);
  // P(T=1 | h1=1) = 1/2 + asin(rho)/pi.
  double treated_given_h1 = 0, h1 = 0;
  for (std::size_t i = 0; i < a.t.size(); ++i) {
    h1 += a.h1[i];
    treated_given_h1 += a.h1[i] * a.t[i];
  }
  EXPECT_NEAR(treated_given_h1 / h1, true_propensity(s, 1), 0.03);
  EXPECT_NEAR(true_propensity(s, 1), 0.5 + std::asin(0.5) / M_PI, 1e-15);
}

TEST(Representations, IdenticalInputsGiveIdenticalRowsWithoutNoise) {
  const RepresentationMap map = RepresentationMap::build(32, 1);
  const std::vector<int> t{1, 1, 0}, h1{0, 0, 1};
  const std::vector<double> h2{0.3, 0.3, -0.2};
  Matrix s = Matrix::Zero(3, RepresentationMap::kNuisanceDim);
  s.row(0).setConstant(0.7);
  s.row(1).setConstant(0.7);
  const Matrix r = map.apply(t, h1, h2, s, Matrix(), 0.0);
  EXPECT_EQ(r.row(0), r.row(1));
  EXPECT_NE(r.row(0), r.row(2));
}

TEST(Representations, ProbeGateAndDeterminism) {
  SimulationScenario s = small_scenario();
  s.n = 2000;
  s.latent_corr = 0.0;
  const Latents l = generate_latents(s, 7);
  const Matrix a = generate_representations(l.t, l.h1, l.h2, 64, 8);
  const Matrix b = generate_representations(l.t, l.h1, l.h2, 64, 8);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.cols(), 64);
  const ProbeScores p = linear_probe(a, l.t, l.h1, l.h2);
  EXPECT_GE(p.t_accuracy, 0.95);
  EXPECT_GE(p.h1_accuracy, 0.95);
  EXPECT_GE(p.h2_r2, 0.95);
}

TEST(Representations, TooNarrowMapsFailTheGate) {
  try {
    RepresentationMap::build(8, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Generation);
  }
}

TEST(Outcome, HandEvaluation) {
  SimulationScenario s = small_scenario();
  EXPECT_EQ(outcome_mean(s, 1, 1, 0.0), -30.0);
  EXPECT_EQ(outcome_mean(s, 0, 0, 0.0), 0.0);
  s.noise_sd = 0.0;
  const Vector y = generate_outcome(std::vector<int>{1, 0}, std::vector<int>{1, 0}, std::vector<double>{0, 0}, s, 1);
  EXPECT_EQ(y[0], -30.0);
  EXPECT_EQ(y[1], 0.0);
}

TEST(Outcome, NoiseIsSeededWithTheConfiguredSd) {
  SimulationScenario s = small_scenario();
  s.noise_sd = 2.0;
  const std::vector<int> zeros(20000, 0);
  const std::vector<double> h2(20000, 0.0);
  const Vector y = generate_outcome(zeros, zeros, h2, s, 3);
  EXPECT_NEAR(std::sqrt(y.squaredNorm() / 20000.0), 2.0, 0.05);
  EXPECT_EQ(y, generate_outcome(zeros, zeros, h2, s, 3));
}

TEST(Tau, SampleAndPopulationTargets) {
  EXPECT_EQ(sample_tau(10, 0, std::vector<int>{1, 1, 0}), 10.0);
  EXPECT_DOUBLE_EQ(sample_tau(10, 10, std::vector<int>{1, 0, 0, 0, 1}), 14.0);
  EXPECT_DOUBLE_EQ(population_tau(small_scenario()), 15.0);
}

TEST(Perceived, FullComplianceAndMonotonicity) {
  SimulationScenario s = small_scenario();
  s.iv = IvBlock{1.0, false};
  const Latents l = generate_latents(s, 1);
  const PerceivedDraw full = generate_perceived(l.t, l.h1, s, 2);
  EXPECT_EQ(full.t_tilde, l.t);
  s.iv = IvBlock{0.5, true};
  const PerceivedDraw half = generate_perceived(l.t, l.h1, s, 2);
  for (std::size_t i = 0; i < l.t.size(); ++i) {
    EXPECT_LE(half.t_tilde[i], l.t[i]);
    if (l.t[i] == 0) {
      EXPECT_EQ(half.t_tilde[i], 0);
    }
  }
}

TEST(Perceived, ComplianceRateIsRespected) {
  SimulationScenario s = small_scenario();
  s.n = 5000;
  s.iv = IvBlock{0.6, false};
  const Latents l = generate_latents(s, 3);
  const PerceivedDraw d = generate_perceived(l.t, l.h1, s, 4);
  double treated = 0, perceived = 0;
  for (std::size_t i = 0; i < l.t.size(); ++i) {
    treated += l.t[i];
    perceived += d.t_tilde[i];
  }
  EXPECT_NEAR(perceived / treated, 0.6, 0.03);
  EXPECT_DOUBLE_EQ(compliance_probability(IvBlock{0.6, true}, 1), 0.7);
  EXPECT_DOUBLE_EQ(compliance_probability(IvBlock{0.6, true}, 0), 0.5);
  EXPECT_DOUBLE_EQ(compliance_probability(IvBlock{0.95, true}, 1), 1.0);
}

TEST(TrueLate, ComplierMeans) {
  SimulationScenario s = small_scenario();
  s.iv = IvBlock{1.0, false};
  s.alpha2 = 0.0;
  SyntheticTruth truth;
  truth.h1 = {1, 0, 1, 0, 0};
  truth.compliers = {1, 1, 1, 1, 1};
  EXPECT_EQ(true_late(s, truth), 10.0);
  s.alpha2 = 10.0;
  // Complier mean of h1 is 0.4.
  EXPECT_DOUBLE_EQ(true_late(s, truth), 14.0);
  truth.h1 = {1, 1, 1, 0, 0, 0};
  truth.compliers = {1, 1, 0, 1, 1, 1};
  EXPECT_DOUBLE_EQ(true_late(s, truth), 14.0);
  truth.compliers = {0, 0, 0, 0, 0, 0};
  try {
    true_late(s, truth);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateData);
  }
}

TEST(Sample, TruthIsConsistentAndSeeded) {
  const SimulationScenario s = small_scenario();
  const SimulatedSample a = generate_sample(s);
  const SimulatedSample b = generate_sample(s);
  EXPECT_EQ(a.data.representations(), b.data.representations());
  EXPECT_EQ(a.data.y(), b.data.y());
  EXPECT_EQ(a.truth.true_tau, sample_tau(s.alpha1, s.alpha2, a.truth.h1));
  EXPECT_EQ(a.data.t(), a.truth.t);
  EXPECT_EQ(a.data.size(), 300u);
  EXPECT_FALSE(a.data.has_perceived());
  EXPECT_FALSE(a.truth.true_beta.has_value());
}

TEST(Sample, IvScenarioCarriesPerceivedTreatment) {
  SimulationScenario s = small_scenario();
  s.iv = IvBlock{0.7, false};
  const SimulatedSample a = generate_sample(s);
  ASSERT_TRUE(a.data.has_perceived());
  ASSERT_TRUE(a.truth.true_beta.has_value());
  EXPECT_EQ(*a.truth.true_beta, true_late(s, a.truth));
  EXPECT_DOUBLE_EQ(population_late(s), 15.0);
}

TEST(OracleNuisances, MatchTheOutcomeModel) {
  SimulationScenario s = small_scenario();
  s.iv = IvBlock{0.8, true};
  const SimulatedSample a = generate_sample(s);
  const NuisanceValues nv = oracle_nuisances(s, a.truth);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const double c = a.truth.h1[i] ? 0.9 : 0.7;
    const double y1 = outcome_mean(s, 1, a.truth.h1[i], a.truth.h2[i]);
    const double y0 = outcome_mean(s, 0, a.truth.h1[i], a.truth.h2[i]);
    EXPECT_DOUBLE_EQ(nv.mu1[k], c * y1 + (1.0 - c) * y0);
    EXPECT_EQ(nv.mu0[k], y0);
    EXPECT_EQ(nv.pi[k], true_propensity(s, a.truth.h1[i]));
    EXPECT_EQ(nv.m0[k], 0.0);
    EXPECT_DOUBLE_EQ(nv.m1[k], a.truth.h1[i] ? 0.9 : 0.7);
  }
}

TEST(Sample, IvOutcomeFollowsThePerceivedTreatment) {
  SimulationScenario s = small_scenario();
  s.iv = IvBlock{0.6, false};
  s.noise_sd = 1e-9;
  const SimulatedSample a = generate_sample(s);
  std::size_t noncompliers = 0;
  for (std::size_t i = 0; i < a.truth.t.size(); ++i) {
    const int tt = a.truth.t_tilde[i];
    noncompliers += a.truth.t[i] == 1 && tt == 0;
    EXPECT_NEAR(a.data.y()[static_cast<Eigen::Index>(i)], outcome_mean(s, tt, a.truth.h1[i], a.truth.h2[i]), 1e-6);
  }
  EXPECT_GT(noncompliers, 0u);
}

TEST(MonteCarlo, PreconditionAndDeterminism) {
  SimulationScenario s = small_scenario();
  EstimatorConfig c;
  MonteCarloOptions o;
  o.estimators = {EstimatorKind::DiffInMeans, EstimatorKind::Oracle};
  try {
    run_monte_carlo(s, c, 10, o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Validation);
  }
  const MCReport a = run_monte_carlo(s, c, 60, o);
  const MCReport b = run_monte_carlo(s, c, 60, o);
  EXPECT_EQ(mc_records_csv(a), mc_records_csv(b));
  EXPECT_EQ(mc_summary_report(a).serialize(), mc_summary_report(b).serialize());
  const MCReport longer = run_monte_carlo(s, c, 80, o);
  const auto first = longer.records_for(EstimatorKind::Oracle);
  const auto shorter = a.records_for(EstimatorKind::Oracle);
  for (std::size_t i = 0; i < shorter.size(); ++i) EXPECT_EQ(first[i].estimate, shorter[i].estimate);
  // Conditional design: every trial targets the same sample ATE.
  for (const auto& r : shorter) EXPECT_EQ(r.target, shorter[0].target);
}

TEST(MonteCarlo, ConfoundedBaselineIsBiasedAndOracleIsNot) {
  SimulationScenario s = small_scenario();
  s.design = SimulationDesign::Superpopulation;
  EstimatorConfig c;
  MonteCarloOptions o;
  o.estimators = {EstimatorKind::DiffInMeans, EstimatorKind::Oracle};
  const MCReport r = run_monte_carlo(s, c, 100, o);
  const auto& dim = r.summary(EstimatorKind::DiffInMeans);
  const auto& oracle = r.summary(EstimatorKind::Oracle);
  EXPECT_GT(std::abs(dim.bias), 5.0);
  EXPECT_LT(std::abs(oracle.bias), 4.0 * oracle.bias_se + 1e-12);
  EXPECT_EQ(oracle.failures, 0u);
  for (const auto& rec : r.records) EXPECT_EQ(rec.target, 15.0);
  const std::string csv = mc_records_csv(r);
  EXPECT_EQ(csv.rfind("trial,estimator,ok,", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 201);
}

TEST(MonteCarlo, OracleFailsCleanlyWithoutOverlap) {
  SimulationScenario s = small_scenario();
  s.separability = false;
  MonteCarloOptions o;
  o.estimators = {EstimatorKind::Oracle, EstimatorKind::DiffInMeans};
  const MCReport r = run_monte_carlo(s, EstimatorConfig{}, 50, o);
  EXPECT_EQ(r.summary(EstimatorKind::Oracle).failures, 50u);
  EXPECT_EQ(r.summary(EstimatorKind::DiffInMeans).trials_ok, 50u);
}

TEST(MonteCarlo, SummaryArithmetic) {
  std::vector<TrialRecord> recs(3);
  const double est[] = {1.0, 2.0, 6.0};
  for (std::size_t i = 0; i < 3; ++i) {
    recs[i].trial = i;
    recs[i].ok = true;
    recs[i].target = 2.0;
    recs[i].estimate = est[i];
    recs[i].ci_low = est[i] - 1.5;
    recs[i].ci_high = est[i] + 1.5;
    recs[i].covered = recs[i].ci_low <= 2.0 && 2.0 <= recs[i].ci_high;
  }
  recs.push_back(TrialRecord{});  // a failure
  recs.back().trial = 3;
  const EstimatorSummary s = summarize(EstimatorKind::Gpi, recs);
  EXPECT_EQ(s.trials_ok, 3u);
  EXPECT_EQ(s.failures, 1u);
  EXPECT_DOUBLE_EQ(s.bias, 1.0);
  EXPECT_DOUBLE_EQ(s.rmse, std::sqrt((1.0 + 0.0 + 16.0) / 3.0));
  EXPECT_DOUBLE_EQ(s.coverage, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.avg_ci_length, 3.0);
}

}  // namespace
}  // namespace gpi
