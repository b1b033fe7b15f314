#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "gpi/diagnostics.hpp"
#include "gpi/dml.hpp"
#include "gpi/error.hpp"
#include "ioss_oracle.hpp"

namespace gpi {
namespace {

Matrix column(std::initializer_list<double> values) {
  Matrix m(static_cast<Eigen::Index>(values.size()), 1);
  Eigen::Index i = 0;
  for (double v : values) m(i++, 0) = v;
  return m;
}

std::vector<int> flip(const std::vector<int>& t) {
  std::vector<int> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = 1 - t[i];
  return out;
}

TEST(PropensitySummary, AllHalfFillsOneBinPerArm) {
  const std::vector<double> p(10, 0.5);
  const std::vector<int> t{0, 1, 0, 1, 0, 1, 0, 1, 1, 1};
  const PropensitySummary s = propensity_summary(p, t, 50);
  EXPECT_EQ(s.histogram[0][25], 4u);
  EXPECT_EQ(s.histogram[1][25], 6u);
  std::size_t occupied = 0;
  for (int arm = 0; arm < 2; ++arm) {
    for (auto c : s.histogram[static_cast<std::size_t>(arm)]) occupied += c > 0;
  }
  EXPECT_EQ(occupied, 2u);
  EXPECT_EQ(s.extreme_fraction, 0.0);
}

TEST(PropensitySummary, ExtremeFractionAndEdges) {
  const std::vector<double> p{0.005, 0.5, 0.995, 0.5};
  const std::vector<int> t{0, 0, 1, 1};
  const PropensitySummary s = propensity_summary(p, t, 10);
  EXPECT_DOUBLE_EQ(s.extreme_fraction, 0.5);
  EXPECT_EQ(s.histogram[1][9], 1u);  // 0.995 lands in the last bin
  const PropensitySummary edge = propensity_summary(std::vector<double>{0.0, 1.0}, std::vector<int>{0, 1}, 4);
  EXPECT_EQ(edge.histogram[0][0], 1u);
  EXPECT_EQ(edge.histogram[1][3], 1u);
}

TEST(PropensitySummary, Contracts) {
  auto kind = [](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;
  };
  EXPECT_EQ(kind([] { propensity_summary(std::vector<double>{0.5, 0.4}, std::vector<int>{1, 1}); }),
            ErrorKind::DegenerateData);
  EXPECT_EQ(kind([] { propensity_summary(std::vector<double>{0.5}, std::vector<int>{1, 0}); }), ErrorKind::Shape);
  EXPECT_EQ(kind([] { propensity_summary(std::vector<double>{0.5, 1.5}, std::vector<int>{1, 0}); }),
            ErrorKind::Domain);
}

TEST(ArmFractionBelow, CountsStrictly) {
  const std::vector<double> p{0.01, 0.05, 0.2, 0.02, 0.9};
  const std::vector<int> t{0, 0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(arm_fraction_below(p, t, 0, 0.05), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(arm_fraction_below(p, t, 1, 0.05), 0.5);
}

TEST(MinMaxStandardize, Definition) {
  EXPECT_EQ(min_max_standardize(column({2, 4, 6})), column({0, 0.5, 1}));
  EXPECT_EQ(min_max_standardize(column({0, 0.3, 1})), column({0, 0.3, 1}));
  EXPECT_EQ(min_max_standardize(column({3, 3, 3})), column({0.5, 0.5, 0.5}));
  EXPECT_THROW(min_max_standardize(column({1})), Error);
}

TEST(Hausdorff, HandExample) {
  EXPECT_DOUBLE_EQ(hausdorff_distance(column({0, 1}), column({0, 3})), 2.0);
  Matrix a(1, 2), b(2, 2);
  a << 0, 0;
  b << 3, 4, 0, 1;
  EXPECT_DOUBLE_EQ(hausdorff_distance(a, b), 5.0);
  EXPECT_THROW(hausdorff_distance(a, Matrix(0, 2)), Error);
}

TEST(Ioss, IdenticalSupportsScoreZero) {
  Matrix q = testing::random_matrix(10, 3, 1);
  Matrix both(20, 3);
  both << q, q;
  std::vector<int> t(20, 0);
  for (std::size_t i = 10; i < 20; ++i) t[i] = 1;
  EXPECT_EQ(ioss(both, t), 0.0);
}

TEST(Ioss, OneDimensionalHandExample) {
  const Matrix q = column({0.0, 0.25, 0.5, 0.5, 0.75, 1.0});
  const std::vector<int> t{1, 1, 1, 0, 0, 0};
  EXPECT_DOUBLE_EQ(ioss(q, t), 0.5);
  EXPECT_DOUBLE_EQ(testing::brute_force_ioss(q, t), 0.5);
  EXPECT_DOUBLE_EQ(ioss(q, flip(t)), 0.5);
}

TEST(Ioss, MatchesBruteForceOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto n = 4 + rng.index(60);
    const auto d = static_cast<Eigen::Index>(1 + rng.index(3));
    Matrix q = testing::random_matrix(static_cast<Eigen::Index>(n), d, seed);
    const auto t = testing::random_treatment(n, seed + 100);
    for (Eigen::Index i = 0; i < q.rows(); ++i) q(i, 0) += 1.5 * t[static_cast<std::size_t>(i)];
    const double v = ioss(q, t);
    EXPECT_EQ(v, testing::brute_force_ioss(q, t)) << "seed " << seed;
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_EQ(v, ioss(q, flip(t)));
  }
}

TEST(Ioss, PermutationInvariance) {
  const Matrix q = testing::random_matrix(40, 2, 5);
  const auto t = testing::random_treatment(40, 6);
  std::vector<std::size_t> perm(40);
  for (std::size_t i = 0; i < 40; ++i) perm[i] = i;
  Rng rng(7);
  rng.shuffle(std::span<std::size_t>(perm));
  Matrix qp(40, 2);
  std::vector<int> tp(40);
  for (std::size_t i = 0; i < 40; ++i) {
    qp.row(static_cast<Eigen::Index>(i)) = q.row(static_cast<Eigen::Index>(perm[i]));
    tp[i] = t[perm[i]];
  }
  EXPECT_EQ(ioss(q, t), ioss(qp, tp));
}

TEST(Ioss, NondecreasingInSeparation) {
  // Arm 1 on a grid over [0, a], arm 0 on a grid over [b, 1].
  double previous = -1.0;
  for (int step = 0; step <= 10; ++step) {
    const double a = 0.5 - 0.04 * step;
    const double b = 0.5 + 0.04 * step;
    Matrix q(22, 1);
    std::vector<int> t(22);
    for (int i = 0; i < 11; ++i) {
      q(i, 0) = a * i / 10.0;
      t[static_cast<std::size_t>(i)] = 1;
      q(11 + i, 0) = b + (1.0 - b) * i / 10.0;
      t[static_cast<std::size_t>(11 + i)] = 0;
    }
    const double v = ioss(q, t);
    EXPECT_EQ(v, testing::brute_force_ioss(q, t));
    EXPECT_GE(v, previous);
    previous = v;
  }
}

TEST(Ioss, SubsampleCapIsSeeded) {
  const Matrix q = testing::random_matrix(300, 2, 8);
  const auto t = testing::random_treatment(300, 9);
  IossOptions capped{50, 1};
  EXPECT_EQ(ioss(q, t, capped), ioss(q, t, capped));
  EXPECT_EQ(ioss(q, t, IossOptions{5000, 1}), testing::brute_force_ioss(q, t));
  EXPECT_THROW(ioss(q, std::vector<int>(300, 1)), Error);
}

TEST(Diagnose, CrossFitReport) {
  const Dataset d = testing::small_dataset(160, 4, 3);
  NetworkConfig c = NetworkConfig::defaults_for(4);
  c.head_hidden = 8;
  c.max_epochs = 5;
  const FoldPlan plan = make_folds(d.size(), 2, 0.5, 2);
  const CrossFitResult fit = estimate_ate(d, plan, c, PropensityConfig{});
  const DiagnosticsReport r = diagnose(fit, plan, d.t(), 20);
  ASSERT_EQ(r.fold_ioss.size(), 2u);
  EXPECT_DOUBLE_EQ(r.ioss, 0.5 * (r.fold_ioss[0] + r.fold_ioss[1]));
  EXPECT_EQ(r.pscores.n_per_arm[0] + r.pscores.n_per_arm[1], 160u);
  const KvDocument doc = KvDocument::parse(diagnostics_report(r).serialize());
  EXPECT_EQ(doc.get("format"), "gpi-diagnostics");
  EXPECT_EQ(std::stod(*doc.get("diagnostics.ioss")), r.ioss);
  const std::string csv = histogram_csv(r.pscores);
  EXPECT_EQ(csv.rfind("bin_low,bin_high,control,treated\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 21);
}

}  // namespace
}  // namespace gpi
