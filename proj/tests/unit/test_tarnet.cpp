#include <gtest/gtest.h>

#include <numeric>

#include "fixtures.hpp"
#include "gpi/error.hpp"
#include "gpi/tarnet.hpp"
#include "gradient_oracle.hpp"

namespace gpi {
namespace {

NetworkConfig tiny(Eigen::Index d_r, bool iv = false) {
  NetworkConfig c;
  c.d_r = d_r;
  c.d_q = 2;
  c.head_hidden = 4;
  c.iv_mode = iv;
  c.seed = 17;
  return c;
}

std::vector<std::size_t> all_rows(const Dataset& d) {
  std::vector<std::size_t> rows(d.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

Dataset one_row(double y, int t, std::optional<int> t_tilde = std::nullopt) {
  // Two rows so both arms exist; tests score only the first.
  Vector ys(2);
  ys << y, 0.0;
  std::optional<std::vector<int>> tt;
  if (t_tilde) tt = std::vector<int>{*t_tilde, 0};
  return Dataset::from_columns({"a", "b"}, ys, {t, 1 - t}, tt, Matrix::Ones(2, 3));
}

TEST(NetworkConfig, DefaultsAndValidation) {
  const NetworkConfig c = NetworkConfig::defaults_for(64);
  EXPECT_EQ(c.d_q, 32);
  EXPECT_EQ(c.head_hidden, 500);
  EXPECT_DOUBLE_EQ(c.dropout_rate, 0.15);
  EXPECT_DOUBLE_EQ(c.learning_rate, 1e-3);
  EXPECT_NO_THROW(c.validate());
  NetworkConfig bad = c;
  bad.d_q = 65;
  EXPECT_THROW(bad.validate(), Error);
  bad = c;
  bad.dropout_rate = 1.0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Forward, ZeroWeightsGiveZeroQAndBiasOutputs) {
  TarNetModel m = TarNetModel::zeros(tiny(3));
  m.weights().outcome[0].output.b[0] = 1.5;
  m.weights().outcome[1].output.b[0] = -2.0;
  const Prediction p = forward(m, Eigen::RowVectorXd::Constant(3, 7.0));
  EXPECT_TRUE(p.q.isZero());
  EXPECT_DOUBLE_EQ(p.mu0, 1.5);
  EXPECT_DOUBLE_EQ(p.mu1, -2.0);
  EXPECT_FALSE(p.m0.has_value());
}

TEST(Forward, EvalModeIsPureAndNotScaleInvariant) {
  const TarNetModel m = TarNetModel::initialize(tiny(3));
  const Eigen::RowVectorXd r = testing::random_matrix(1, 3, 4).row(0);
  const Prediction a = forward(m, r);
  const Prediction b = forward(m, r);
  EXPECT_EQ(a.q, b.q);
  EXPECT_EQ(a.mu0, b.mu0);
  EXPECT_EQ(a.mu1, b.mu1);
  const Prediction c = forward(m, Eigen::RowVectorXd(2.0 * r));
  EXPECT_TRUE(a.mu0 != c.mu0 || a.mu1 != c.mu1);
}

TEST(Forward, ShapeMismatchAndBatchAgreement) {
  const TarNetModel m = TarNetModel::initialize(tiny(3, true));
  EXPECT_THROW(forward(m, Eigen::RowVectorXd::Zero(4)), Error);
  const Matrix r = testing::random_matrix(5, 3, 8);
  const BatchPrediction batch = predict(m, r);
  for (Eigen::Index i = 0; i < 5; ++i) {
    const Prediction p = forward(m, r.row(i));
    EXPECT_NEAR(batch.mu0[i], p.mu0, 1e-12);
    EXPECT_NEAR(batch.mu1[i], p.mu1, 1e-12);
    EXPECT_NEAR(batch.m1[i], *p.m1, 1e-12);
    EXPECT_GT(*p.m0, 0.0);
    EXPECT_LT(*p.m0, 1.0);
  }
}

TEST(Forward, TrainModeDrawsDropout) {
  NetworkConfig c = tiny(3);
  c.dropout_rate = 0.5;
  c.head_hidden = 32;
  const TarNetModel m = TarNetModel::initialize(c);
  const Eigen::RowVectorXd r = testing::random_matrix(1, 3, 5).row(0);
  Rng r1(1), r2(1), r3(2);
  EXPECT_EQ(forward(m, r, r1).mu1, forward(m, r, r2).mu1);
  Rng r4(1);
  EXPECT_NE(forward(m, r, r4).mu1, forward(m, r, r3).mu1);
}

TEST(LossAte, HandValues) {
  const TarNetModel zero = TarNetModel::zeros(tiny(3));
  const Dataset d = one_row(2.0, 1);
  const std::vector<std::size_t> first{0};
  EXPECT_DOUBLE_EQ(loss_ate(zero, d, first), 4.0);

  Vector ys(2);
  ys << 1.0, 3.0;
  const Dataset two = Dataset::from_columns({"a", "b"}, ys, {0, 1}, std::nullopt, Matrix::Ones(2, 3));
  EXPECT_DOUBLE_EQ(loss_ate(zero, two, all_rows(two)), 5.0);
}

TEST(LossAte, PerfectFitIsZero) {
  TarNetModel m = TarNetModel::zeros(tiny(3));
  m.weights().outcome[0].output.b[0] = 4.0;
  m.weights().outcome[1].output.b[0] = -1.0;
  Vector ys(3);
  ys << 4.0, -1.0, 4.0;
  const Dataset d = Dataset::from_columns({"a", "b", "c"}, ys, {0, 1, 0}, std::nullopt, Matrix::Zero(3, 3));
  EXPECT_DOUBLE_EQ(loss_ate(m, d, all_rows(d)), 0.0);
  const Gradients g = gradients(m, d, all_rows(d));
  for (auto s : g.grad.tensors()) {
    for (double v : s) EXPECT_EQ(v, 0.0);
  }
}

TEST(LossLate, HandValuesAndContracts) {
  const TarNetModel zero = TarNetModel::zeros(tiny(3, true));
  const Dataset d = one_row(2.0, 1, 1);
  const std::vector<std::size_t> first{0};
  // Outcome residual 2 and perceived residual sigmoid(0) - 1 = -0.5.
  EXPECT_DOUBLE_EQ(loss_late(zero, d, first), 4.25);

  EXPECT_THROW(loss_late(TarNetModel::zeros(tiny(3)), d, first), Error);
  try {
    loss_late(zero, one_row(2.0, 1), first);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Validation);
  }
}

TEST(LossLate, PerfectFitIsZero) {
  TarNetModel m = TarNetModel::zeros(tiny(3, true));
  m.weights().outcome[1].output.b[0] = 2.0;
  // A large logit stands in for a perceived probability of one.
  (*m.weights().perceived)[1].output.b[0] = 60.0;
  (*m.weights().perceived)[0].output.b[0] = -60.0;
  Vector ys(2);
  ys << 2.0, 0.0;
  const Dataset d = Dataset::from_columns({"a", "b"}, ys, {1, 0}, std::vector<int>{1, 0}, Matrix::Zero(2, 3));
  EXPECT_NEAR(loss_late(m, d, all_rows(d)), 0.0, 1e-40);
}

class GradientOracle : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(GradientOracle, MatchesCentralDifferences) {
  const auto inst = testing::random_gradient_instance(GetParam());
  const auto check = testing::check_gradients(inst.model, inst.data, inst.rows, inst.masks ? &*inst.masks : nullptr);
  EXPECT_EQ(check.mismatches, 0u) << "max error " << check.max_error;
  EXPECT_EQ(check.coordinates, inst.model.weights().parameter_count());
}

INSTANTIATE_TEST_SUITE_P(Seeds, GradientOracle, ::testing::Range<std::uint64_t>(0, 6));

TEST(Gradients, DuplicatedBatchGivesSameGradient) {
  const auto inst = testing::random_gradient_instance(1000);
  std::vector<std::size_t> doubled;
  for (auto r : inst.rows) {
    doubled.push_back(r);
    doubled.push_back(r);
  }
  const Gradients a = gradients(inst.model, inst.data, inst.rows);
  const Gradients b = gradients(inst.model, inst.data, doubled);
  EXPECT_NEAR(a.loss, b.loss, 1e-12);
  const auto ta = a.grad.tensors();
  const auto tb = b.grad.tensors();
  for (std::size_t k = 0; k < ta.size(); ++k) {
    for (std::size_t i = 0; i < ta[k].size(); ++i) EXPECT_NEAR(ta[k][i], tb[k][i], 1e-12);
  }
}

TEST(Gradients, ArmRouting) {
  const Dataset d = testing::small_dataset(20, 4, 9);
  NetworkConfig c = tiny(4);
  c.head_hidden = 8;
  const TarNetModel m = TarNetModel::initialize(c);
  std::vector<std::size_t> controls, treated;
  for (std::size_t i = 0; i < d.size(); ++i) (d.t()[i] ? treated : controls).push_back(i);

  // Perturbing theta_1 leaves the control-only loss unchanged and vice versa.
  TarNetModel shifted = m;
  for (auto* layer : {&shifted.weights().outcome[1].hidden, &shifted.weights().outcome[1].output}) {
    layer->w.array() += 0.3;
    layer->b.array() -= 0.2;
  }
  EXPECT_EQ(loss_ate(m, d, controls), loss_ate(shifted, d, controls));
  EXPECT_NE(loss_ate(m, d, treated), loss_ate(shifted, d, treated));

  const Gradients g = gradients(m, d, controls);
  EXPECT_TRUE(g.grad.outcome[1].hidden.w.isZero());
  EXPECT_TRUE(g.grad.outcome[1].output.b.isZero());
  const Gradients g1 = gradients(m, d, treated);
  EXPECT_TRUE(g1.grad.outcome[0].hidden.w.isZero());
}

TEST(Train, DeterministicAndReturnsBestSnapshot) {
  const Dataset d = testing::small_dataset(120, 4, 2);
  NetworkConfig c = NetworkConfig::defaults_for(4);
  c.head_hidden = 16;
  c.max_epochs = 40;
  c.seed = 5;
  const auto rows = all_rows(d);
  const TarNetModel a = train(d, rows, c);
  const TarNetModel b = train(d, rows, c);
  EXPECT_TRUE(a == b);
  const auto& log = a.train_log();
  ASSERT_FALSE(log.epochs.empty());
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : log.epochs) best = std::min(best, e.val_loss);
  EXPECT_EQ(log.epochs[log.best_epoch - 1].val_loss, best);
  c.seed = 6;
  EXPECT_FALSE(a == train(d, rows, c));
}

TEST(Train, RecoversLowNoiseSignal) {
  // y = 3t + r0 + r1 + N(0, 0.01): validation MSE within 3x the noise variance.
  const std::size_t n = 600;
  Matrix r = testing::random_matrix(static_cast<Eigen::Index>(n), 4, 31);
  std::vector<int> t = testing::random_treatment(n, 32);
  Rng noise(33);
  Vector y(static_cast<Eigen::Index>(n));
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) {
    const auto e = static_cast<Eigen::Index>(i);
    y[e] = 3.0 * t[i] + r(e, 0) + r(e, 1) + 0.1 * noise.normal();
    ids.push_back(std::to_string(i));
  }
  const Dataset d = Dataset::from_columns(ids, y, t, std::nullopt, r);
  NetworkConfig c = NetworkConfig::defaults_for(4);
  c.d_q = 4;
  c.head_hidden = 64;
  c.dropout_rate = 0.0;
  c.learning_rate = 3e-3;
  c.max_epochs = 400;
  c.patience = 40;
  c.seed = 1;
  const TarNetModel m = train(d, all_rows(d), c);
  const double best = m.train_log().epochs[m.train_log().best_epoch - 1].val_loss;
  EXPECT_LT(best, 3.0 * 0.01) << "best validation MSE " << best;
}

TEST(Train, ConstantOutcomeIsFitAtLeastAsWellAsItsVariance) {
  Dataset base = testing::small_dataset(80, 3, 4);
  const Dataset d = Dataset::from_columns(base.ids(), Vector::Constant(80, 2.5), base.t(), std::nullopt,
                                          base.representations());
  NetworkConfig c = NetworkConfig::defaults_for(3);
  c.head_hidden = 8;
  c.max_epochs = 20;
  const TarNetModel m = train(d, all_rows(d), c);
  const auto& log = m.train_log();
  EXPECT_LE(log.epochs[log.best_epoch - 1].val_loss, 1e-6);
}

TEST(Train, Contracts) {
  const Dataset d = testing::small_dataset(60, 3, 4);
  NetworkConfig c = NetworkConfig::defaults_for(3);
  c.max_epochs = 2;
  std::vector<std::size_t> treated;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.t()[i] == 1) treated.push_back(i);
  }
  try {
    train(d, treated, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateData);
  }
  c.d_r = 4;
  EXPECT_THROW(train(d, all_rows(d), c), Error);
  c.d_r = 3;
  c.iv_mode = true;
  EXPECT_THROW(train(d, all_rows(d), c), Error);
}

TEST(Train, FlagsAStalledOptimization) {
  const Dataset d = testing::small_dataset(80, 3, 4);
  NetworkConfig c = NetworkConfig::defaults_for(3);
  c.head_hidden = 8;
  c.learning_rate = 1e-12;
  c.max_epochs = 12;
  c.dropout_rate = 0.0;
  const TarNetModel m = train(d, all_rows(d), c);
  EXPECT_FALSE(m.train_log().warnings.empty());
}

TEST(ModelFile, SaveLoadRoundTrip) {
  const auto dir = testing::scratch_dir("model");
  const Dataset d = testing::small_dataset(60, 3, 4, true);
  NetworkConfig c = NetworkConfig::defaults_for(3);
  c.head_hidden = 8;
  c.max_epochs = 3;
  c.iv_mode = true;
  const TarNetModel m = train(d, all_rows(d), c);
  m.save(dir / "m.gpim");
  const TarNetModel back = TarNetModel::load(dir / "m.gpim");
  EXPECT_TRUE(back == m);
  const Prediction p = forward(back, d.representations().row(3));
  const Prediction q = forward(m, d.representations().row(3));
  EXPECT_EQ(p.mu1, q.mu1);
  EXPECT_EQ(*p.m0, *q.m0);
}

}  // namespace
}  // namespace gpi
