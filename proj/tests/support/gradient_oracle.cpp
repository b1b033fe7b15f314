#include "gradient_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fixtures.hpp"

namespace gpi::testing {

namespace {

double loss_of(const TarNetModel& m, const Dataset& d, std::span<const std::size_t> rows, const DropoutMasks* masks) {
  if (m.config().iv_mode) return masks ? loss_late(m, d, rows, *masks) : loss_late(m, d, rows);
  return masks ? loss_ate(m, d, rows, *masks) : loss_ate(m, d, rows);
}

double relu_margin(const Eigen::RowVectorXd& pre, double current) {
  for (Eigen::Index i = 0; i < pre.size(); ++i) current = std::min(current, std::abs(pre[i]));
  return current;
}

}  // namespace

GradientCheck check_gradients(const TarNetModel& model, const Dataset& data, std::span<const std::size_t> rows,
                              const DropoutMasks* masks, double h, double tolerance) {
  const Gradients analytic = gradients(model, data, rows, masks);
  const auto grads = analytic.grad.tensors();
  TarNetModel probe = model;
  auto params = probe.weights().tensors();
  GradientCheck out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double saved = params[k][i];
      params[k][i] = saved + h;
      const double up = loss_of(probe, data, rows, masks);
      params[k][i] = saved - h;
      const double down = loss_of(probe, data, rows, masks);
      params[k][i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = grads[k][i];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      out.max_error = std::max(out.max_error, err);
      ++out.coordinates;
      if (!(err <= tolerance)) ++out.mismatches;
    }
  }
  return out;
}

double min_rectifier_margin(const TarNetModel& model, const Dataset& data, std::span<const std::size_t> rows) {
  const auto& w = model.weights();
  const auto& norm = model.normalization();
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t r : rows) {
    Eigen::RowVectorXd x = data.representations().row(static_cast<Eigen::Index>(r));
    x = (x - norm.input_mean).cwiseQuotient(norm.input_scale);
    Eigen::RowVectorXd z(w.deconfounder.w.rows());
    for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = w.deconfounder.w.row(j).dot(x) + w.deconfounder.b[j];
    margin = relu_margin(z, margin);
    const Eigen::RowVectorXd q = z.cwiseMax(0.0);
    auto head_margin = [&](const Head& head) {
      Eigen::RowVectorXd pre(head.hidden.w.rows());
      for (Eigen::Index j = 0; j < pre.size(); ++j) pre[j] = head.hidden.w.row(j).dot(q) + head.hidden.b[j];
      margin = relu_margin(pre, margin);
    };
    const auto arm = static_cast<std::size_t>(data.t()[r]);
    head_margin(w.outcome[arm]);
    if (w.perceived) head_margin((*w.perceived)[arm]);
  }
  return margin;
}

GradientInstance random_gradient_instance(std::uint64_t seed, double margin) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    const std::uint64_t s = derive_seed(seed, "gradient-instance", attempt);
    Rng rng(s);
    const bool iv = seed % 3 == 2;
    const bool dropout = seed % 3 == 1;
    NetworkConfig c;
    c.d_r = 3 + static_cast<Eigen::Index>(rng.index(4));
    c.d_q = 1 + static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(c.d_r)));
    c.head_hidden = 2 + static_cast<Eigen::Index>(rng.index(6));
    c.dropout_rate = dropout ? 0.3 : 0.0;
    c.iv_mode = iv;
    c.seed = derive_seed(s, "model");
    TarNetModel model = TarNetModel::initialize(c);
    // Non-trivial normalization so the folded affine maps are exercised too.
    auto& norm = model.normalization();
    for (Eigen::Index j = 0; j < c.d_r; ++j) {
      norm.input_mean[j] = 0.3 * rng.normal();
      norm.input_scale[j] = 0.5 + rng.uniform();
    }
    norm.outcome_shift = rng.normal();
    norm.outcome_scale = 0.5 + 2.0 * rng.uniform();
    const std::size_t n = 4 + rng.index(8);
    Dataset data = small_dataset(n, c.d_r, derive_seed(s, "data"), iv);
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i;
    if (min_rectifier_margin(model, data, rows) < margin) continue;
    std::optional<DropoutMasks> masks;
    if (dropout) {
      Rng mask_rng(derive_seed(s, "masks"));
      masks = draw_dropout_masks(model, n, mask_rng);
    }
    return GradientInstance{std::move(model), std::move(data), std::move(rows), std::move(masks)};
  }
}

}  // namespace gpi::testing
