#include "gpi/tarnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>

#include "gpi/error.hpp"
#include "gpi/kv_report.hpp"

namespace gpi {

namespace {

enum class Target { Outcome, Perceived };

/// Normalized inputs and targets for a set of rows.
struct BatchData {
  Matrix x;
  Vector y;
  std::vector<int> t;
  Vector t_tilde;  // empty unless needed
};

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_width(const TarNetModel& model, Eigen::Index cols) {
  if (cols != model.config().d_r) {
    fail(ErrorKind::Shape, "representation width " + std::to_string(cols) + " does not match model d_R " +
                               std::to_string(model.config().d_r));
  }
}

Eigen::RowVectorXd normalize_row(const Normalization& norm, const Eigen::RowVectorXd& r) {
  return (r - norm.input_mean).cwiseQuotient(norm.input_scale);
}

BatchData gather(const TarNetModel& model, const Dataset& data, std::span<const std::size_t> rows,
                 bool need_t_tilde) {
  check_width(model, data.d_r());
  if (need_t_tilde && !data.has_perceived()) {
    fail(ErrorKind::Validation, "perceived-treatment loss requires t_tilde on every observation");
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  BatchData b;
  b.x.resize(n, data.d_r());
  b.y.resize(n);
  b.t.resize(rows.size());
  if (need_t_tilde) b.t_tilde.resize(n);
  const auto& norm = model.normalization();
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = rows[static_cast<std::size_t>(i)];
    if (row >= data.size()) fail(ErrorKind::Shape, "row index out of range");
    b.x.row(i) = (data.representations().row(static_cast<Eigen::Index>(row)) - norm.input_mean)
                     .cwiseQuotient(norm.input_scale);
    b.y[i] = data.y()[static_cast<Eigen::Index>(row)];
    b.t[static_cast<std::size_t>(i)] = data.t()[row];
    if (need_t_tilde) b.t_tilde[i] = data.t_tilde()[row];
  }
  return b;
}

BatchData slice(const BatchData& src, std::span<const std::size_t> rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  BatchData b;
  b.x.resize(n, src.x.cols());
  b.y.resize(n);
  b.t.resize(rows.size());
  if (src.t_tilde.size() > 0) b.t_tilde.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]);
    b.x.row(i) = src.x.row(r);
    b.y[i] = src.y[r];
    b.t[static_cast<std::size_t>(i)] = src.t[static_cast<std::size_t>(r)];
    if (src.t_tilde.size() > 0) b.t_tilde[i] = src.t_tilde[r];
  }
  return b;
}

Matrix gather_rows(const Matrix& m, std::span<const Eigen::Index> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

/// Forward (and optionally backward) through one head for the rows of one
/// arm. Returns the summed squared residual. Accumulates into `grad` and
/// `dq` when `grad` is non-null; `scale` is d(loss)/d(sum of squares).
double head_pass(const Head& head, const Matrix& qa, const Matrix* mask, Target target,
                 const Vector& goal, const Normalization& norm, double scale, Head* grad, Matrix* dqa) {
  Matrix pre = (qa * head.hidden.w.transpose()).rowwise() + head.hidden.b;
  Matrix h = pre.cwiseMax(0.0);
  if (mask) h = h.cwiseProduct(*mask);
  Vector out = (h * head.output.w.transpose()).col(0).array() + head.output.b[0];

  const auto n = out.size();
  Vector d_out(n);
  double sum_sq = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (target == Target::Outcome) {
      const double pred = norm.outcome_shift + norm.outcome_scale * out[i];
      const double resid = pred - goal[i];
      sum_sq += resid * resid;
      d_out[i] = 2.0 * resid * norm.outcome_scale * scale;
    } else {
      const double p = sigmoid(out[i]);
      const double resid = p - goal[i];
      sum_sq += resid * resid;
      d_out[i] = 2.0 * resid * p * (1.0 - p) * scale;
    }
  }
  if (!grad) return sum_sq;

  grad->output.w.noalias() += d_out.transpose() * h;
  grad->output.b[0] += d_out.sum();
  Matrix dh = d_out * head.output.w;  // n x H
  if (mask) dh = dh.cwiseProduct(*mask);
  dh = (pre.array() > 0.0).select(dh, 0.0);
  grad->hidden.w.noalias() += dh.transpose() * qa;
  grad->hidden.b += dh.colwise().sum();
  dqa->noalias() += dh * head.hidden.w;
  return sum_sq;
}

/// Batch loss (mean over rows) and optional gradient.
double evaluate(const TarNetModel& model, const BatchData& b, const DropoutMasks* masks,
                bool with_perceived, TarNetWeights* grad) {
  const auto& w = model.weights();
  const auto n = b.x.rows();
  if (n == 0) fail(ErrorKind::Validation, "batch must be non-empty");
  if (masks && (masks->q.rows() != n || masks->outcome_hidden.rows() != n ||
                (with_perceived && masks->perceived_hidden.rows() != n))) {
    fail(ErrorKind::Shape, "dropout masks do not match batch size");
  }
  const double scale = 1.0 / static_cast<double>(n);

  Matrix z = (b.x * w.deconfounder.w.transpose()).rowwise() + w.deconfounder.b;
  Matrix q = z.cwiseMax(0.0);
  if (masks) q = q.cwiseProduct(masks->q);
  Matrix dq;
  if (grad) dq = Matrix::Zero(n, q.cols());

  double total = 0.0;
  for (int arm = 0; arm < 2; ++arm) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (b.t[static_cast<std::size_t>(i)] == arm) idx.push_back(i);
    }
    if (idx.empty()) continue;
    const Matrix qa = gather_rows(q, idx);
    Matrix dqa;
    if (grad) dqa = Matrix::Zero(qa.rows(), qa.cols());

    Vector y(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) y[static_cast<Eigen::Index>(i)] = b.y[idx[i]];
    Matrix mask_rows;
    if (masks) mask_rows = gather_rows(masks->outcome_hidden, idx);
    total += head_pass(w.outcome[static_cast<std::size_t>(arm)], qa, masks ? &mask_rows : nullptr,
                       Target::Outcome, y, model.normalization(), scale,
                       grad ? &grad->outcome[static_cast<std::size_t>(arm)] : nullptr, &dqa);

    if (with_perceived) {
      Vector tt(static_cast<Eigen::Index>(idx.size()));
      for (std::size_t i = 0; i < idx.size(); ++i) tt[static_cast<Eigen::Index>(i)] = b.t_tilde[idx[i]];
      Matrix pmask;
      if (masks) pmask = gather_rows(masks->perceived_hidden, idx);
      total += head_pass((*w.perceived)[static_cast<std::size_t>(arm)], qa, masks ? &pmask : nullptr,
                         Target::Perceived, tt, model.normalization(), scale,
                         grad ? &(*grad->perceived)[static_cast<std::size_t>(arm)] : nullptr, &dqa);
    }
    if (grad) {
      for (std::size_t i = 0; i < idx.size(); ++i) dq.row(idx[i]) += dqa.row(static_cast<Eigen::Index>(i));
    }
  }

  if (grad) {
    if (masks) dq = dq.cwiseProduct(masks->q);
    Matrix dz = (z.array() > 0.0).select(dq, 0.0);
    grad->deconfounder.w.noalias() += dz.transpose() * b.x;
    grad->deconfounder.b += dz.colwise().sum();
  }
  return total * scale;
}

DenseLayer make_layer(Eigen::Index out, Eigen::Index in) {
  return {Matrix::Zero(out, in), Eigen::RowVectorXd::Zero(out)};
}

Head make_head(Eigen::Index in, Eigen::Index hidden) {
  return {make_layer(hidden, in), make_layer(1, hidden)};
}

void init_layer(DenseLayer& layer, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(layer.w.cols()));
  for (Eigen::Index i = 0; i < layer.w.size(); ++i) layer.w.data()[i] = bound * (2.0 * rng.uniform() - 1.0);
  for (Eigen::Index i = 0; i < layer.b.size(); ++i) layer.b[i] = bound * (2.0 * rng.uniform() - 1.0);
}

// Little-endian binary helpers for checkpoints.
void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}
void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  Reader(const std::string& bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string raw(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) fail(ErrorKind::Format, name_ + ": truncated checkpoint");
  }
  const std::string& bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

constexpr std::string_view kCheckpointMagic{"GPIM1\0", 6};
constexpr std::uint64_t kCheckpointVersion = 1;

}  // namespace

NetworkConfig NetworkConfig::defaults_for(Eigen::Index d_r) {
  NetworkConfig c;
  c.d_r = d_r;
  c.d_q = std::max<Eigen::Index>(1, d_r / 2);
  return c;
}

void NetworkConfig::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorKind::Validation, "network config: " + m); };
  if (d_r < 1) bad("d_R must be positive");
  const auto dq = resolved_d_q();
  if (dq < 1 || dq > d_r) bad("d_Q must satisfy 1 <= d_Q <= d_R");
  if (head_hidden < 1) bad("head_hidden must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) bad("dropout_rate must lie in [0,1)");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) bad("learning_rate must be positive");
  if (batch_size < 1) bad("batch_size must be positive");
  if (max_epochs < 1) bad("max_epochs must be positive");
  if (patience < 1) bad("patience must be positive");
  if (!(val_fraction > 0.0 && val_fraction < 0.5)) bad("val_fraction must lie in (0, 0.5)");
}

std::vector<std::span<double>> TarNetWeights::tensors() {
  std::vector<std::span<double>> out;
  auto add = [&](DenseLayer& l) {
    out.emplace_back(l.w.data(), static_cast<std::size_t>(l.w.size()));
    out.emplace_back(l.b.data(), static_cast<std::size_t>(l.b.size()));
  };
  add(deconfounder);
  for (auto& h : outcome) {
    add(h.hidden);
    add(h.output);
  }
  if (perceived) {
    for (auto& h : *perceived) {
      add(h.hidden);
      add(h.output);
    }
  }
  return out;
}

std::vector<std::span<const double>> TarNetWeights::tensors() const {
  auto spans = const_cast<TarNetWeights*>(this)->tensors();
  return {spans.begin(), spans.end()};
}

std::size_t TarNetWeights::parameter_count() const {
  std::size_t n = 0;
  for (auto s : tensors()) n += s.size();
  return n;
}

TarNetWeights TarNetWeights::zeros_like() const {
  TarNetWeights z = *this;
  for (auto s : z.tensors()) std::fill(s.begin(), s.end(), 0.0);
  return z;
}

bool TarNetWeights::all_finite() const {
  for (auto s : tensors()) {
    for (double v : s) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

TarNetModel TarNetModel::zeros(const NetworkConfig& config) {
  config.validate();
  TarNetModel m;
  m.config_ = config;
  const auto dq = config.resolved_d_q();
  m.config_.d_q = dq;
  m.weights_.deconfounder = make_layer(dq, config.d_r);
  m.weights_.outcome = {make_head(dq, config.head_hidden), make_head(dq, config.head_hidden)};
  if (config.iv_mode) {
    m.weights_.perceived = std::array<Head, 2>{make_head(dq, config.head_hidden), make_head(dq, config.head_hidden)};
  }
  m.norm_.input_mean = Eigen::RowVectorXd::Zero(config.d_r);
  m.norm_.input_scale = Eigen::RowVectorXd::Ones(config.d_r);
  return m;
}

TarNetModel TarNetModel::initialize(const NetworkConfig& config) {
  TarNetModel m = zeros(config);
  Rng rng(derive_seed(config.seed, "tarnet-init"));
  init_layer(m.weights_.deconfounder, rng);
  for (auto& h : m.weights_.outcome) {
    init_layer(h.hidden, rng);
    init_layer(h.output, rng);
  }
  if (m.weights_.perceived) {
    for (auto& h : *m.weights_.perceived) {
      init_layer(h.hidden, rng);
      init_layer(h.output, rng);
    }
  }
  return m;
}

bool operator==(const TarNetModel& a, const TarNetModel& b) {
  if (!(a.config_ == b.config_)) return false;
  if (a.norm_.input_mean != b.norm_.input_mean || a.norm_.input_scale != b.norm_.input_scale ||
      a.norm_.outcome_shift != b.norm_.outcome_shift || a.norm_.outcome_scale != b.norm_.outcome_scale) {
    return false;
  }
  const auto ta = a.weights_.tensors();
  const auto tb = b.weights_.tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (!std::equal(ta[i].begin(), ta[i].end(), tb[i].begin(), tb[i].end())) return false;
  }
  return true;
}

void TarNetModel::save(const std::filesystem::path& path) const {
  std::string out(kCheckpointMagic);
  put_u64(out, kCheckpointVersion);
  put_u64(out, static_cast<std::uint64_t>(config_.d_r));
  put_u64(out, static_cast<std::uint64_t>(config_.d_q));
  put_u64(out, static_cast<std::uint64_t>(config_.head_hidden));
  put_f64(out, config_.dropout_rate);
  put_f64(out, config_.learning_rate);
  put_u64(out, config_.batch_size);
  put_u64(out, config_.max_epochs);
  put_u64(out, config_.patience);
  put_f64(out, config_.val_fraction);
  put_u64(out, config_.seed);
  put_u64(out, config_.iv_mode ? 1 : 0);
  for (Eigen::Index i = 0; i < config_.d_r; ++i) put_f64(out, norm_.input_mean[i]);
  for (Eigen::Index i = 0; i < config_.d_r; ++i) put_f64(out, norm_.input_scale[i]);
  put_f64(out, norm_.outcome_shift);
  put_f64(out, norm_.outcome_scale);
  const auto tensors = weights_.tensors();
  put_u64(out, tensors.size());
  for (auto t : tensors) {
    put_u64(out, t.size());
    for (double v : t) put_f64(out, v);
  }
  write_file_atomic(path, out);
}

TarNetModel TarNetModel::load(const std::filesystem::path& path) {
  const std::string bytes = read_text_file(path);
  Reader in(bytes, path.string());
  if (in.raw(kCheckpointMagic.size()) != kCheckpointMagic) fail(ErrorKind::Format, path.string() + ": bad checkpoint magic");
  if (in.u64() != kCheckpointVersion) fail(ErrorKind::Format, path.string() + ": unsupported checkpoint version");
  NetworkConfig c;
  c.d_r = static_cast<Eigen::Index>(in.u64());
  c.d_q = static_cast<Eigen::Index>(in.u64());
  c.head_hidden = static_cast<Eigen::Index>(in.u64());
  c.dropout_rate = in.f64();
  c.learning_rate = in.f64();
  c.batch_size = in.u64();
  c.max_epochs = in.u64();
  c.patience = in.u64();
  c.val_fraction = in.f64();
  c.seed = in.u64();
  c.iv_mode = in.u64() != 0;
  if (c.d_r < 1 || c.d_r > (1 << 24) || c.head_hidden > (1 << 24) || c.d_q > c.d_r) {
    fail(ErrorKind::Format, path.string() + ": implausible checkpoint dimensions");
  }
  TarNetModel m = zeros(c);
  for (Eigen::Index i = 0; i < c.d_r; ++i) m.norm_.input_mean[i] = in.f64();
  for (Eigen::Index i = 0; i < c.d_r; ++i) m.norm_.input_scale[i] = in.f64();
  m.norm_.outcome_shift = in.f64();
  m.norm_.outcome_scale = in.f64();
  auto tensors = m.weights_.tensors();
  if (in.u64() != tensors.size()) fail(ErrorKind::Format, path.string() + ": tensor count mismatch");
  for (auto t : tensors) {
    if (in.u64() != t.size()) fail(ErrorKind::Format, path.string() + ": tensor size mismatch");
    for (double& v : t) v = in.f64();
  }
  if (!in.done()) fail(ErrorKind::Format, path.string() + ": trailing bytes in checkpoint");
  return m;
}

BatchPrediction predict(const TarNetModel& model, const Matrix& r) {
  check_width(model, r.cols());
  const auto& w = model.weights();
  const auto& norm = model.normalization();
  Matrix x = (r.rowwise() - norm.input_mean).array().rowwise() / norm.input_scale.array();
  BatchPrediction p;
  p.q = ((x * w.deconfounder.w.transpose()).rowwise() + w.deconfounder.b).cwiseMax(0.0);
  auto head_out = [&](const Head& h) -> Vector {
    Matrix hid = ((p.q * h.hidden.w.transpose()).rowwise() + h.hidden.b).cwiseMax(0.0);
    return (hid * h.output.w.transpose()).col(0).array() + h.output.b[0];
  };
  p.mu0 = (head_out(w.outcome[0]).array() * norm.outcome_scale + norm.outcome_shift).matrix();
  p.mu1 = (head_out(w.outcome[1]).array() * norm.outcome_scale + norm.outcome_shift).matrix();
  if (w.perceived) {
    p.m0 = head_out((*w.perceived)[0]).unaryExpr([](double v) { return sigmoid(v); });
    p.m1 = head_out((*w.perceived)[1]).unaryExpr([](double v) { return sigmoid(v); });
  }
  return p;
}

namespace {

Prediction forward_impl(const TarNetModel& model, const Eigen::RowVectorXd& r, const DropoutMasks* masks) {
  check_width(model, r.size());
  const auto& w = model.weights();
  const Eigen::RowVectorXd x = normalize_row(model.normalization(), r);
  Eigen::RowVectorXd q = ((x * w.deconfounder.w.transpose()) + w.deconfounder.b).cwiseMax(0.0);
  if (masks) q = q.cwiseProduct(masks->q.row(0));
  auto head_out = [&](const Head& h, const Matrix* mask) {
    Eigen::RowVectorXd hid = ((q * h.hidden.w.transpose()) + h.hidden.b).cwiseMax(0.0);
    if (mask) hid = hid.cwiseProduct(mask->row(0));
    return hid.dot(h.output.w.row(0)) + h.output.b[0];
  };
  const auto& norm = model.normalization();
  Prediction p;
  p.q = q.transpose();
  const Matrix* om = masks ? &masks->outcome_hidden : nullptr;
  p.mu0 = norm.outcome_shift + norm.outcome_scale * head_out(w.outcome[0], om);
  p.mu1 = norm.outcome_shift + norm.outcome_scale * head_out(w.outcome[1], om);
  if (w.perceived) {
    const Matrix* pm = masks ? &masks->perceived_hidden : nullptr;
    p.m0 = sigmoid(head_out((*w.perceived)[0], pm));
    p.m1 = sigmoid(head_out((*w.perceived)[1], pm));
  }
  return p;
}

}  // namespace

Prediction forward(const TarNetModel& model, const Eigen::RowVectorXd& r) {
  return forward_impl(model, r, nullptr);
}

Prediction forward(const TarNetModel& model, const Eigen::RowVectorXd& r, Rng& dropout_rng) {
  const auto masks = draw_dropout_masks(model, 1, dropout_rng);
  return forward_impl(model, r, &masks);
}

DropoutMasks draw_dropout_masks(const TarNetModel& model, std::size_t rows, Rng& rng) {
  const auto& c = model.config();
  const double p = c.dropout_rate;
  const double keep = 1.0 / (1.0 - p);
  const auto n = static_cast<Eigen::Index>(rows);
  auto draw = [&](Eigen::Index cols) {
    Matrix m(n, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = (p > 0.0 && rng.uniform() < p) ? 0.0 : keep;
    return m;
  };
  DropoutMasks masks;
  masks.q = draw(c.resolved_d_q());
  masks.outcome_hidden = draw(c.head_hidden);
  if (c.iv_mode) masks.perceived_hidden = draw(c.head_hidden);
  return masks;
}

double loss_ate(const TarNetModel& model, const Dataset& data, std::span<const std::size_t> rows) {
  return evaluate(model, gather(model, data, rows, false), nullptr, false, nullptr);
}

double loss_ate(const TarNetModel& model, const Dataset& data, std::span<const std::size_t> rows,
                const DropoutMasks& masks) {
  return evaluate(model, gather(model, data, rows, false), &masks, false, nullptr);
}

namespace {
void require_iv(const TarNetModel& model) {
  if (!model.config().iv_mode) fail(ErrorKind::Validation, "loss_late requires a model built with iv_mode");
}
}  // namespace

double loss_late(const TarNetModel& model, const Dataset& data, std::span<const std::size_t> rows) {
  require_iv(model);
  return evaluate(model, gather(model, data, rows, true), nullptr, true, nullptr);
}

double loss_late(const TarNetModel& model, const Dataset& data, std::span<const std::size_t> rows,
                 const DropoutMasks& masks) {
  require_iv(model);
  return evaluate(model, gather(model, data, rows, true), &masks, true, nullptr);
}

Gradients gradients(const TarNetModel& model, const Dataset& data, std::span<const std::size_t> rows,
                    const DropoutMasks* masks) {
  const bool iv = model.config().iv_mode;
  Gradients g;
  g.grad = model.weights().zeros_like();
  g.loss = evaluate(model, gather(model, data, rows, iv), masks, iv, &g.grad);
  return g;
}

namespace {

struct Adam {
  explicit Adam(const TarNetWeights& w, double lr) : m(w.zeros_like()), v(w.zeros_like()), lr(lr) {}

  void step(TarNetWeights& w, TarNetWeights& g) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    auto ws = w.tensors();
    auto gs = g.tensors();
    auto ms = m.tensors();
    auto vs = v.tensors();
    for (std::size_t k = 0; k < ws.size(); ++k) {
      for (std::size_t i = 0; i < ws[k].size(); ++i) {
        const double gi = gs[k][i];
        ms[k][i] = beta1 * ms[k][i] + (1.0 - beta1) * gi;
        vs[k][i] = beta2 * vs[k][i] + (1.0 - beta2) * gi * gi;
        ws[k][i] -= lr * (ms[k][i] / c1) / (std::sqrt(vs[k][i] / c2) + eps);
      }
    }
  }

  TarNetWeights m, v;
  double lr;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::uint64_t t = 0;
};

// Relative decrease of the training loss over the first epochs below which
// the optimization is reported as stalled.
constexpr double kStallTolerance = 1e-6;

Normalization fit_normalization(const Dataset& data, std::span<const std::size_t> rows) {
  const auto d = data.d_r();
  const double n = static_cast<double>(rows.size());
  Normalization norm;
  norm.input_mean = Eigen::RowVectorXd::Zero(d);
  Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(d);
  double ysum = 0.0;
  for (auto r : rows) {
    norm.input_mean += data.representations().row(static_cast<Eigen::Index>(r));
    ysum += data.y()[static_cast<Eigen::Index>(r)];
  }
  norm.input_mean /= n;
  const double ymean = ysum / n;
  double yss = 0.0;
  for (auto r : rows) {
    sq += (data.representations().row(static_cast<Eigen::Index>(r)) - norm.input_mean).array().square().matrix();
    const double dy = data.y()[static_cast<Eigen::Index>(r)] - ymean;
    yss += dy * dy;
  }
  norm.input_scale = (sq / n).cwiseSqrt().unaryExpr([](double s) { return s > 1e-12 ? s : 1.0; });
  const double ysd = std::sqrt(yss / n);
  norm.outcome_shift = ymean;
  // A constant outcome is predicted exactly by the shift alone.
  norm.outcome_scale = ysd > 1e-12 ? ysd : 0.0;
  return norm;
}

}  // namespace

TarNetModel train(const Dataset& data, std::span<const std::size_t> rows, const NetworkConfig& config) {
  config.validate();
  if (config.d_r != data.d_r()) {
    fail(ErrorKind::Shape, "network d_R " + std::to_string(config.d_r) + " does not match data width " +
                               std::to_string(data.d_r()));
  }
  if (config.iv_mode && !data.has_perceived()) {
    fail(ErrorKind::Validation, "iv_mode training requires t_tilde on every observation");
  }
  std::array<std::vector<std::size_t>, 2> by_arm;
  for (auto r : rows) {
    if (r >= data.size()) fail(ErrorKind::Shape, "row index out of range");
    by_arm[static_cast<std::size_t>(data.t()[r])].push_back(r);
  }
  if (by_arm[0].empty() || by_arm[1].empty()) {
    fail(ErrorKind::DegenerateData, "training slice must contain both treatment arms");
  }
  if (rows.size() < config.batch_size) {
    fail(ErrorKind::InsufficientData, "training slice has " + std::to_string(rows.size()) +
                                          " rows, fewer than batch_size " + std::to_string(config.batch_size));
  }

  // Arm-stratified validation carve-out.
  Rng split_rng(derive_seed(config.seed, "tarnet-val-split"));
  std::vector<std::size_t> train_rows, val_rows;
  for (auto& arm : by_arm) {
    split_rng.shuffle(std::span<std::size_t>(arm));
    auto n_val = static_cast<std::size_t>(std::llround(config.val_fraction * static_cast<double>(arm.size())));
    n_val = std::min(n_val, arm.size() - 1);
    val_rows.insert(val_rows.end(), arm.begin(), arm.begin() + static_cast<std::ptrdiff_t>(n_val));
    train_rows.insert(train_rows.end(), arm.begin() + static_cast<std::ptrdiff_t>(n_val), arm.end());
  }
  if (val_rows.empty()) {
    val_rows.push_back(train_rows.back());
    train_rows.pop_back();
  }

  TarNetModel model = TarNetModel::initialize(config);
  model.normalization() = fit_normalization(data, train_rows);
  const bool iv = config.iv_mode;
  const BatchData train_data = gather(model, data, train_rows, iv);
  const BatchData val_data = gather(model, data, val_rows, iv);

  Adam adam(model.weights(), config.learning_rate);
  Rng order_rng(derive_seed(config.seed, "tarnet-epoch-order"));
  Rng dropout_rng(derive_seed(config.seed, "tarnet-dropout"));
  std::vector<std::size_t> order(train_rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainLog log;
  TarNetWeights best = model.weights();
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t stall = 0;
  TarNetWeights grad = model.weights().zeros_like();

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const auto batch_idx = std::span<const std::size_t>(order).subspan(start, end - start);
      const BatchData batch = slice(train_data, batch_idx);
      const DropoutMasks masks = draw_dropout_masks(model, batch_idx.size(), dropout_rng);
      for (auto s : grad.tensors()) std::fill(s.begin(), s.end(), 0.0);
      const double loss = evaluate(model, batch, &masks, iv, &grad);
      loss_sum += loss * static_cast<double>(batch_idx.size());
      adam.step(model.weights(), grad);
    }
    const double train_loss = loss_sum / static_cast<double>(order.size());
    const double val_loss = evaluate(model, val_data, nullptr, iv, nullptr);
    log.epochs.push_back({epoch, train_loss, val_loss});

    if (std::isfinite(val_loss) && val_loss < best_val) {
      best_val = val_loss;
      best = model.weights();
      log.best_epoch = epoch;
      stall = 0;
    } else if (++stall >= config.patience) {
      log.stopped_early = true;
      break;
    }
  }

  const std::size_t probe = std::min<std::size_t>(10, log.epochs.size());
  const double first_loss = log.epochs.empty() ? 0.0 : log.epochs[0].train_loss;
  if (probe >= 2 && first_loss > 0.0 && !(log.epochs[probe - 1].train_loss < first_loss * (1.0 - kStallTolerance))) {
    log.warnings.push_back("training loss did not decrease over the first " + std::to_string(probe) +
                           " epochs; the optimization has likely failed, try other hyperparameters");
  }
  if (log.best_epoch == 0) {
    log.warnings.push_back("validation loss was never finite; returning initial weights");
  }

  model.weights() = std::move(best);
  model.train_log() = std::move(log);
  return model;
}

}  // namespace gpi
