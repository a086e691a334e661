#include "idn/likelihood.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

namespace idn {

std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::Exact: return "exact";
    case EstimatorKind::Truncated: return "truncated";
    case EstimatorKind::Roulette: return "roulette";
  }
  return "unknown";
}

EstimatorKind parse_estimator(std::string_view name) {
  if (name == "exact") return EstimatorKind::Exact;
  if (name == "truncated") return EstimatorKind::Truncated;
  if (name == "roulette") return EstimatorKind::Roulette;
  throw std::invalid_argument("unknown estimator '" + std::string(name) + "' (expected exact, truncated or roulette)");
}

namespace {

constexpr std::size_t kMaxExactDim = 16;

double series_sign(int k) { return (k % 2 == 1) ? 1.0 : -1.0; }

// ln|det(A)| with A = I + J; throws when det(A) <= 0.
double log_det_checked(const Eigen::MatrixXd& a) {
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
  const Eigen::MatrixXd& m = lu.matrixLU();
  double log_abs = 0.0;
  int sign = lu.permutationP().determinant();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double d = m(i, i);
    if (d == 0.0 || !std::isfinite(d)) throw LipschitzViolation("I + J_g is singular");
    if (d < 0.0) sign = -sign;
    log_abs += std::log(std::abs(d));
  }
  if (sign < 0) throw LipschitzViolation("det(I + J_g) <= 0: the block is not a contraction-based bijection");
  return log_abs;
}

Tensor basis_cotangent(std::size_t rows, std::size_t d, std::size_t i) {
  Tensor e({rows, d});
  for (std::size_t r = 0; r < rows; ++r) e.at(r, i) = 1.0;
  return e;
}

void require_batch(const FlowBlock& block, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != block.dim()) throw ShapeError("block input", x.shape(), Shape{0, block.dim()});
}

std::vector<std::vector<double>> constant_weights(std::size_t rows, int n_terms) {
  return std::vector<std::vector<double>>(rows, std::vector<double>(static_cast<std::size_t>(n_terms), 1.0));
}

std::size_t max_terms(const std::vector<std::vector<double>>& w) {
  std::size_t m = 0;
  for (const auto& r : w) m = std::max(m, r.size());
  return m;
}

double weight_at(const std::vector<std::vector<double>>& w, std::size_t r, std::size_t k) {
  return k < w[r].size() ? w[r][k] : 0.0;
}

// Hutchinson power-series estimate through repeated vector-Jacobian products on one tape.
template <typename WeightFn>
Tensor series_vjp(FlowBlock& block, const Tensor& x, int n_probes, Rng& rng, WeightFn&& weights_for_probe) {
  require_batch(block, x);
  if (n_probes < 1) throw std::invalid_argument("n_probes must be >= 1");
  const std::size_t rows = x.rows();
  const std::size_t d = x.cols();
  Tape tape(false);
  Var xv = tape.variable(x);
  Var g = block.g(xv, nullptr);
  Tensor acc({rows, 1});
  for (int p = 0; p < n_probes; ++p) {
    const Tensor v = rademacher_tensor({rows, d}, rng);
    const std::vector<std::vector<double>> w = weights_for_probe();
    const std::size_t terms = max_terms(w);
    Tensor cur = v;
    for (std::size_t k = 0; k < terms; ++k) {
      cur = tape.vjp(g, xv, cur);
      const double c = series_sign(static_cast<int>(k + 1)) / static_cast<double>(k + 1);
      for (std::size_t r = 0; r < rows; ++r) {
        const double wk = weight_at(w, r, k);
        if (wk == 0.0) continue;
        double term = 0.0;
        for (std::size_t j = 0; j < d; ++j) term += cur.at(r, j) * v.at(r, j);
        acc[r] += c * wk * term;
      }
    }
  }
  acc *= 1.0 / static_cast<double>(n_probes);
  return acc;
}

}  // namespace

Tensor standard_normal_log_density(const Tensor& z) {
  const std::size_t rows = z.rows();
  const std::size_t d = z.cols();
  const double c = -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
  Tensor out({rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += z.at(r, j) * z.at(r, j);
    out[r] = c - 0.5 * s;
  }
  return out;
}

Tensor logdet_exact(FlowBlock& block, const Tensor& x) {
  require_batch(block, x);
  const std::size_t d = x.cols();
  if (d > kMaxExactDim) throw std::invalid_argument("logdet_exact supports d <= 16");
  const std::size_t rows = x.rows();
  Tape tape(false);
  Var xv = tape.variable(x);
  Var g = block.g(xv, nullptr);
  std::vector<Tensor> jac_rows;
  for (std::size_t i = 0; i < d; ++i) jac_rows.push_back(tape.vjp(g, xv, basis_cotangent(rows, d, i)));
  Tensor out({rows, 1});
  Eigen::MatrixXd a(d, d);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) a(i, j) = (i == j ? 1.0 : 0.0) + jac_rows[i].at(r, j);
    out[r] = log_det_checked(a);
  }
  return out;
}

Tensor logdet_truncated(FlowBlock& block, const Tensor& x, int n_terms, int n_probes, Rng& rng) {
  if (n_terms < 1) throw std::invalid_argument("n_terms must be >= 1");
  const std::size_t rows = x.rows();
  return series_vjp(block, x, n_probes, rng, [&] { return constant_weights(rows, n_terms); });
}

std::vector<std::vector<double>> roulette_weights(std::size_t rows, double geom_p, int n_exact_terms, Rng& rng) {
  if (!(geom_p > 0.0 && geom_p < 1.0)) throw std::invalid_argument("geom_p must lie in (0, 1)");
  if (n_exact_terms < 0) throw std::invalid_argument("n_exact_terms must be >= 0");
  std::geometric_distribution<int> geom(geom_p);
  std::vector<std::vector<double>> w(rows);
  const double survive = 1.0 - geom_p;
  for (std::size_t r = 0; r < rows; ++r) {
    const int n = 1 + geom(rng);  // N >= 1, P(N >= j) = (1-p)^(j-1)
    w[r].assign(static_cast<std::size_t>(n_exact_terms), 1.0);
    for (int j = 1; j <= n; ++j) w[r].push_back(std::pow(survive, -(j - 1)));
  }
  return w;
}

Tensor logdet_roulette(FlowBlock& block, const Tensor& x, double geom_p, int n_probes, Rng& rng, int n_exact_terms) {
  const std::size_t rows = x.rows();
  return series_vjp(block, x, n_probes, rng, [&] { return roulette_weights(rows, geom_p, n_exact_terms, rng); });
}

namespace {

Tensor block_logdet(FlowBlock& block, const Tensor& x, const EstimatorConfig& e, Rng& rng) {
  switch (e.kind) {
    case EstimatorKind::Exact: return logdet_exact(block, x);
    case EstimatorKind::Truncated: return logdet_truncated(block, x, e.n_terms, e.n_probes, rng);
    case EstimatorKind::Roulette: return logdet_roulette(block, x, e.geom_p, e.n_probes, rng, e.n_exact_terms);
  }
  return {};
}

}  // namespace

LogProb log_prob(FlowModel& model, const Tensor& x, const EstimatorConfig& estimator, Rng& rng) {
  if (x.rank() != 2 || x.cols() != model.dim()) throw ShapeError("log_prob input", x.shape(), Shape{0, model.dim()});
  if (estimator.kind == EstimatorKind::Exact && model.dim() > kMaxExactDim) {
    throw std::invalid_argument("exact estimator requires d <= 16");
  }
  LogProb out;
  Tensor total({x.rows(), 1});
  Tensor h = x;
  for (std::size_t k = 0; k < model.size(); ++k) {
    FlowBlock& b = model.block(k);
    Tensor ld = block_logdet(b, h, estimator, rng);
    double mean = 0.0;
    for (double v : ld.data()) mean += v;
    mean /= static_cast<double>(ld.size());
    LogDetEstimate est;
    est.value = mean;
    est.kind = estimator.kind;
    est.n_terms = estimator.kind == EstimatorKind::Exact ? 0 : estimator.n_terms;
    est.n_probes = estimator.kind == EstimatorKind::Exact ? 0 : estimator.n_probes;
    out.blocks.push_back(est);
    total += ld;
    h = b.forward_value(h);
  }
  out.logp = standard_normal_log_density(h) + total;
  out.z = std::move(h);
  return out;
}

double nll_nats(FlowModel& model, const Tensor& batch, const EstimatorConfig& estimator, Rng& rng, std::size_t chunk) {
  if (batch.rows() == 0) throw std::invalid_argument("nll_nats of an empty batch");
  double total = 0.0;
  for (std::size_t begin = 0; begin < batch.rows(); begin += chunk) {
    const std::size_t end = std::min(batch.rows(), begin + chunk);
    const LogProb lp = log_prob(model, batch.slice_rows(begin, end), estimator, rng);
    for (double v : lp.logp.data()) total -= v;
  }
  return total / static_cast<double>(batch.rows());
}

// ---------------------------------------------------------------------------
// Taped

Var log_det_identity_plus(Var columns, std::size_t d) {
  const Tensor& m = columns.value();
  if (m.rank() != 2 || m.cols() != d * d) throw ShapeError("log_det_identity_plus", m.shape(), Shape{0, d * d});
  const std::size_t rows = m.rows();
  Tensor out({rows, 1});
  // Keep A^{-1} per row for the backward pass.
  auto inverses = std::make_shared<std::vector<double>>(rows * d * d);
  Eigen::MatrixXd a(d, d);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t i = 0; i < d; ++i) a(i, j) = (i == j ? 1.0 : 0.0) + m.at(r, j * d + i);
    out[r] = log_det_checked(a);
    const Eigen::MatrixXd inv = a.inverse();
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) (*inverses)[r * d * d + i * d + j] = inv(i, j);
  }
  const std::size_t ic = columns.id();
  return columns.tape().record(std::move(out), {columns}, [ic, d, rows, inverses](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_in(self);
    Tensor* gm = tp.accumulate(ic);
    if (!gm) return;
    // d ln|det A| / dA_ij = (A^{-1})_ji; entry (i, j) lives at column j*d + i.
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t i = 0; i < d; ++i) gm->at(r, j * d + i) += g[r] * (*inverses)[r * d * d + j * d + i];
  });
}

Var logdet_exact_taped(const FlowBlock& block, const BlockTrace& trace, std::size_t batch) {
  const std::size_t d = block.dim();
  Tape& tape = trace.proj.tape();
  std::vector<Var> cols;
  for (std::size_t j = 0; j < d; ++j) cols.push_back(block.jvp(trace, tape.constant(basis_cotangent(batch, d, j))));
  return log_det_identity_plus(concat_features(cols), d);
}

Var logdet_series_taped(const FlowBlock& block, const BlockTrace& trace, const std::vector<std::vector<double>>& weights,
                        int n_probes, Rng& rng) {
  if (n_probes < 1) throw std::invalid_argument("n_probes must be >= 1");
  Tape& tape = trace.proj.tape();
  const std::size_t rows = weights.size();
  const std::size_t d = block.dim();
  const std::size_t terms = max_terms(weights);
  Var acc;
  for (int p = 0; p < n_probes; ++p) {
    Var v = tape.constant(rademacher_tensor({rows, d}, rng));
    Var w = v;
    for (std::size_t k = 0; k < terms; ++k) {
      w = block.jvp(trace, w);
      Tensor coef({rows, 1});
      const double c = series_sign(static_cast<int>(k + 1)) / static_cast<double>(k + 1) / n_probes;
      for (std::size_t r = 0; r < rows; ++r) coef[r] = c * weight_at(weights, r, k);
      Var term = elementwise_mul(sum_features(elementwise_mul(w, v)), tape.constant(std::move(coef)));
      acc = acc.valid() ? add(acc, term) : term;
    }
  }
  return acc;
}

Var nll_loss(FlowModel& model, Var x, const EstimatorConfig& estimator, Rng& rng, std::vector<double>* block_logdets) {
  Tape& tape = x.tape();
  const std::size_t batch = x.shape()[0];
  const std::size_t d = model.dim();
  FlowModel::Forward fwd = model.forward(x, true);
  Var logdet_sum;
  if (block_logdets) block_logdets->clear();
  for (std::size_t k = 0; k < model.size(); ++k) {
    const FlowBlock& b = model.block(k);
    Var ld;
    switch (estimator.kind) {
      case EstimatorKind::Exact: ld = logdet_exact_taped(b, fwd.traces[k], batch); break;
      case EstimatorKind::Truncated:
        ld = logdet_series_taped(b, fwd.traces[k], constant_weights(batch, estimator.n_terms), estimator.n_probes, rng);
        break;
      case EstimatorKind::Roulette: {
        // One roulette draw per row shared by the probes of that row.
        const auto w = roulette_weights(batch, estimator.geom_p, estimator.n_exact_terms, rng);
        ld = logdet_series_taped(b, fwd.traces[k], w, estimator.n_probes, rng);
        break;
      }
    }
    Var s = sum(ld);
    if (block_logdets) block_logdets->push_back(s.value()[0] / static_cast<double>(batch));
    logdet_sum = logdet_sum.valid() ? add(logdet_sum, s) : s;
  }
  Var sq = scalar_mul(sum(elementwise_mul(fwd.z, fwd.z)), 0.5);
  Var total = scalar_mul(logdet_sum.valid() ? sub(sq, logdet_sum) : sq, 1.0 / static_cast<double>(batch));
  const double log_norm = 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
  return shift(total, tape.constant(Tensor::scalar(log_norm)));
}

}  // namespace idn
