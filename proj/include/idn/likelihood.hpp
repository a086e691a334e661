#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "idn/dense_flow.hpp"
#include "idn/random.hpp"

namespace idn {

enum class EstimatorKind { Exact, Truncated, Roulette };

std::string to_string(EstimatorKind kind);
EstimatorKind parse_estimator(std::string_view name);

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::Exact;
  /// Truncated: number of series terms.
  int n_terms = 20;
  int n_probes = 1;
  /// Roulette: success probability of the geometric stopping variable.
  double geom_p = 0.5;
  /// Roulette: leading terms always evaluated before the random tail.
  int n_exact_terms = 0;
};

/// Raised when I + J_g(x) is singular or orientation-reversing, i.e. Lip(g) < 1 failed.
class LipschitzViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LogDetEstimate {
  /// Batch mean of ln|det J_F| for one block, in nats.
  double value = 0.0;
  EstimatorKind kind = EstimatorKind::Exact;
  int n_terms = 0;
  int n_probes = 0;
};

/// ln N(z; 0, I) per row, shape (batch, 1).
Tensor standard_normal_log_density(const Tensor& z);

/// ln|det(I + J_g(x))| per row. J_g is assembled row by row from d vector-Jacobian
/// products with basis cotangents. Requires d <= 16.
Tensor logdet_exact(FlowBlock& block, const Tensor& x);

/// Hutchinson estimate of the truncated power series sum_{k<=n} (-1)^{k+1}/k tr(J^k),
/// per row, averaged over `n_probes` Rademacher probes.
Tensor logdet_truncated(FlowBlock& block, const Tensor& x, int n_terms, int n_probes, Rng& rng);

/// Russian-roulette estimate: the first `n_exact_terms` terms always, then N ~ Geometric(geom_p)
/// further terms each reweighted by 1 / P(N >= j). Unbiased for the infinite series.
Tensor logdet_roulette(FlowBlock& block, const Tensor& x, double geom_p, int n_probes, Rng& rng,
                       int n_exact_terms = 0);

/// Per-row series weights: out[r][k-1] multiplies the k-th term for row r.
/// Exposed for testing the reweighting; rows x max_terms.
std::vector<std::vector<double>> roulette_weights(std::size_t rows, double geom_p, int n_exact_terms, Rng& rng);

struct LogProb {
  /// (batch, 1)
  Tensor logp;
  Tensor z;
  std::vector<LogDetEstimate> blocks;
};

/// ln p(x) = ln N(z; 0, I) + sum_k ln|det J_{F_k}|. Untaped.
LogProb log_prob(FlowModel& model, const Tensor& x, const EstimatorConfig& estimator, Rng& rng);

/// Mean negative log-likelihood in nats. Evaluated in chunks of `chunk` rows.
double nll_nats(FlowModel& model, const Tensor& batch, const EstimatorConfig& estimator, Rng& rng,
                std::size_t chunk = 2000);

// Taped (differentiable) variants used for training.

/// ln|det(I + M)| per row for M given as (batch, d*d) with column j of each
/// row's matrix stored at [j*d, (j+1)*d). Throws LipschitzViolation if det <= 0.
Var log_det_identity_plus(Var columns, std::size_t d);

/// ln|det(I + J_g)| per row via d Jacobian-vector products on the trace.
Var logdet_exact_taped(const FlowBlock& block, const BlockTrace& trace, std::size_t batch);

/// Hutchinson series on the trace with per-row term weights (rows x terms); differentiable.
Var logdet_series_taped(const FlowBlock& block, const BlockTrace& trace, const std::vector<std::vector<double>>& weights,
                        int n_probes, Rng& rng);

/// Differentiable mean NLL for a batch; also returns per-block mean log-dets.
Var nll_loss(FlowModel& model, Var x, const EstimatorConfig& estimator, Rng& rng,
             std::vector<double>* block_logdets = nullptr);

}  // namespace idn
