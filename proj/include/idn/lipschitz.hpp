#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "idn/autodiff.hpp"
#include "idn/random.hpp"

namespace idn {

/// Linear map W (out x in) with bias, kept below a target spectral norm.
///
/// The forward pass uses W_eff = W * min(1, coeff / sigma_hat), where sigma_hat
/// is a power-iteration estimate of the largest singular value of the raw W.
/// The left singular vector estimate `u` persists across training steps.
class SpectralWeight {
 public:
  SpectralWeight(const std::string& name, std::size_t out, std::size_t in, double coeff, Rng& rng);

  std::size_t out_dim() const { return raw.value.shape()[0]; }
  std::size_t in_dim() const { return raw.value.shape()[1]; }

  /// v <- normalize(W^T u); u <- normalize(W v); sigma_hat <- u^T W v.
  /// For a zero matrix sigma_hat becomes 0 and u is left unchanged.
  double power_iteration_step();
  /// Repeat power_iteration_step until sigma_hat stabilizes to `rel_tol` or `max_iters` is hit.
  double converge(int min_iters, int max_iters, double rel_tol = 1e-14);

  /// min(1, coeff / sigma_hat), or 1 when sigma_hat == 0.
  double scale_factor() const;
  Tensor effective() const;
  /// Taped W_eff; sigma_hat is a constant for differentiation.
  Var effective(Tape& tape);

  Parameter raw;
  Parameter bias;
  Tensor u;
  double sigma_hat = 0.0;
  double coeff;
  int iters_per_step = 1;
};

/// (K1^p + K2^p)^(1/p). Throws std::invalid_argument when p < 1 or a constant is negative.
double concat_lipschitz_bound(double k1, double k2, double p = 2.0);

struct RatioStats {
  double mean = 0.0;
  double max = 0.0;
  std::size_t dim = 0;
  std::size_t n_pairs = 0;
  double scale = 1.0;
};

/// Batched map from (rows x dim) to (rows x out).
using BatchMap = std::function<Tensor(const Tensor&)>;

/// Mean and max of ||f(v) - f(w)||_2 / ||v - w||_2 over pairs v, w ~ N(0, scale^2 I).
/// Pairs are drawn `chunk` rows at a time; 0 picks a cache-sized chunk.
RatioStats empirical_lipschitz(const BatchMap& f, std::size_t dim, std::size_t n_pairs, double scale, Rng& rng,
                               std::size_t chunk = 0);

/// As above for several maps evaluated on the same pairs.
std::vector<RatioStats> empirical_lipschitz(const std::vector<BatchMap>& fs, std::size_t dim, std::size_t n_pairs,
                                            double scale, Rng& rng, std::size_t chunk = 0);

}  // namespace idn
