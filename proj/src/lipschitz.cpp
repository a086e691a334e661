#include "idn/lipschitz.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace idn {

namespace {

bool normalize(std::span<double> v) {
  const double n = l2_norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) return false;
  for (double& x : v) x /= n;
  return true;
}

}  // namespace

SpectralWeight::SpectralWeight(const std::string& name, std::size_t out, std::size_t in, double c, Rng& rng)
    : raw(name + ".weight", normal_tensor({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng)),
      bias(name + ".bias", Tensor({out})),
      u(normal_tensor({out}, 1.0, rng)),
      coeff(c) {
  if (!(c > 0.0 && c <= 1.0)) throw std::invalid_argument("spectral coefficient must lie in (0, 1]");
  normalize(u.data());
  converge(50, 2000);
  if (sigma_hat > coeff) {
    raw.value *= coeff / sigma_hat;
    sigma_hat = coeff;
  }
}

double SpectralWeight::power_iteration_step() {
  const Tensor& w = raw.value;
  const std::size_t m = out_dim();
  const std::size_t n = in_dim();
  std::vector<double> v(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[j] += w.at(i, j) * u[i];
  if (!normalize(v)) {
    sigma_hat = 0.0;
    return sigma_hat;
  }
  std::vector<double> wv(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) wv[i] += w.at(i, j) * v[j];
  std::vector<double> new_u = wv;
  if (!normalize(new_u)) {
    sigma_hat = 0.0;
    return sigma_hat;
  }
  std::copy(new_u.begin(), new_u.end(), u.data().begin());
  sigma_hat = dot(u.data(), wv);
  return sigma_hat;
}

double SpectralWeight::converge(int min_iters, int max_iters, double rel_tol) {
  double prev = -1.0;
  for (int k = 0; k < max_iters; ++k) {
    const double s = power_iteration_step();
    if (k + 1 >= min_iters && std::abs(s - prev) <= rel_tol * std::max(s, 1e-300)) break;
    prev = s;
  }
  return sigma_hat;
}

double SpectralWeight::scale_factor() const {
  if (!(sigma_hat > 0.0)) return 1.0;
  return std::min(1.0, coeff / sigma_hat);
}

Tensor SpectralWeight::effective() const { return raw.value * scale_factor(); }

Var SpectralWeight::effective(Tape& tape) {
  const double k = scale_factor();
  Var w = tape.parameter(raw);
  return k == 1.0 ? w : scalar_mul(w, k);
}

double concat_lipschitz_bound(double k1, double k2, double p) {
  if (!(p >= 1.0)) throw std::invalid_argument("concat_lipschitz_bound requires p >= 1");
  if (k1 < 0.0 || k2 < 0.0) throw std::invalid_argument("Lipschitz constants must be non-negative");
  if (std::isinf(p)) return std::max(k1, k2);
  if (p == 2.0) return std::hypot(k1, k2);
  return std::pow(std::pow(k1, p) + std::pow(k2, p), 1.0 / p);
}

std::vector<RatioStats> empirical_lipschitz(const std::vector<BatchMap>& fs, std::size_t dim, std::size_t n_pairs,
                                            double scale, Rng& rng, std::size_t chunk) {
  if (n_pairs == 0) throw std::invalid_argument("empirical_lipschitz requires n_pairs >= 1");
  if (chunk == 0) chunk = std::max<std::size_t>(1, (std::size_t{1} << 15) / std::max<std::size_t>(dim, 1));
  std::vector<RatioStats> stats(fs.size());
  for (RatioStats& s : stats) {
    s.dim = dim;
    s.n_pairs = n_pairs;
    s.scale = scale;
  }
  std::vector<double> totals(fs.size(), 0.0);
  std::vector<double> den(chunk);
  std::size_t done = 0;
  while (done < n_pairs) {
    const std::size_t rows = std::min(chunk, n_pairs - done);
    Tensor v = normal_tensor({rows, dim}, scale, rng);
    Tensor w = normal_tensor({rows, dim}, scale, rng);
    for (std::size_t r = 0; r < rows; ++r) {
      // Resample coincident pairs.
      while (true) {
        double d2 = 0.0;
        for (std::size_t c = 0; c < dim; ++c) d2 += (v.at(r, c) - w.at(r, c)) * (v.at(r, c) - w.at(r, c));
        den[r] = std::sqrt(d2);
        if (d2 > 0.0) break;
        std::normal_distribution<double> dist(0.0, scale);
        for (std::size_t c = 0; c < dim; ++c) w.at(r, c) = dist(rng);
      }
    }
    for (std::size_t k = 0; k < fs.size(); ++k) {
      const Tensor fv = fs[k](v);
      const Tensor fw = fs[k](w);
      const std::size_t out = fv.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        double num = 0.0;
        for (std::size_t c = 0; c < out; ++c) {
          const double d = fv.at(r, c) - fw.at(r, c);
          num += d * d;
        }
        const double ratio = std::sqrt(num) / den[r];
        totals[k] += ratio;
        stats[k].max = std::max(stats[k].max, ratio);
      }
    }
    done += rows;
  }
  for (std::size_t k = 0; k < fs.size(); ++k) stats[k].mean = totals[k] / static_cast<double>(n_pairs);
  return stats;
}

RatioStats empirical_lipschitz(const BatchMap& f, std::size_t dim, std::size_t n_pairs, double scale, Rng& rng,
                               std::size_t chunk) {
  return empirical_lipschitz(std::vector<BatchMap>{f}, dim, n_pairs, scale, rng, chunk).front();
}

}  // namespace idn
