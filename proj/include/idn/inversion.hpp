#pragma once

#include <stdexcept>
#include <vector>

#include "idn/dense_flow.hpp"
#include "idn/random.hpp"

namespace idn {

struct InversionOptions {
  double tol = 1e-6;
  int max_iter = 100;
};

/// Fixed-point iteration did not reach the tolerance within max_iter steps.
class InversionError : public std::runtime_error {
 public:
  InversionError(const std::string& what, double residual, std::ptrdiff_t block)
      : std::runtime_error(what), residual(residual), block(block) {}

  double residual;
  /// Index of the failing block, -1 when raised by invert_block directly.
  std::ptrdiff_t block;
};

struct InversionResult {
  Tensor x;
  int iterations = 0;
  /// ||x_{k+1} - x_k||_inf after each iteration.
  std::vector<double> residuals;
};

/// Solve x + g(x) = y with x_0 = y, x_{k+1} = y - g(x_k).
InversionResult invert_block(FlowBlock& block, const Tensor& y, const InversionOptions& opts = {});

/// Invert the whole flow, last block first.
Tensor invert_model(FlowModel& model, const Tensor& z, const InversionOptions& opts = {},
                    std::vector<int>* iterations = nullptr);

/// Draw z ~ N(0, I) and map it back to data space.
Tensor sample(FlowModel& model, std::size_t n, Rng& rng, const InversionOptions& opts = {});

/// max_rows ||x - F^{-1}(F(x))||_inf.
double round_trip_error(FlowModel& model, const Tensor& x, const InversionOptions& opts = {});

}  // namespace idn
