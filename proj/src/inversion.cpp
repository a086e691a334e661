#include "idn/inversion.hpp"

#include <cmath>
#include <string>

namespace idn {

InversionResult invert_block(FlowBlock& block, const Tensor& y, const InversionOptions& opts) {
  if (!(opts.tol > 0.0)) throw std::invalid_argument("inversion tol must be > 0");
  if (opts.max_iter < 1) throw std::invalid_argument("inversion max_iter must be >= 1");
  if (y.rank() != 2 || y.cols() != block.dim()) throw ShapeError("invert_block", y.shape(), Shape{0, block.dim()});
  InversionResult res;
  res.x = y;
  double residual = INFINITY;
  for (int k = 0; k < opts.max_iter; ++k) {
    Tensor next = y - block.g_value(res.x);
    residual = max_abs_diff(next, res.x);
    res.x = std::move(next);
    res.iterations = k + 1;
    res.residuals.push_back(residual);
    if (!std::isfinite(residual)) break;
    if (residual < opts.tol) return res;
  }
  throw InversionError("fixed-point inversion did not converge in " + std::to_string(opts.max_iter) +
                           " iterations (last residual " + std::to_string(residual) + ")",
                       residual, -1);
}

Tensor invert_model(FlowModel& model, const Tensor& z, const InversionOptions& opts, std::vector<int>* iterations) {
  Tensor x = z;
  if (iterations) iterations->assign(model.size(), 0);
  for (std::size_t k = model.size(); k-- > 0;) {
    try {
      InversionResult r = invert_block(model.block(k), x, opts);
      if (iterations) (*iterations)[k] = r.iterations;
      x = std::move(r.x);
    } catch (const InversionError& e) {
      throw InversionError("block " + std::to_string(k) + ": " + e.what(), e.residual, static_cast<std::ptrdiff_t>(k));
    }
  }
  return x;
}

Tensor sample(FlowModel& model, std::size_t n, Rng& rng, const InversionOptions& opts) {
  if (n == 0) throw std::invalid_argument("sample count must be >= 1");
  return invert_model(model, normal_tensor({n, model.dim()}, 1.0, rng), opts);
}

double round_trip_error(FlowModel& model, const Tensor& x, const InversionOptions& opts) {
  const Tensor z = model.forward_value(x);
  return max_abs_diff(invert_model(model, z, opts), x);
}

}  // namespace idn
