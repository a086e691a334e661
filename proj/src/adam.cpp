#include "idn/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace idn {

AdamState adam_init(std::span<Parameter* const> params, AdamOptions options) {
  AdamState s;
  s.options = options;
  for (const Parameter* p : params) {
    s.m.emplace_back(p->value.shape());
    s.v.emplace_back(p->value.shape());
  }
  return s;
}

void adam_step(std::span<Parameter* const> params, AdamState& state) {
  if (state.m.size() != params.size() || state.v.size() != params.size() || params.empty()) {
    throw std::logic_error("adam_step: optimizer state is not initialized for these parameters");
  }
  state.step += 1;
  const AdamOptions& o = state.options;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    if (!m.same_shape(p.value) || !p.grad.same_shape(p.value)) {
      throw ShapeError("adam_step moment/parameter '" + p.name + "'", m.shape(), p.value.shape());
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p.value[i] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
}

}  // namespace idn
