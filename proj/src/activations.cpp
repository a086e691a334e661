#include "idn/activations.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace idn {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double inverse_softplus(double y) {
  if (y <= 0.0) throw std::invalid_argument("inverse_softplus requires y > 0");
  // log(exp(y) - 1), stable for large y
  return y + std::log(-std::expm1(-y));
}

double lipswish(double x, double beta) { return x * sigmoid(beta * x) / kLipSwishDivisor; }

double lipswish_derivative(double x, double beta) {
  const double u = beta * x;
  const double s = sigmoid(u);
  return (s + u * s * (1.0 - s)) / kLipSwishDivisor;
}

namespace {

double clipswish_jacobian_norm(double x, double beta) {
  const double a = lipswish_derivative(x, beta);
  const double b = lipswish_derivative(-x, beta);
  return std::sqrt(a * a + b * b);
}

// d/du of the LipSwish derivative, with u = beta x.
double lipswish_second(double u) {
  const double s = sigmoid(u);
  return s * (1.0 - s) * (2.0 + u * (1.0 - 2.0 * s)) / kLipSwishDivisor;
}

Tensor map(const Tensor& x, double (*f)(double)) {
  Tensor out = x;
  for (double& v : out.data()) v = f(v);
  return out;
}

}  // namespace

double clipswish_bound(double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw std::invalid_argument("clipswish_bound requires beta > 0");
  const double lo = -50.0 / beta;
  const double hi = 50.0 / beta;
  constexpr int kGrid = 4000;
  const double h = (hi - lo) / kGrid;
  int best = 0;
  double best_val = -1.0;
  for (int i = 0; i <= kGrid; ++i) {
    const double v = clipswish_jacobian_norm(lo + h * i, beta);
    if (v > best_val) {
      best_val = v;
      best = i;
    }
  }
  // Golden-section maximization on the bracketing grid cells.
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo + h * std::max(best - 1, 0);
  double b = lo + h * std::min(best + 1, kGrid);
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = clipswish_jacobian_norm(c, beta);
  double fd = clipswish_jacobian_norm(d, beta);
  while (b - a > 1e-7) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = clipswish_jacobian_norm(c, beta);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = clipswish_jacobian_norm(d, beta);
    }
  }
  return std::max({best_val, fc, fd, clipswish_jacobian_norm(0.5 * (a + b), beta)});
}

// ---------------------------------------------------------------------------
// Taped primitives

Var sigmoid(Var x) {
  const std::size_t ix = x.id();
  return x.tape().record(map(x.value(), &sigmoid), {x}, [ix](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_in(self);
    if (Tensor* gx = tp.accumulate(ix)) {
      const Tensor& s = tp.value(self);
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * s[i] * (1.0 - s[i]);
    }
  });
}

Var sigmoid_derivative(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) {
    const double s = sigmoid(v);
    v = s * (1.0 - s);
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_in(self);
    if (Tensor* gx = tp.accumulate(ix)) {
      const Tensor& xv = tp.value(ix);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = sigmoid(xv[i]);
        (*gx)[i] += g[i] * s * (1.0 - s) * (1.0 - 2.0 * s);
      }
    }
  });
}

Var softplus(Var x) {
  const std::size_t ix = x.id();
  return x.tape().record(map(x.value(), &softplus), {x}, [ix](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_in(self);
    if (Tensor* gx = tp.accumulate(ix)) {
      const Tensor& xv = tp.value(ix);
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * sigmoid(xv[i]);
    }
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_in(self);
    if (Tensor* gx = tp.accumulate(ix)) {
      const Tensor& xv = tp.value(ix);
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += xv[i] > 0.0 ? g[i] : 0.0;
    }
  });
}

Var relu_derivative(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? 1.0 : 0.0;
  return x.tape().constant(std::move(out));
}

Var lipswish(Var x, Var beta) {
  if (beta.value().size() != 1) throw ShapeError("lipswish beta must have one element, got " + to_string(beta.shape()));
  const double b = beta.value()[0];
  Tensor out = x.value();
  for (double& v : out.data()) v = lipswish(v, b);
  const std::size_t ix = x.id(), ib = beta.id();
  return x.tape().record(std::move(out), {x, beta}, [ix, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_in(self);
    const Tensor& xv = tp.value(ix);
    const double bv = tp.value(ib)[0];
    Tensor* gx = tp.accumulate(ix);
    Tensor* gb = tp.accumulate(ib);
    double acc_b = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = sigmoid(bv * xv[i]);
      if (gx) (*gx)[i] += g[i] * (s + bv * xv[i] * s * (1.0 - s)) / kLipSwishDivisor;
      if (gb) acc_b += g[i] * xv[i] * xv[i] * s * (1.0 - s) / kLipSwishDivisor;
    }
    if (gb) (*gb)[0] += acc_b;
  });
}

Var lipswish_derivative(Var x, Var beta) {
  if (beta.value().size() != 1) throw ShapeError("lipswish beta must have one element, got " + to_string(beta.shape()));
  const double b = beta.value()[0];
  Tensor out = x.value();
  for (double& v : out.data()) v = lipswish_derivative(v, b);
  const std::size_t ix = x.id(), ib = beta.id();
  return x.tape().record(std::move(out), {x, beta}, [ix, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_in(self);
    const Tensor& xv = tp.value(ix);
    const double bv = tp.value(ib)[0];
    Tensor* gx = tp.accumulate(ix);
    Tensor* gb = tp.accumulate(ib);
    double acc_b = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double h = lipswish_second(bv * xv[i]);
      if (gx) (*gx)[i] += g[i] * bv * h;
      if (gb) acc_b += g[i] * xv[i] * h;
    }
    if (gb) (*gb)[0] += acc_b;
  });
}

SwishPair lipswish_fused(Var x, Var beta, double k, bool doubled, bool with_derivative) {
  if (beta.value().size() != 1) throw ShapeError("lipswish beta must have one element, got " + to_string(beta.shape()));
  const Tensor& xv = x.value();
  const double b = beta.value()[0];
  const std::size_t n = xv.size();
  const std::size_t w = xv.cols();
  const std::size_t rows = n / w;
  // s = sigmoid(beta x) is shared by every output and rule below.
  auto s = std::make_shared<std::vector<double>>(n);
  for (std::size_t i = 0; i < n; ++i) (*s)[i] = sigmoid(b * xv[i]);
  const double kd = k / kLipSwishDivisor;
  Shape shape = xv.shape();
  if (doubled) shape.back() = 2 * w;
  Tensor out = Tensor::uninitialized(shape);
  Tensor der;
  if (with_derivative) der = Tensor::uninitialized(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t i = r * w + c;
      const double si = (*s)[i];
      const double u = b * xv[i];
      const double d1 = u * si * (1.0 - si);
      const std::size_t o = doubled ? r * 2 * w + c : i;
      out[o] = kd * xv[i] * si;
      if (with_derivative) der[o] = kd * (si + d1);
      if (doubled) {
        out[o + w] = -kd * xv[i] * (1.0 - si);
        if (with_derivative) der[o + w] = kd * (d1 - (1.0 - si));
      }
    }
  }
  const std::size_t ix = x.id(), ib = beta.id();
  Tape& tape = x.tape();
  SwishPair res;
  // Both halves share d/dx = k' (s + u s (1-s)) up to sign and d/dbeta = k' x^2 s (1-s).
  res.out = tape.record(std::move(out), {x, beta}, [=](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_in(self);
    const Tensor& xv = tp.value(ix);
    const double bv = tp.value(ib)[0];
    Tensor* gx = tp.accumulate(ix);
    Tensor* gb = tp.accumulate(ib);
    double acc_b = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        const std::size_t i = r * w + c;
        const double si = (*s)[i];
        const double ss = si * (1.0 - si);
        const double u = bv * xv[i];
        const std::size_t o = doubled ? r * 2 * w + c : i;
        double gx_i = g[o] * (si + u * ss);
        double gb_i = g[o];
        if (doubled) {
          gx_i += g[o + w] * (u * ss - (1.0 - si));
          gb_i += g[o + w];
        }
        if (gx) (*gx)[i] += kd * gx_i;
        acc_b += gb_i * xv[i] * xv[i] * ss;
      }
    }
    if (gb) (*gb)[0] += kd * acc_b;
  });
  if (with_derivative) {
    // Both derivative halves have partials beta h(u) and x h(u), h(u) = s (1-s)(2 + u (1 - 2s)).
    res.derivative = tape.record(std::move(der), {x, beta}, [=](Tape& tp, std::size_t self) {
      const Tensor& g = tp.grad_in(self);
      const Tensor& xv = tp.value(ix);
      const double bv = tp.value(ib)[0];
      Tensor* gx = tp.accumulate(ix);
      Tensor* gb = tp.accumulate(ib);
      double acc_b = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
          const std::size_t i = r * w + c;
          const double si = (*s)[i];
          const double u = bv * xv[i];
          const double h = si * (1.0 - si) * (2.0 + u * (1.0 - 2.0 * si));
          const std::size_t o = doubled ? r * 2 * w + c : i;
          const double gi = doubled ? g[o] + g[o + w] : g[o];
          if (gx) (*gx)[i] += kd * gi * bv * h;
          acc_b += gi * xv[i] * h;
        }
      }
      if (gb) (*gb)[0] += kd * acc_b;
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Activation

std::string to_string(ActivationTag tag) {
  switch (tag) {
    case ActivationTag::Sigmoid: return "sigmoid";
    case ActivationTag::ReLU: return "relu";
    case ActivationTag::CReLU: return "crelu";
    case ActivationTag::LipSwish: return "lipswish";
    case ActivationTag::LeakyLSwish: return "leakylswish";
    case ActivationTag::CLipSwish: return "clipswish";
    case ActivationTag::Identity: return "identity";
  }
  return "unknown";
}

ActivationTag parse_activation(std::string_view name) {
  std::string n(name);
  for (char& c : n) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (ActivationTag t : {ActivationTag::Sigmoid, ActivationTag::ReLU, ActivationTag::CReLU, ActivationTag::LipSwish,
                          ActivationTag::LeakyLSwish, ActivationTag::CLipSwish, ActivationTag::Identity}) {
    if (to_string(t) == n) return t;
  }
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

Activation::Activation(ActivationTag tag, const std::string& name_prefix) : tag_(tag) {
  if (tag == ActivationTag::LipSwish || tag == ActivationTag::LeakyLSwish || tag == ActivationTag::CLipSwish) {
    raw_beta_ = std::make_unique<Parameter>(name_prefix + ".raw_beta", Tensor::scalar(kInitialRawBeta));
  }
  if (tag == ActivationTag::LeakyLSwish) {
    raw_alpha_ = std::make_unique<Parameter>(name_prefix + ".raw_alpha", Tensor::scalar(kInitialRawAlpha));
  }
}

bool Activation::doubles_width() const { return tag_ == ActivationTag::CReLU || tag_ == ActivationTag::CLipSwish; }

std::size_t Activation::output_width(std::size_t w) const { return doubles_width() ? 2 * w : w; }

double Activation::lipschitz_constant() const { return tag_ == ActivationTag::Sigmoid ? 0.25 : 1.0; }

double Activation::beta() const { return raw_beta_ ? softplus(raw_beta_->value[0]) : 0.0; }

double Activation::alpha() const { return raw_alpha_ ? sigmoid(raw_alpha_->value[0]) : 0.0; }

std::vector<Parameter*> Activation::parameters() {
  std::vector<Parameter*> out;
  if (raw_beta_) out.push_back(raw_beta_.get());
  if (raw_alpha_) out.push_back(raw_alpha_.get());
  return out;
}

double Activation::cached_bound() const {
  // phi'(x) depends on x only through beta * x, so the supremum is the same for every beta.
  static const double bound = clipswish_bound(1.0);
  return bound;
}

Activation::Applied Activation::apply(Var a, bool with_derivative) const {
  Tape& tape = a.tape();
  Applied r;
  switch (tag_) {
    case ActivationTag::Identity:
      r.out = a;
      if (with_derivative) r.derivative = tape.constant(Tensor(a.shape(), 1.0));
      break;
    case ActivationTag::Sigmoid:
      r.out = sigmoid(a);
      if (with_derivative) r.derivative = sigmoid_derivative(a);
      break;
    case ActivationTag::ReLU:
      r.out = relu(a);
      if (with_derivative) r.derivative = relu_derivative(a);
      break;
    case ActivationTag::CReLU: {
      Var na = negate(a);
      r.out = concat_features(relu(a), relu(na));
      if (with_derivative) r.derivative = concat_features(relu_derivative(a), negate(relu_derivative(na)));
      break;
    }
    case ActivationTag::LipSwish: {
      SwishPair p = lipswish_fused(a, softplus(tape.parameter(*raw_beta_)), 1.0, false, with_derivative);
      r.out = p.out;
      r.derivative = p.derivative;
      break;
    }
    case ActivationTag::LeakyLSwish: {
      Var beta = softplus(tape.parameter(*raw_beta_));
      Var raw_alpha = tape.parameter(*raw_alpha_);
      Var alpha = sigmoid(raw_alpha);
      Var one_minus_alpha = sigmoid(negate(raw_alpha));
      r.out = add(scale(a, alpha), scale(lipswish(a, beta), one_minus_alpha));
      if (with_derivative) r.derivative = shift(scale(lipswish_derivative(a, beta), one_minus_alpha), alpha);
      break;
    }
    case ActivationTag::CLipSwish: {
      // The bound is invariant in beta, so it enters as a constant.
      SwishPair p =
          lipswish_fused(a, softplus(tape.parameter(*raw_beta_)), 1.0 / cached_bound(), true, with_derivative);
      r.out = p.out;
      r.derivative = p.derivative;
      break;
    }
  }
  return r;
}

Var Activation::tangent(Var derivative, Var t) const {
  if (doubles_width()) return mul_tiled(derivative, t);
  return elementwise_mul(derivative, t);
}

Tensor Activation::evaluate(const Tensor& a) const {
  const std::size_t rows = a.rank() == 2 ? a.shape()[0] : 1;
  const std::size_t w = a.cols();
  auto doubled = [&](auto&& f) {
    Shape s = a.shape();
    s.back() = 2 * w;
    Tensor out(s);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        const double x = a[r * w + c];
        out[r * 2 * w + c] = f(x);
        out[r * 2 * w + w + c] = f(-x);
      }
    }
    return out;
  };
  switch (tag_) {
    case ActivationTag::Identity: return a;
    case ActivationTag::Sigmoid: return map(a, &idn::sigmoid);
    case ActivationTag::ReLU: {
      Tensor out = a;
      for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
      return out;
    }
    case ActivationTag::CReLU: return doubled([](double x) { return x > 0.0 ? x : 0.0; });
    case ActivationTag::LipSwish:
    case ActivationTag::CLipSwish: {
      Tape tape(false);
      return apply(tape.constant(a), false).out.value();
    }
    case ActivationTag::LeakyLSwish: {
      const double b = beta();
      const double al = alpha();
      Tensor out = a;
      for (double& v : out.data()) v = al * v + (1.0 - al) * lipswish(v, b);
      return out;
    }
  }
  return a;
}

}  // namespace idn
