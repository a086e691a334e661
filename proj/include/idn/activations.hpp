#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "idn/autodiff.hpp"

namespace idn {

/// Divisor that makes x * sigmoid(beta x) 1-Lipschitz.
inline constexpr double kLipSwishDivisor = 1.1;
/// Raw (pre-softplus) initial beta for the LipSwish family.
inline constexpr double kInitialRawBeta = 0.5;
/// Raw (pre-sigmoid) initial alpha for LeakyLSwish.
inline constexpr double kInitialRawAlpha = -3.0;

// Scalar kernels.
double sigmoid(double x);
double softplus(double x);
double inverse_softplus(double y);
double lipswish(double x, double beta);
double lipswish_derivative(double x, double beta);

/// Certified Lipschitz constant of x -> [LipSwish(x); LipSwish(-x)]:
/// sup_x sqrt(phi'(x)^2 + phi'(-x)^2), found by a grid over [-50/beta, 50/beta]
/// followed by golden-section refinement. Throws std::invalid_argument for beta <= 0.
double clipswish_bound(double beta);

// Taped elementwise primitives with analytic vector-Jacobian products.
Var sigmoid(Var x);
Var sigmoid_derivative(Var x);
Var softplus(Var x);
Var relu(Var x);
/// Heaviside step (derivative of relu); carries no gradient.
Var relu_derivative(Var x);
/// beta is a one-element tensor.
Var lipswish(Var x, Var beta);
Var lipswish_derivative(Var x, Var beta);

struct SwishPair {
  Var out;
  Var derivative;
};
/// k * LipSwish(x) and its elementwise derivative from one sigmoid evaluation.
/// With `doubled` the outputs are [k LipSwish(x); k LipSwish(-x)] and
/// [k LipSwish'(x); -k LipSwish'(-x)] along the feature axis.
SwishPair lipswish_fused(Var x, Var beta, double k, bool doubled, bool with_derivative);

enum class ActivationTag { Sigmoid, ReLU, CReLU, LipSwish, LeakyLSwish, CLipSwish, Identity };

std::string to_string(ActivationTag tag);
ActivationTag parse_activation(std::string_view name);

/// An activation together with its learnable parameters.
///
/// CReLU and CLipSwish map width w to 2w; everything else preserves width.
class Activation {
 public:
  Activation(ActivationTag tag, const std::string& name_prefix);

  ActivationTag tag() const { return tag_; }
  bool doubles_width() const;
  std::size_t output_width(std::size_t input_width) const;
  /// Certified upper bound on the l2 Lipschitz constant.
  double lipschitz_constant() const;

  /// softplus(raw_beta); meaningful for the LipSwish family.
  double beta() const;
  /// sigmoid(raw_alpha); meaningful for LeakyLSwish.
  double alpha() const;

  std::vector<Parameter*> parameters();
  Parameter* raw_beta() { return raw_beta_.get(); }
  Parameter* raw_alpha() { return raw_alpha_.get(); }

  struct Applied {
    Var out;
    /// Elementwise derivative, same width as `out`; invalid unless requested.
    Var derivative;
  };

  /// Taped application to pre-activations `a`.
  Applied apply(Var a, bool with_derivative) const;
  /// Directional derivative given the elementwise derivative from apply().
  Var tangent(Var derivative, Var t) const;

  /// Untaped evaluation.
  Tensor evaluate(const Tensor& a) const;

 private:
  double cached_bound() const;

  ActivationTag tag_;
  std::unique_ptr<Parameter> raw_beta_;
  std::unique_ptr<Parameter> raw_alpha_;
};

}  // namespace idn
