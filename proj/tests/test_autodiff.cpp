#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "fixtures.hpp"
#include "idn/activations.hpp"
#include "idn/adam.hpp"
#include "idn/autodiff.hpp"
#include "idn/dense_flow.hpp"
#include "idn/likelihood.hpp"
#include "idn/random.hpp"

using namespace idn;
using fixture::to_vec;

namespace {

using Build = std::function<Var(std::vector<Var>&)>;

// loss = sum(R * f(inputs)) for a fixed random R; compares tape gradients with central differences.
double worst_grad_error(const Build& f, std::vector<Tensor> inputs, std::uint64_t seed = 7) {
  Tensor weights;
  auto loss_value = [&](const std::vector<Tensor>& in, Tape& tape, std::vector<Var>& vars) {
    vars.clear();
    for (const Tensor& t : in) vars.push_back(tape.variable(t));
    Var out = f(vars);
    if (weights.empty()) {
      Rng rng = make_rng(seed);
      weights = normal_tensor(out.shape(), 1.0, rng);
    }
    return sum(elementwise_mul(out, tape.constant(weights)));
  };
  Tape tape;
  std::vector<Var> vars;
  Var loss = loss_value(inputs, tape, vars);
  tape.backward(loss);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const oracle::Vec analytic = to_vec(tape.grad(vars[k]));
    const oracle::Vec numeric = oracle::finite_diff_gradient(
        [&](const oracle::Vec& p) {
          std::vector<Tensor> in = inputs;
          in[k] = fixture::from_vec(p, inputs[k].shape());
          Tape t(false);
          std::vector<Var> vs;
          return loss_value(in, t, vs).value().item();
        },
        to_vec(inputs[k]));
    worst = std::max(worst, oracle::max_rel_err(analytic, numeric));
  }
  return worst;
}

Tensor randn(Shape s, std::uint64_t seed, double scale = 1.0) {
  Rng rng = make_rng(seed, 99);
  return normal_tensor(std::move(s), scale, rng);
}

}  // namespace

TEST(Tensor, ConcatFeatures) {
  Tape tape;
  Var c = concat_features(tape.constant(Tensor::vector({1, 2})), tape.constant(Tensor::vector({3})));
  EXPECT_EQ(to_vec(c.value()), (oracle::Vec{1, 2, 3}));
}

TEST(Tensor, IdentityMatmul) {
  const Tensor x = Tensor::vector({0.3, -1.7});
  EXPECT_EQ(to_vec(matmul(Tensor::identity(2), x)), to_vec(x));
}

TEST(Tensor, ShapeErrorNamesBothShapes) {
  Tape tape;
  try {
    add(tape.constant(Tensor({2, 3})), tape.constant(Tensor({3, 2})));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3,2]"), std::string::npos) << msg;
  }
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Autodiff, ConcatVjpSplitsCotangent) {
  Tape tape;
  Var a = tape.variable(Tensor::vector({1, 2}));
  Var b = tape.variable(Tensor::vector({3}));
  Var c = concat_features(a, b);
  const Tensor cot = Tensor::vector({0.5, -2.0, 7.0});
  EXPECT_EQ(to_vec(tape.vjp(c, a, cot)), (oracle::Vec{0.5, -2.0}));
  EXPECT_EQ(to_vec(tape.vjp(c, b, cot)), (oracle::Vec{7.0}));
}

TEST(Autodiff, SumGradientIsOnes) {
  Tape tape;
  Var x = tape.variable(Tensor::vector({0.1, -4, 2}));
  tape.backward(sum(x));
  EXPECT_EQ(to_vec(tape.grad(x)), (oracle::Vec{1, 1, 1}));
}

TEST(Autodiff, SquareGradient) {
  Tape tape;
  Var x = tape.variable(Tensor::vector({1, 2}));
  tape.backward(sum(elementwise_mul(x, x)));
  EXPECT_EQ(to_vec(tape.grad(x)), (oracle::Vec{2, 4}));
}

TEST(Autodiff, NonScalarLossRejected) {
  Tape tape;
  Var x = tape.variable(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(x), ShapeError);
}

TEST(Autodiff, VjpIdentityAndLinear) {
  const Tensor x = Tensor::matrix(2, 1, {0.4, -0.9});
  const Tensor v = Tensor::matrix(2, 1, {1.5, 2.5});
  EXPECT_EQ(to_vec(vjp([](Var in) { return in; }, x, v)), to_vec(v));
  const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  const Tensor got = vjp([&](Var in) { return matmul(in.tape().constant(a), in); }, x, v);
  EXPECT_EQ(to_vec(got), to_vec(matmul(transpose(a), v)));
  EXPECT_THROW(vjp([](Var in) { return in; }, x, Tensor::vector({1, 2, 3})), ShapeError);
}

TEST(Autodiff, UntapedRecordsValuesOnly) {
  Tape tape(false);
  Var x = tape.variable(Tensor::vector({1, 2}));
  Var y = sum(elementwise_mul(x, x));
  EXPECT_DOUBLE_EQ(y.value().item(), 5.0);
}

TEST(AutodiffGrad, Arithmetic) {
  EXPECT_LT(worst_grad_error([](auto& v) { return matmul(v[0], v[1]); }, {randn({3, 4}, 1), randn({4, 2}, 2)}), 1e-7);
  EXPECT_LT(worst_grad_error([](auto& v) { return transpose(v[0]); }, {randn({3, 4}, 1)}), 1e-7);
  EXPECT_LT(worst_grad_error([](auto& v) { return sub(add(v[0], v[1]), scalar_mul(v[0], 3.0)); },
                             {randn({3, 2}, 1), randn({3, 2}, 2)}),
            1e-7);
  EXPECT_LT(worst_grad_error([](auto& v) { return negate(elementwise_mul(v[0], v[1])); },
                             {randn({3, 2}, 1), randn({3, 2}, 2)}),
            1e-7);
  EXPECT_LT(worst_grad_error([](auto& v) { return shift(scale(v[0], v[1]), v[1]); },
                             {randn({3, 2}, 1), randn({1}, 2)}),
            1e-7);
  EXPECT_LT(worst_grad_error([](auto& v) { return add_row(v[0], v[1]); }, {randn({3, 2}, 1), randn({2}, 2)}), 1e-7);
}

TEST(AutodiffGrad, Reductions) {
  EXPECT_LT(worst_grad_error([](auto& v) { return sum_features(v[0]); }, {randn({3, 4}, 1)}), 1e-7);
  EXPECT_LT(worst_grad_error([](auto& v) { return mean(v[0]); }, {randn({3, 4}, 1)}), 1e-7);
  EXPECT_LT(worst_grad_error([](auto& v) { return log(exp(v[0]) * 2.0); }, {randn({3, 4}, 1)}), 1e-7);
}

TEST(AutodiffGrad, FeatureOps) {
  EXPECT_LT(worst_grad_error([](auto& v) { return concat_features({v[0], v[1], v[0]}); },
                             {randn({3, 2}, 1), randn({3, 1}, 2)}),
            1e-7);
  EXPECT_LT(worst_grad_error(
                [](auto& v) {
                  auto parts = split_features(v[0], {1, 3});
                  return concat_features(parts[1], elementwise_mul(parts[0], parts[0]));
                },
                {randn({3, 4}, 1)}),
            1e-7);
  EXPECT_LT(worst_grad_error([](auto& v) { return linear(v[0], v[1], v[2]); },
                             {randn({5, 3}, 1), randn({4, 3}, 2), randn({4}, 3)}),
            1e-7);
  EXPECT_LT(worst_grad_error([](auto& v) { return linear(v[0], v[1]); }, {randn({5, 3}, 1), randn({4, 3}, 2)}), 1e-7);
  EXPECT_LT(worst_grad_error([](auto& v) { return concat_scaled(v[0], v[1], v[2], v[3]); },
                             {randn({3, 2}, 1), randn({1}, 2), randn({3, 5}, 3), randn({1}, 4)}),
            1e-7);
  EXPECT_LT(worst_grad_error([](auto& v) { return mul_tiled(v[0], v[1]); }, {randn({3, 6}, 1), randn({3, 3}, 2)}),
            1e-7);
}

TEST(AutodiffGrad, Activations) {
  EXPECT_LT(worst_grad_error([](auto& v) { return sigmoid(v[0]); }, {randn({3, 4}, 1, 3.0)}), 1e-7);
  EXPECT_LT(worst_grad_error([](auto& v) { return sigmoid_derivative(v[0]); }, {randn({3, 4}, 1, 3.0)}), 1e-7);
  EXPECT_LT(worst_grad_error([](auto& v) { return softplus(v[0]); }, {randn({3, 4}, 1, 3.0)}), 1e-7);
  EXPECT_LT(worst_grad_error([](auto& v) { return lipswish(v[0], v[1]); }, {randn({3, 4}, 1, 3.0), randn({1}, 2)}),
            1e-7);
  EXPECT_LT(worst_grad_error([](auto& v) { return lipswish_derivative(v[0], v[1]); },
                             {randn({3, 4}, 1, 3.0), randn({1}, 2)}),
            1e-7);
  for (bool doubled : {false, true}) {
    EXPECT_LT(worst_grad_error(
                  [&](auto& v) {
                    SwishPair p = lipswish_fused(v[0], v[1], 0.9, doubled, true);
                    return concat_features(p.out, p.derivative);
                  },
                  {randn({3, 4}, 1, 3.0), Tensor::vector({1.3})}),
              1e-7)
        << "doubled=" << doubled;
  }
}

TEST(AutodiffGrad, UnitCircleWeights) {
  EXPECT_LT(worst_grad_error(
                [](auto& v) {
                  auto [a, b] = unit_circle_weights(v[0], v[1]);
                  return concat_features(a, b);
                },
                {Tensor::vector({0.3}), Tensor::vector({-1.2})}),
            1e-7);
}

TEST(AutodiffGrad, LogDetIdentityPlus) {
  Tensor m = randn({4, 9}, 5, 0.2);
  EXPECT_LT(worst_grad_error([](auto& v) { return log_det_identity_plus(v[0], 3); }, {m}), 1e-6);
}

TEST(Adam, ZeroGradientLeavesParameter) {
  Parameter p("p", Tensor::vector({1.0, -2.0}));
  p.grad = Tensor({2});
  std::vector<Parameter*> ps{&p};
  AdamState st = adam_init(ps);
  for (int i = 0; i < 5; ++i) adam_step(ps, st);
  EXPECT_EQ(to_vec(p.value), (oracle::Vec{1.0, -2.0}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter p("p", Tensor::vector({0.5}));
  p.grad = Tensor::vector({1.0});
  std::vector<Parameter*> ps{&p};
  AdamState st = adam_init(ps, {.lr = 0.001});
  adam_step(ps, st);
  // m_hat = 1, v_hat = 1: step = lr / (1 + eps)
  EXPECT_NEAR(p.value[0], 0.5 - 0.001 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, UninitializedStateRejected) {
  Parameter p("p", Tensor::vector({0.5}));
  p.grad = Tensor::vector({1.0});
  std::vector<Parameter*> ps{&p};
  AdamState st;
  EXPECT_THROW(adam_step(ps, st), std::logic_error);
}

TEST(Adam, Deterministic) {
  auto run = [] {
    Rng rng = make_rng(3);
    Parameter p("p", normal_tensor({4}, 1.0, rng));
    std::vector<Parameter*> ps{&p};
    AdamState st = adam_init(ps);
    for (int i = 0; i < 50; ++i) {
      p.grad = normal_tensor({4}, 1.0, rng);
      adam_step(ps, st);
    }
    return to_vec(p.value);
  };
  EXPECT_EQ(run(), run());
}

TEST(Random, StreamsAreIndependentAndReproducible) {
  Rng a = make_rng(5, 1), b = make_rng(5, 1), c = make_rng(5, 2);
  const auto x = to_vec(normal_tensor({8}, 1.0, a));
  EXPECT_EQ(x, to_vec(normal_tensor({8}, 1.0, b)));
  EXPECT_NE(x, to_vec(normal_tensor({8}, 1.0, c)));
  const Tensor r = rademacher_tensor({1000}, a);
  for (double v : r.data()) EXPECT_TRUE(v == 1.0 || v == -1.0);
}
