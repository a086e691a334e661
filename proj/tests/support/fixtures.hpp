#pragma once

// Small model builders shared by the test suites.

#include <memory>

#include "idn/dense_flow.hpp"
#include "oracles.hpp"

namespace fixture {

inline oracle::Vec to_vec(const idn::Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline idn::Tensor from_vec(const oracle::Vec& v, idn::Shape shape) { return idn::Tensor(std::move(shape), v); }

/// Blocks with no hidden layers whose g(x) = A x, A given as a dim x dim tensor.
inline std::unique_ptr<idn::FlowModel> linear_model(const idn::Tensor& a, std::size_t blocks = 1) {
  idn::ModelConfig c;
  c.dim = a.rows();
  c.blocks = blocks;
  c.depth = 0;
  auto model = idn::build_model(c, 1);
  for (std::size_t k = 0; k < model->size(); ++k) {
    auto& block = dynamic_cast<idn::DenseBlock&>(model->block(k));
    block.proj->raw.value = a;
    block.proj->bias.value.fill(0.0);
    block.proj->converge(5, 10000);
  }
  return model;
}

inline std::unique_ptr<idn::FlowModel> scaled_identity_model(std::size_t dim, double s, std::size_t blocks = 1) {
  return linear_model(idn::Tensor::identity(dim) * s, blocks);
}

inline std::unique_ptr<idn::FlowModel> small_model(std::uint64_t seed, idn::Architecture arch = idn::Architecture::Dense,
                                                   std::size_t depth = 2, std::size_t blocks = 2,
                                                   std::size_t growth = 8) {
  idn::ModelConfig c;
  c.dim = 2;
  c.blocks = blocks;
  c.depth = depth;
  c.growth = growth;
  c.arch = arch;
  return idn::build_model(c, seed);
}

/// Jacobian of g at one point by central differences on the untaped block.
inline oracle::Vec fd_block_jacobian(idn::FlowBlock& block, const oracle::Vec& x) {
  const std::size_t d = block.dim();
  return oracle::finite_diff_jacobian([&](const oracle::Vec& p) { return to_vec(block.g_value(from_vec(p, {1, d}))); },
                                      x, 1e-6);
}

/// ln det(I + J_g(x)) from a finite-difference Jacobian.
inline double fd_block_logdet(idn::FlowBlock& block, const oracle::Vec& x) {
  const std::size_t d = block.dim();
  oracle::Vec m = fd_block_jacobian(block, x);
  for (std::size_t i = 0; i < d; ++i) m[i * d + i] += 1.0;
  return oracle::log_abs_det(m, d);
}

}  // namespace fixture
