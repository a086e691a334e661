#pragma once

#include <cstdint>
#include <random>

#include "idn/tensor.hpp"

namespace idn {

using Rng = std::mt19937_64;

/// Independent generator for (seed, stream); used to give each consumer its own sequence.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

Tensor normal_tensor(Shape shape, double stddev, Rng& rng);
Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng);
/// Entries uniformly in {-1, +1}.
Tensor rademacher_tensor(Shape shape, Rng& rng);

}  // namespace idn
