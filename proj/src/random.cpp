#include "idn/random.hpp"

namespace idn {

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x1d3e5u};
  return Rng(seq);
}

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Tensor rademacher_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  std::uint64_t bits = 0;
  int left = 0;
  for (double& v : t.data()) {
    if (left == 0) {
      bits = rng();
      left = 64;
    }
    v = (bits & 1u) ? 1.0 : -1.0;
    bits >>= 1;
    --left;
  }
  return t;
}

}  // namespace idn
