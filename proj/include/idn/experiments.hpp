#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "idn/activations.hpp"
#include "idn/lipschitz.hpp"
#include "idn/random.hpp"

namespace idn {

enum class ToyDataset { TwoMoons, TwoCircles, Checkerboard };

std::string to_string(ToyDataset kind);
ToyDataset parse_dataset(std::string_view name);

/// n x 2 samples from a 2-D toy density.
Tensor sample_toy(ToyDataset kind, std::size_t n, Rng& rng);

/// Distance-ratio statistics of an activation at its initial parameters for
/// pairs v, w ~ N(0, scale^2 I_dim).
RatioStats ratio_stats(ActivationTag activation, std::size_t dim, std::size_t n_pairs, double scale, Rng& rng);

struct TableOptions {
  std::vector<std::size_t> dims = {1, 128, 1024};
  std::vector<ActivationTag> activations = {ActivationTag::Identity, ActivationTag::Sigmoid, ActivationTag::LipSwish,
                                            ActivationTag::CLipSwish};
  double scale = 1.0;
  std::size_t n_pairs = 100000;
  std::uint64_t seed = 0;
};

struct TableCell {
  ActivationTag activation = ActivationTag::Identity;
  RatioStats stats;
};

/// One cell per (activation, dim), activation-major. All activations in a column see the same pairs.
std::vector<TableCell> ratio_table(const TableOptions& opts);
/// CSV with header activation,dim,mean,max.
std::string table_report(const std::vector<TableCell>& cells);

}  // namespace idn
