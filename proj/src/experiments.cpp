#include "idn/experiments.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace idn {

std::string to_string(ToyDataset kind) {
  switch (kind) {
    case ToyDataset::TwoMoons: return "moons";
    case ToyDataset::TwoCircles: return "circles";
    case ToyDataset::Checkerboard: return "checkerboard";
  }
  return "unknown";
}

ToyDataset parse_dataset(std::string_view name) {
  if (name == "moons" || name == "2moons" || name == "two_moons") return ToyDataset::TwoMoons;
  if (name == "circles" || name == "2circles" || name == "two_circles") return ToyDataset::TwoCircles;
  if (name == "checkerboard") return ToyDataset::Checkerboard;
  throw std::invalid_argument("unknown dataset '" + std::string(name) + "' (expected moons, circles or checkerboard)");
}

Tensor sample_toy(ToyDataset kind, std::size_t n, Rng& rng) {
  if (n == 0) throw std::invalid_argument("sample_toy needs n >= 1");
  Tensor out({n, 2});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr double pi = std::numbers::pi;
  for (std::size_t i = 0; i < n; ++i) {
    double x = 0.0, y = 0.0;
    switch (kind) {
      case ToyDataset::TwoMoons: {
        const bool lower = coin(rng);
        const double t = pi * unit(rng);
        x = lower ? 1.0 - std::cos(t) : std::cos(t);
        y = lower ? 0.5 - std::sin(t) : std::sin(t);
        x = 2.0 * (x + 0.1 * normal(rng)) - 1.0;
        y = 2.0 * (y + 0.1 * normal(rng)) - 0.2;
        break;
      }
      case ToyDataset::TwoCircles: {
        const double r = coin(rng) ? 0.5 : 1.0;
        const double t = 2.0 * pi * unit(rng);
        x = 3.0 * (r * std::cos(t) + 0.08 * normal(rng));
        y = 3.0 * (r * std::sin(t) + 0.08 * normal(rng));
        break;
      }
      case ToyDataset::Checkerboard: {
        const double x1 = -2.0 + 4.0 * unit(rng);
        const double u = unit(rng);
        const double b = coin(rng) ? 1.0 : 0.0;
        const double parity = std::fmod(std::fmod(std::floor(x1), 2.0) + 2.0, 2.0);
        x = 2.0 * x1;
        y = 2.0 * (u - 2.0 * b + parity);
        break;
      }
    }
    out.at(i, 0) = x;
    out.at(i, 1) = y;
  }
  return out;
}

RatioStats ratio_stats(ActivationTag activation, std::size_t dim, std::size_t n_pairs, double scale, Rng& rng) {
  if (n_pairs == 0 || dim == 0) throw std::invalid_argument("ratio_stats needs n_pairs >= 1 and dim >= 1");
  const Activation act(activation, "analysis");
  return empirical_lipschitz([&act](const Tensor& x) { return act.evaluate(x); }, dim, n_pairs, scale, rng);
}

std::vector<TableCell> ratio_table(const TableOptions& opts) {
  std::vector<Activation> acts;
  std::vector<BatchMap> maps;
  for (ActivationTag tag : opts.activations) acts.emplace_back(tag, "analysis");
  for (const Activation& a : acts) maps.push_back([&a](const Tensor& x) { return a.evaluate(x); });
  std::vector<TableCell> cells(opts.activations.size() * opts.dims.size());
  std::uint64_t stream = 0;
  for (std::size_t j = 0; j < opts.dims.size(); ++j) {
    Rng rng = make_rng(opts.seed, stream++);
    const auto stats = empirical_lipschitz(maps, opts.dims[j], opts.n_pairs, opts.scale, rng);
    for (std::size_t i = 0; i < acts.size(); ++i) cells[i * opts.dims.size() + j] = {opts.activations[i], stats[i]};
  }
  return cells;
}

std::string table_report(const std::vector<TableCell>& cells) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << "activation,dim,mean,max\n";
  for (const TableCell& c : cells) {
    os << to_string(c.activation) << ',' << c.stats.dim << ',' << c.stats.mean << ',' << c.stats.max << '\n';
  }
  return os.str();
}

}  // namespace idn
