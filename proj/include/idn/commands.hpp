#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "idn/checkpoint.hpp"
#include "idn/experiments.hpp"
#include "idn/inversion.hpp"
#include "idn/likelihood.hpp"
#include "idn/run_config.hpp"

namespace idn {

// ---------------------------------------------------------------------------
// Lipschitz certification

struct BlockLipschitz {
  /// Largest exact singular value over the block's effective weights.
  double max_sigma = 0.0;
  /// Analytic upper bound on Lip(g) from the layer rules.
  double bound = 0.0;
  /// Largest ||g(v) - g(w)|| / ||v - w|| over the sampled pairs.
  double empirical = 0.0;
};

struct LipschitzReport {
  std::vector<BlockLipschitz> blocks;
  double max_sigma = 0.0;
  double max_empirical = 0.0;
};

/// Exact sigma_max of every effective weight (SVD) and empirical Lip(g) per block on
/// pairs v, w ~ N(0, scale^2 I).
LipschitzReport lipschitz_check(FlowModel& model, std::size_t n_pairs, double scale, Rng& rng);

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  std::string out_dir;
  std::string checkpoint;
  std::string metrics;
  std::uint64_t iterations = 0;
  std::size_t param_count = 0;
  double final_train_nll = 0.0;
  double test_nll = 0.0;
  std::size_t warnings = 0;
  double seconds = 0.0;
};

/// Maximum-likelihood training on fresh toy batches.
///
/// Writes into config.out_dir: config.json, metrics.csv (iteration,train_nll,mean_eta1,mean_eta2),
/// warnings.csv, checkpoint.bin (initial, periodic, final) and summary.json. Before the final
/// checkpoint every spectral estimate is refreshed to convergence. A non-finite loss or
/// gradient raises NumericError naming the last good checkpoint.
TrainResult train(const RunConfig& config, std::ostream* progress = nullptr);

std::string to_json(const TrainResult& r);

/// Mean eta-hat over all learnable (or fixed) concatenations.
std::pair<double, double> mean_concat_weights(FlowModel& model);

// ---------------------------------------------------------------------------
// Evaluation and sampling

/// "normal" draws standard normal data of the model's dimension; otherwise a toy dataset name.
Tensor draw_dataset(const std::string& name, std::size_t n, std::size_t dim, Rng& rng);

struct EvalOptions {
  /// Empty: the dataset from the checkpoint's config.
  std::string dataset;
  std::uint64_t n = 10000;
  /// Defaults to the config seed, which reproduces the training run's held-out set.
  std::optional<std::uint64_t> seed;
  EstimatorConfig estimator;
};

struct EvalReport {
  std::string dataset;
  std::uint64_t n = 0;
  EstimatorConfig estimator;
  double nll = 0.0;
  /// Standard error of the mean over samples.
  double stderr_nll = 0.0;
  /// Mean log-determinant of each block.
  std::vector<double> block_logdets;
};

EvalReport evaluate(FlowModel& model, const RunConfig& config, const EvalOptions& opts);
std::string to_json(const EvalReport& r);

struct InvertCheckReport {
  std::uint64_t n = 0;
  double max_error = 0.0;
  double mean_error = 0.0;
  int max_iterations = 0;
};

/// Round-trip x -> F(x) -> F^{-1}(F(x)) on n points of the config's dataset.
InvertCheckReport invert_check(FlowModel& model, const RunConfig& config, std::uint64_t n, std::uint64_t seed,
                               const InversionOptions& opts);
std::string to_json(const InvertCheckReport& r);

/// CSV with header x0,...,x{d-1}.
void write_samples_csv(const std::string& path, const Tensor& x);

// ---------------------------------------------------------------------------
// Density grids (d = 2)

struct GridOptions {
  double xmin = -4.0;
  double xmax = 4.0;
  double ymin = -4.0;
  double ymax = 4.0;
  std::size_t resolution = 100;
};

struct DensityGrid {
  GridOptions options;
  /// resolution x resolution, row i is the i-th y cell from ymin upward.
  Tensor density;
  /// Riemann sum of the density over the bounds.
  double mass = 0.0;
  double max_density = 0.0;
};

/// Exact density at cell centers.
DensityGrid density_grid(FlowModel& model, const GridOptions& opts);
/// Header x,y,density then one row per cell.
void write_grid_csv(const std::string& path, const DensityGrid& grid);
/// Binary PPM heat image, top row = ymax.
void write_grid_ppm(const std::string& path, const DensityGrid& grid);
/// 4-connected components of cells with density >= fraction * max.
std::size_t count_components(const DensityGrid& grid, double fraction);
std::string to_json(const DensityGrid& grid, std::size_t components);

// ---------------------------------------------------------------------------
// Activation analysis

struct BoundEntry {
  ActivationTag activation;
  double beta = 0.0;
  double bound = 0.0;
};

/// Certified Lipschitz constant of `activation` for each beta (betas ignored where irrelevant).
std::vector<BoundEntry> activation_bounds(ActivationTag activation, const std::vector<double>& betas);
std::string to_json(const std::vector<BoundEntry>& entries);

}  // namespace idn
