#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "idn/dense_flow.hpp"
#include "idn/likelihood.hpp"

namespace idn {

/// Everything needed to reproduce a training run.
struct RunConfig {
  std::string dataset = "moons";
  ModelConfig model;
  /// Learnable concatenation weights stay frozen before this iteration.
  std::uint64_t concat_start_iteration = 0;
  double lr = 1e-3;
  std::uint64_t iterations = 50000;
  std::uint64_t batch = 500;
  /// Log-determinant estimator used for the training loss.
  EstimatorConfig estimator;
  std::uint64_t seed = 0;
  std::string out_dir = "run";
  std::uint64_t log_every = 100;
  /// 0 disables periodic checkpoints (the initial and final ones are always written).
  std::uint64_t checkpoint_every = 5000;
  std::uint64_t test_size = 10000;
};

/// Throws ConfigError naming the offending key.
void validate(const RunConfig& config);

/// Flat JSON object; doubles are written with round-trip precision.
std::string config_to_json(const RunConfig& config);
/// Missing keys keep their defaults; unknown keys and wrong types raise ConfigError.
RunConfig config_from_json(std::string_view text);
/// Apply the keys present in `text` on top of `base`.
RunConfig config_merge_json(const RunConfig& base, std::string_view text);

RunConfig load_config(const std::string& path);
void save_config(const std::string& path, const RunConfig& config);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view text);

}  // namespace idn
