#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "idn/adam.hpp"
#include "idn/dense_flow.hpp"
#include "idn/run_config.hpp"

namespace idn {

// Binary layout, all integers and doubles little-endian:
//   magic "IDNCKPT\0" (8 bytes), u32 version
//   u64 config length, config JSON bytes
//   u64 iteration, u64 record count
//   per record: u32 name length, name bytes, u32 rank, u64 dims[rank], f64 payload[prod(dims)]
// Record names: "param/<name>", "spectral.u/<weight>", "spectral.sigma/<weight>",
// "adam.m/<name>", "adam.v/<name>", "adam.step", "adam.options".
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes to `path` via a temporary file and rename. `adam` may be null.
void save_checkpoint(const std::string& path, const RunConfig& config, FlowModel& model, const AdamState* adam,
                     std::uint64_t iteration);

struct Checkpoint {
  RunConfig config;
  std::unique_ptr<FlowModel> model;
  std::optional<AdamState> adam;
  std::uint64_t iteration = 0;
};

/// Throws IoError on a malformed file, missing or unexpected records, or shape mismatches.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace idn
