#pragma once

#include "mapper_gin/model.hpp"
#include "mapper_gin/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace mapper_gin {

/// Everything needed to resume or evaluate a run.
template <typename S>
struct Checkpoint {
  std::uint64_t config_hash = 0;
  int epoch = 0;
  double clean_accuracy = 0.0;
  ModelState<S> model;
  nn::AdamState<S> optimizer;
  /// Textual std::mt19937_64 state.
  std::string rng_state;
};

/// "MCKPT1" record: config, parameter arrays, BatchNorm statistics, Adam
/// moments, epoch, RNG state; CRC32 trailer. Throws CacheError on bad input.
template <typename S>
std::string checkpoint_encode(const Checkpoint<S>& ckpt);
template <typename S>
Checkpoint<S> checkpoint_decode(std::string_view bytes);

template <typename S>
void checkpoint_write(const std::filesystem::path& path, const Checkpoint<S>& ckpt);
template <typename S>
Checkpoint<S> checkpoint_read(const std::filesystem::path& path);

/// Order-sensitive hash of all parameter values; used to show evaluation is read-only.
template <typename S>
std::uint64_t parameter_checksum(const ModelState<S>& model);

}  // namespace mapper_gin
