#pragma once

#include "mapper_gin/config.hpp"
#include "mapper_gin/corruptions.hpp"
#include "mapper_gin/mapper.hpp"
#include "mapper_gin/model.hpp"
#include "mapper_gin/pointcloud.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mapper_gin {

/// A required file (graph cache, checkpoint, dataset) is absent.
class MissingPrerequisite : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// MAPPER_GIN_CACHE_DIR when set, otherwise `fallback`.
std::filesystem::path cache_root(const std::filesystem::path& fallback);

DatasetManifest dataset_manifest(const Config& cfg);

/// Cache file for a split label such as "train", "test" or "test-impulse-s3".
std::filesystem::path graph_cache_path(const std::filesystem::path& root, std::string_view label);

/// Reads a cache; nullopt when the file is absent. Refuses (CacheError
/// key_mismatch) a cache built under another config or for another sample count.
std::optional<GraphCache> read_graph_cache(const std::filesystem::path& root, std::string_view label,
                                           std::uint64_t key, std::size_t expected);

enum class GraphPolicy {
  require,  // missing cache is an error
  build,    // build in memory when missing
  store,    // build and write when missing
};

struct SplitData {
  std::vector<ManifestEntry> entries;
  std::vector<Sample> samples;
};

/// Loads one split with graphs attached when `need_graphs` is set.
SplitData load_split(const Config& cfg, Split split, const std::filesystem::path& cache_dir, bool need_graphs,
                     GraphPolicy policy);

/// Corrupted copies of the test split for one cell; graphs come from the cell's
/// cache when present.
std::vector<Sample> corrupted_split(const Config& cfg, const std::vector<Sample>& clean, CorruptionKind kind,
                                    int severity, const std::filesystem::path& cache_dir, bool need_graphs,
                                    GraphPolicy policy);

std::string corrupted_label(CorruptionKind kind, int severity);
std::uint64_t corrupted_key(const Config& cfg, CorruptionKind kind, int severity);

/// Graph policy implied by the dataset: ModelNet40 needs build-graphs first.
GraphPolicy default_policy(const Config& cfg);

}  // namespace mapper_gin
