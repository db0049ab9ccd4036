#include "mapper_gin/pipeline.hpp"

#include "mapper_gin/train_eval.hpp"

#include <cstdio>
#include <cstdlib>

namespace mapper_gin {

std::filesystem::path cache_root(const std::filesystem::path& fallback) {
  const char* env = std::getenv("MAPPER_GIN_CACHE_DIR");
  return env && *env ? std::filesystem::path(env) : fallback;
}

DatasetManifest dataset_manifest(const Config& cfg) {
  const std::string& kind = cfg.get("dataset.kind");
  if (kind == "synthetic") {
    return synthetic_manifest(static_cast<int>(cfg.get_int("synthetic.classes")),
                              static_cast<int>(cfg.get_int("synthetic.samples_per_class")),
                              static_cast<int>(cfg.get_int("synthetic.test_per_class")),
                              static_cast<std::uint64_t>(cfg.get_int("synthetic.seed")));
  }
  if (kind == "modelnet40") {
    const std::filesystem::path root = cfg.get("dataset.root");
    if (root.empty() || !std::filesystem::is_directory(root)) {
      throw MissingPrerequisite("dataset.root '" + root.string() + "' is not a directory");
    }
    return enumerate_modelnet(root);
  }
  throw std::invalid_argument("dataset.kind must be synthetic or modelnet40, got '" + kind + "'");
}

std::filesystem::path graph_cache_path(const std::filesystem::path& root, std::string_view label) {
  return root / ("graphs-" + std::string(label) + ".mgraph");
}

std::optional<GraphCache> read_graph_cache(const std::filesystem::path& root, std::string_view label,
                                           std::uint64_t key, std::size_t expected) {
  const auto path = graph_cache_path(root, label);
  if (!std::filesystem::exists(path)) return std::nullopt;
  GraphCache cache = cache_read(path);
  if (cache.key != key) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "cache key %016llx does not match the current config (%016llx)",
                  static_cast<unsigned long long>(cache.key), static_cast<unsigned long long>(key));
    throw CacheError(CacheError::Kind::key_mismatch,
                     path.string() + ": " + buf + "; rerun build-graphs with this config");
  }
  if (cache.graphs.size() != expected) {
    throw CacheError(CacheError::Kind::key_mismatch, path.string() + ": holds " + std::to_string(cache.graphs.size()) +
                                                         " graphs, dataset has " + std::to_string(expected));
  }
  return cache;
}

namespace {

void attach_graphs(std::vector<Sample>& samples, const Config& cfg, const std::filesystem::path& cache_dir,
                   std::string_view label, std::uint64_t key, GraphPolicy policy) {
  if (auto cache = read_graph_cache(cache_dir, label, key, samples.size())) {
    for (std::size_t i = 0; i < samples.size(); ++i) samples[i].graph = std::move(cache->graphs[i]);
    return;
  }
  if (policy == GraphPolicy::require) {
    throw MissingPrerequisite("no graph cache for '" + std::string(label) + "' at " +
                              graph_cache_path(cache_dir, label).string() + "; run `mapper_gin build-graphs` first");
  }
  const MapperParams params = cfg.mapper();
  GraphCache cache;
  cache.key = key;
  for (Sample& s : samples) {
    s.graph = build_mapper_graph(s.points, params);
    if (policy == GraphPolicy::store) cache.graphs.push_back(s.graph);
  }
  if (policy == GraphPolicy::store) {
    std::filesystem::create_directories(cache_dir);
    cache_write(graph_cache_path(cache_dir, label), cache);
  }
}

}  // namespace

SplitData load_split(const Config& cfg, Split split, const std::filesystem::path& cache_dir, bool need_graphs,
                     GraphPolicy policy) {
  const DatasetManifest manifest = dataset_manifest(cfg);
  SplitData data;
  data.entries = manifest.split(split);
  const Index n_points = cfg.get_int("dataset.points");
  if (n_points < 1) throw std::invalid_argument("dataset.points must be >= 1");
  data.samples.reserve(data.entries.size());
  for (const ManifestEntry& e : data.entries) {
    PointCloud pc = load_sample(e, n_points);
    Sample s;
    s.points = std::move(pc.points);
    s.label = e.label;
    data.samples.push_back(std::move(s));
  }
  if (need_graphs) {
    const std::string label(split_name(split));
    attach_graphs(data.samples, cfg, cache_dir, label, cfg.graph_key(label), policy);
  }
  return data;
}

std::string corrupted_label(CorruptionKind kind, int severity) {
  return "test-" + std::string(corruption_name(kind)) + "-s" + std::to_string(severity);
}

std::uint64_t corrupted_key(const Config& cfg, CorruptionKind kind, int severity) {
  return cfg.graph_key(corrupted_label(kind, severity) + "-seed" + cfg.get("corruption.seed"));
}

std::vector<Sample> corrupted_split(const Config& cfg, const std::vector<Sample>& clean, CorruptionKind kind,
                                    int severity, const std::filesystem::path& cache_dir, bool need_graphs,
                                    GraphPolicy policy) {
  const auto seed = static_cast<std::uint64_t>(cfg.get_int("corruption.seed"));
  std::vector<Sample> out = corrupt_samples(clean, kind, severity, seed, cfg.mapper(), false);
  if (need_graphs) {
    // Cells are cheap to rebuild, so a missing cell cache is never fatal.
    const GraphPolicy p = policy == GraphPolicy::require ? GraphPolicy::store : policy;
    attach_graphs(out, cfg, cache_dir, corrupted_label(kind, severity), corrupted_key(cfg, kind, severity), p);
  }
  return out;
}

GraphPolicy default_policy(const Config& cfg) {
  return cfg.get("dataset.kind") == "modelnet40" ? GraphPolicy::require : GraphPolicy::build;
}

}  // namespace mapper_gin
