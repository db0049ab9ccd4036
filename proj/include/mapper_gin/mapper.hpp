#pragma once

#include "mapper_gin/pointcloud.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mapper_gin {

// Lens ----------------------------------------------------------------------

struct PcaLens {
  Vec3 mean = Vec3::Zero();
  /// Principal directions as columns, descending eigenvalue. Each column is
  /// sign-fixed so its largest-magnitude component is positive.
  Eigen::Matrix3d directions = Eigen::Matrix3d::Identity();
  Vec3 eigenvalues = Vec3::Zero();

  Points project(const Points& points) const;
};

struct LensFit {
  PcaLens lens;
  Points projected;
};

/// Fewer than 3 points or zero covariance fall back to identity directions.
LensFit fit_pca_lens(const Points& points);

// Cover ---------------------------------------------------------------------

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Regular intervals over [a, b] with symmetric gain * width / 2 padding.
struct CoverAxis {
  double start = 0.0;
  double width = 0.0;
  int n_intervals = 1;
  double gain = 0.0;

  Interval interval(int i) const;
  /// Indices of intervals holding v. Degenerate axes map everything to 0.
  std::vector<int> memberships(double v) const;
  bool degenerate() const { return !(width > 0.0); }
};

struct CoverCell {
  std::array<int, 3> index{};
  std::array<Interval, 3> bounds{};
};

struct CoverMembers {
  CoverCell cell;
  std::vector<Index> points;  // ascending
};

std::array<CoverAxis, 3> cover_axes(const Points& projected, int n_intervals, double gain);

/// Non-empty cells in lexicographic (i, j, k) order. Every point lands in at least one cell.
std::vector<CoverMembers> cover_assign(const Points& projected, int n_intervals = 6, double gain = 0.3);

// Clustering ----------------------------------------------------------------

inline constexpr int kNoise = -1;

/// DBSCAN with a canonical visiting order: points sorted lexicographically by
/// coordinate, ties by id. Cluster ids follow discovery order; a border point
/// joins the first cluster that reaches it. `ids` defaults to row numbers.
std::vector<int> dbscan(const Points& points, double eps, int min_pts, std::span<const Index> ids = {});

// Graph ---------------------------------------------------------------------

struct MapperParams {
  int n_intervals = 6;
  double gain = 0.3;
  double eps = 0.1;
  int min_pts = 4;
};

struct NodeProvenance {
  /// Cover cell; {-1, -1, -1} for the all-points fallback node.
  std::array<std::int32_t, 3> cell{-1, -1, -1};
  std::int32_t cluster = -1;

  bool operator==(const NodeProvenance&) const = default;
};

struct MapperGraph {
  std::uint32_t point_count = 0;
  /// Sorted global point indices per node.
  std::vector<std::vector<std::uint32_t>> nodes;
  /// u < v, sorted lexicographically.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  std::vector<NodeProvenance> provenance;

  std::size_t num_nodes() const { return nodes.size(); }
  bool operator==(const MapperGraph&) const = default;
};

MapperGraph build_mapper_graph(const Points& points, const MapperParams& params = {});

/// Nodes that share at least one point index.
std::vector<std::pair<std::uint32_t, std::uint32_t>> overlap_edges(
    const std::vector<std::vector<std::uint32_t>>& nodes, std::uint32_t point_count);

// Cache ---------------------------------------------------------------------

class CacheError : public std::runtime_error {
 public:
  enum class Kind { io, version, truncated, checksum, key_mismatch };
  CacheError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct GraphCache {
  /// Hash of every setting the graphs depend on.
  std::uint64_t key = 0;
  std::vector<MapperGraph> graphs;
};

/// Binary "MGRAPH1" file, little-endian, CRC32 trailer. Written via temp file + rename.
void cache_write(const std::filesystem::path& path, const GraphCache& cache);
GraphCache cache_read(const std::filesystem::path& path);
std::string cache_encode(const GraphCache& cache);
GraphCache cache_decode(std::string_view bytes);

/// Debug export mirroring the binary record fields.
std::string cache_to_json(const GraphCache& cache);

}  // namespace mapper_gin
