#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mapper_gin {

/// N x 3 coordinates, one point per row.
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Vec3 = Eigen::Vector3d;
using Index = Eigen::Index;

struct PointCloud {
  Points points;
  std::optional<int> label;

  Index size() const { return points.rows(); }
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// Reads the vertex block of an OFF mesh. Faces are validated and dropped.
/// Accepts the malformed "OFF<nv> <nf> <ne>" single-line header.
PointCloud parse_off(std::istream& in);
PointCloud parse_off(std::string_view text);
PointCloud read_off_file(const std::filesystem::path& path);

/// Vertices-only OFF with 9 significant digits.
std::string serialize_off(const PointCloud& pc);

/// Whitespace separated "x y z" lines, 9 significant digits.
void write_xyz(std::ostream& out, const Points& points);

/// (p - centroid) / max(r, 1e-12) where r is the largest distance to the centroid.
PointCloud normalize_unit_sphere(const PointCloud& pc);
Points normalize_unit_sphere(const Points& points);

/// Greedy farthest point sampling. Ties go to the lowest index.
std::vector<Index> farthest_point_sampling(const Points& points, Index n, Index start = 0);

Points take_rows(const Points& points, const std::vector<Index>& rows);

// Synthetic catalog ---------------------------------------------------------

enum class Shape : std::uint8_t { sphere, torus, box, cylinder, cone, two_spheres, plane, helix };

inline constexpr int kShapeCount = 8;

std::string_view shape_name(Shape shape);
/// Throws std::invalid_argument for names outside the catalog.
Shape shape_from_name(std::string_view name);

/// n points sampled uniformly over the shape (area or arclength), normalized
/// to the unit sphere. Deterministic in (shape, n, seed).
PointCloud sample_synthetic(Shape shape, Index n, std::uint64_t seed);

// Datasets ------------------------------------------------------------------

enum class Split : std::uint8_t { train, test };

std::string_view split_name(Split split);
Split split_from_name(std::string_view name);

struct ManifestEntry {
  /// An OFF path or "synthetic:<shape>:<seed>".
  std::string source;
  int label = 0;
  Split split = Split::train;
  std::string name;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names;

  std::vector<ManifestEntry> split(Split which) const;
  /// Throws std::invalid_argument when labels are not dense in [0, C).
  void validate() const;
};

/// Walks <root>/<class>/<split>/<name>.off. Classes and files are sorted by name.
DatasetManifest enumerate_modelnet(const std::filesystem::path& root);

DatasetManifest synthetic_manifest(int classes, int train_per_class, int test_per_class,
                                   std::uint64_t seed);

/// Loads, normalizes and (for OFF sources) subsamples an entry to n points with FPS.
PointCloud load_sample(const ManifestEntry& entry, Index n_points);

// Seeds ---------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0);

}  // namespace mapper_gin
