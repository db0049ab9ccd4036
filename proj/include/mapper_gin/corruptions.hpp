#pragma once

#include "mapper_gin/pointcloud.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace mapper_gin {

/// Implemented corruption kinds. Occlusion and LiDAR are not generated.
enum class CorruptionKind : std::uint8_t {
  uniform,
  gaussian,
  impulse,
  upsampling,
  background,
  cutout,
  density_inc,
  density_dec,
  rotation,
  shear,
  ffd,
  rbf,
  inv_rbf,
};

inline constexpr int kCorruptionKindCount = 13;
inline constexpr int kMaxSeverity = 5;

inline constexpr std::array<CorruptionKind, kCorruptionKindCount> kAllCorruptions = {
    CorruptionKind::uniform,    CorruptionKind::gaussian,    CorruptionKind::impulse,
    CorruptionKind::upsampling, CorruptionKind::background,  CorruptionKind::cutout,
    CorruptionKind::density_inc, CorruptionKind::density_dec, CorruptionKind::rotation,
    CorruptionKind::shear,      CorruptionKind::ffd,         CorruptionKind::rbf,
    CorruptionKind::inv_rbf};

std::string_view corruption_name(CorruptionKind kind);
/// Throws std::invalid_argument for names outside the catalog.
CorruptionKind corruption_from_name(std::string_view name);

bool is_transformation(CorruptionKind kind);

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::uniform;
  int severity = 1;
  std::uint64_t seed = 0;
  /// Multiplies every displacement magnitude. Only tests set this below 1.
  double amplitude = 1.0;
};

/// Deterministic in (pc, spec). Throws std::invalid_argument for severity outside 1..5.
PointCloud apply_corruption(const PointCloud& pc, const CorruptionSpec& spec);

/// Linear map used by the rotation and shear kinds (identity for other kinds).
Eigen::Matrix3d corruption_matrix(const CorruptionSpec& spec);

/// Rotation angle in radians for a rotation spec.
double rotation_angle(const CorruptionSpec& spec);

/// Seed for a (kind, severity) cell of a suite.
std::uint64_t corruption_seed(std::uint64_t seed, CorruptionKind kind, int severity);

/// Every kind at severities 1..5, kinds in catalog order.
std::vector<std::pair<CorruptionSpec, PointCloud>> corruption_suite(const PointCloud& pc,
                                                                    std::uint64_t seed);

}  // namespace mapper_gin
