#include "mapper_gin/pointcloud.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <random>

namespace mapper_gin {

namespace {

constexpr std::array<std::string_view, kShapeCount> kShapeNames = {
    "sphere", "torus", "box", "cylinder", "cone", "two-spheres", "plane", "helix"};

constexpr double kPi = std::numbers::pi;

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Vec3 unit_direction(Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    Vec3 v(g(rng), g(rng), g(rng));
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

// Index drawn proportionally to the given areas.
std::size_t pick_by_area(Rng& rng, const std::vector<double>& areas) {
  std::discrete_distribution<std::size_t> d(areas.begin(), areas.end());
  return d(rng);
}

// Antipodal pairs keep the centroid at the origin, so normalization leaves
// every point on the unit sphere.
void sample_sphere(Rng& rng, Points& out) {
  const Index n = out.rows();
  Index i = 0;
  for (; i + 1 < n; i += 2) {
    const Vec3 d = unit_direction(rng);
    out.row(i) = d.transpose();
    out.row(i + 1) = -d.transpose();
  }
  if (i < n) out.row(i) = unit_direction(rng).transpose();
}

void sample_torus(Rng& rng, Points& out) {
  const double major = 1.0;
  const double minor = uniform(rng, 0.25, 0.45);
  for (Index i = 0; i < out.rows(); ++i) {
    double u, v;
    // Rejection on the tube angle gives area-uniform samples.
    do {
      u = uniform(rng, 0.0, 2.0 * kPi);
      v = uniform(rng, 0.0, 2.0 * kPi);
    } while (uniform(rng, 0.0, 1.0) > (major + minor * std::cos(v)) / (major + minor));
    const double ring = major + minor * std::cos(v);
    out.row(i) << ring * std::cos(u), ring * std::sin(u), minor * std::sin(v);
  }
}

void sample_box(Rng& rng, Points& out) {
  const Vec3 half(1.0, uniform(rng, 0.5, 0.9), uniform(rng, 0.3, 0.6));
  const std::vector<double> areas = {half.y() * half.z(), half.x() * half.z(), half.x() * half.y()};
  for (Index i = 0; i < out.rows(); ++i) {
    const auto axis = static_cast<int>(pick_by_area(rng, areas));
    Vec3 p;
    for (int k = 0; k < 3; ++k) p(k) = uniform(rng, -half(k), half(k));
    p(axis) = uniform(rng, 0.0, 1.0) < 0.5 ? -half(axis) : half(axis);
    out.row(i) = p.transpose();
  }
}

void sample_cylinder(Rng& rng, Points& out) {
  const double radius = uniform(rng, 0.35, 0.55);
  const double half_h = 0.8;
  const std::vector<double> areas = {2.0 * kPi * radius * 2.0 * half_h, kPi * radius * radius,
                                     kPi * radius * radius};
  for (Index i = 0; i < out.rows(); ++i) {
    const auto part = pick_by_area(rng, areas);
    const double t = uniform(rng, 0.0, 2.0 * kPi);
    if (part == 0) {
      out.row(i) << radius * std::cos(t), radius * std::sin(t), uniform(rng, -half_h, half_h);
    } else {
      const double r = radius * std::sqrt(uniform(rng, 0.0, 1.0));
      out.row(i) << r * std::cos(t), r * std::sin(t), part == 1 ? -half_h : half_h;
    }
  }
}

void sample_cone(Rng& rng, Points& out) {
  const double radius = uniform(rng, 0.5, 0.8);
  const double height = 1.2;
  const std::vector<double> areas = {kPi * radius * std::hypot(radius, height), kPi * radius * radius};
  for (Index i = 0; i < out.rows(); ++i) {
    const auto part = pick_by_area(rng, areas);
    const double t = uniform(rng, 0.0, 2.0 * kPi);
    const double s = std::sqrt(uniform(rng, 0.0, 1.0));
    if (part == 0) {
      // s is the fraction of the slant length measured from the apex.
      out.row(i) << radius * s * std::cos(t), radius * s * std::sin(t), height * (1.0 - s);
    } else {
      out.row(i) << radius * s * std::cos(t), radius * s * std::sin(t), 0.0;
    }
  }
}

void sample_two_spheres(Rng& rng, Points& out) {
  const double radius = uniform(rng, 0.25, 0.33);
  for (Index i = 0; i < out.rows(); ++i) {
    const double cx = (i % 2 == 0) ? -0.6 : 0.6;
    out.row(i) = (Vec3(cx, 0.0, 0.0) + radius * unit_direction(rng)).transpose();
  }
}

void sample_plane(Rng& rng, Points& out) {
  const double half_w = uniform(rng, 0.5, 1.0);
  for (Index i = 0; i < out.rows(); ++i) {
    out.row(i) << uniform(rng, -1.0, 1.0), uniform(rng, -half_w, half_w), 0.0;
  }
}

void sample_helix(Rng& rng, Points& out) {
  const double radius = 0.5;
  const double turns = uniform(rng, 2.0, 4.0);
  const double t_max = 2.0 * kPi * turns;
  // Constant speed parameterization: uniform t is uniform arclength.
  for (Index i = 0; i < out.rows(); ++i) {
    const double t = uniform(rng, 0.0, t_max);
    out.row(i) << radius * std::cos(t), radius * std::sin(t), -1.0 + 2.0 * t / t_max;
  }
}

}  // namespace

std::string_view shape_name(Shape shape) { return kShapeNames[static_cast<std::size_t>(shape)]; }

Shape shape_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kShapeNames.size(); ++i) {
    if (kShapeNames[i] == name) return static_cast<Shape>(i);
  }
  throw std::invalid_argument("unknown shape '" + std::string(name) + "'");
}

PointCloud sample_synthetic(Shape shape, Index n, std::uint64_t seed) {
  if (n < 8) throw std::invalid_argument("sample_synthetic: n must be >= 8");
  Rng rng(splitmix64(seed));
  Points pts(n, 3);
  switch (shape) {
    case Shape::sphere: sample_sphere(rng, pts); break;
    case Shape::torus: sample_torus(rng, pts); break;
    case Shape::box: sample_box(rng, pts); break;
    case Shape::cylinder: sample_cylinder(rng, pts); break;
    case Shape::cone: sample_cone(rng, pts); break;
    case Shape::two_spheres: sample_two_spheres(rng, pts); break;
    case Shape::plane: sample_plane(rng, pts); break;
    case Shape::helix: sample_helix(rng, pts); break;
  }
  return PointCloud{normalize_unit_sphere(pts), static_cast<int>(shape)};
}

}  // namespace mapper_gin
