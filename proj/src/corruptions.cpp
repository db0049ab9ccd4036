#include "mapper_gin/corruptions.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace mapper_gin {

namespace {

constexpr std::array<std::string_view, kCorruptionKindCount> kNames = {
    "uniform", "gaussian", "impulse", "upsampling", "background", "cutout", "density_inc",
    "density_dec", "rotation", "shear", "ffd", "rbf", "inv_rbf"};

using Rng = std::mt19937_64;

Index scaled_count(double fraction, Index n) { return static_cast<Index>(std::llround(fraction * static_cast<double>(n))); }

// k distinct indices from [0, n) via a partial Fisher-Yates shuffle.
std::vector<Index> sample_without_replacement(Rng& rng, Index n, Index k) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  k = std::min(k, n);
  for (Index i = 0; i < k; ++i) {
    std::uniform_int_distribution<Index> d(i, n - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(d(rng))]);
  }
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

Vec3 uniform_in_ball(Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (;;) {
    Vec3 p(u(rng), u(rng), u(rng));
    if (p.squaredNorm() <= 1.0) return p;
  }
}

Vec3 random_axis(Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    Vec3 v(g(rng), g(rng), g(rng));
    if (v.norm() > 1e-12) return v.normalized();
  }
}

// k nearest neighbors of an anchor (the anchor itself included), ties by index.
std::vector<Index> nearest(const Points& pts, Index anchor, Index k) {
  const Eigen::VectorXd d2 = (pts.rowwise() - pts.row(anchor)).rowwise().squaredNorm();
  std::vector<Index> idx(static_cast<std::size_t>(pts.rows()));
  std::iota(idx.begin(), idx.end(), Index{0});
  k = std::min(k, pts.rows());
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                    [&](Index a, Index b) { return d2(a) < d2(b) || (d2(a) == d2(b) && a < b); });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

Points append_rows(const Points& a, const Points& b) {
  Points out(a.rows() + b.rows(), 3);
  out.topRows(a.rows()) = a;
  out.bottomRows(b.rows()) = b;
  return out;
}

double bernstein3(int i, double t) {
  const double s = 1.0 - t;
  switch (i) {
    case 0: return s * s * s;
    case 1: return 3.0 * t * s * s;
    case 2: return 3.0 * t * t * s;
    default: return t * t * t;
  }
}

Points free_form_deformation(const Points& pts, Rng& rng, double amp) {
  const Eigen::RowVector3d lo = pts.colwise().minCoeff();
  const Eigen::RowVector3d extent = pts.colwise().maxCoeff() - lo;
  std::uniform_real_distribution<double> u(-amp, amp);
  // 4x4x4 control point offsets; the undeformed lattice reproduces x exactly.
  std::array<Vec3, 64> offsets;
  for (auto& o : offsets) o = Vec3(u(rng), u(rng), u(rng));
  Points out = pts;
  for (Index r = 0; r < pts.rows(); ++r) {
    Vec3 t;
    for (int k = 0; k < 3; ++k) t(k) = extent(k) > 1e-12 ? (pts(r, k) - lo(k)) / extent(k) : 0.0;
    Vec3 disp = Vec3::Zero();
    for (int i = 0; i < 4; ++i) {
      const double bi = bernstein3(i, t.x());
      for (int j = 0; j < 4; ++j) {
        const double bij = bi * bernstein3(j, t.y());
        for (int k = 0; k < 4; ++k) disp += bij * bernstein3(k, t.z()) * offsets[static_cast<std::size_t>(16 * i + 4 * j + k)];
      }
    }
    out.row(r) += disp.transpose();
  }
  return out;
}

template <typename Kernel>
Points radial_deformation(const Points& pts, Rng& rng, double amp, Kernel kernel) {
  constexpr int kAnchors = 5;
  std::array<Vec3, kAnchors> anchors;
  std::array<Vec3, kAnchors> weights;
  std::uniform_real_distribution<double> u(-amp, amp);
  for (int j = 0; j < kAnchors; ++j) {
    anchors[static_cast<std::size_t>(j)] = uniform_in_ball(rng);
    weights[static_cast<std::size_t>(j)] = Vec3(u(rng), u(rng), u(rng));
  }
  Points out = pts;
  for (Index r = 0; r < pts.rows(); ++r) {
    const Vec3 x = pts.row(r).transpose();
    Vec3 disp = Vec3::Zero();
    for (int j = 0; j < kAnchors; ++j) {
      disp += weights[static_cast<std::size_t>(j)] * kernel((x - anchors[static_cast<std::size_t>(j)]).squaredNorm() / 0.25);
    }
    out.row(r) += disp.transpose();
  }
  return out;
}

void check_spec(const CorruptionSpec& spec) {
  if (spec.severity < 1 || spec.severity > kMaxSeverity) {
    throw std::invalid_argument("corruption severity must be in 1..5, got " + std::to_string(spec.severity));
  }
  if (static_cast<int>(spec.kind) >= kCorruptionKindCount) throw std::invalid_argument("unknown corruption kind");
}

constexpr double kDegree = std::numbers::pi / 180.0;

}  // namespace

std::string_view corruption_name(CorruptionKind kind) { return kNames[static_cast<std::size_t>(kind)]; }

CorruptionKind corruption_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == name) return static_cast<CorruptionKind>(i);
  }
  throw std::invalid_argument("unknown corruption kind '" + std::string(name) + "'");
}

bool is_transformation(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::rotation:
    case CorruptionKind::shear:
    case CorruptionKind::ffd:
    case CorruptionKind::rbf:
    case CorruptionKind::inv_rbf: return true;
    default: return false;
  }
}

double rotation_angle(const CorruptionSpec& spec) {
  check_spec(spec);
  Rng rng(splitmix64(spec.seed));
  (void)random_axis(rng);
  // Severity s draws from the band (6(s-1), 6s] degrees so angles grow with severity.
  const double s = spec.severity;
  const double frac = 1.0 - std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return spec.amplitude * (6.0 * (s - 1.0) + 6.0 * frac) * kDegree;
}

Eigen::Matrix3d corruption_matrix(const CorruptionSpec& spec) {
  check_spec(spec);
  if (spec.kind == CorruptionKind::rotation) {
    Rng rng(splitmix64(spec.seed));
    const Vec3 axis = random_axis(rng);
    return Eigen::AngleAxisd(rotation_angle(spec), axis).toRotationMatrix();
  }
  if (spec.kind == CorruptionKind::shear) {
    Rng rng(splitmix64(spec.seed));
    const double a = 0.05 * spec.severity * spec.amplitude;
    std::uniform_real_distribution<double> u(-a, a);
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        if (r != c) m(r, c) = a > 0.0 ? u(rng) : 0.0;
      }
    }
    return m;
  }
  return Eigen::Matrix3d::Identity();
}

PointCloud apply_corruption(const PointCloud& pc, const CorruptionSpec& spec) {
  check_spec(spec);
  const double s = spec.severity;
  const double amp = spec.amplitude;
  const Points& in = pc.points;
  const Index n = in.rows();
  Rng rng(splitmix64(spec.seed));
  PointCloud out{in, pc.label};

  switch (spec.kind) {
    case CorruptionKind::uniform: {
      const double a = 0.01 * s * amp;
      if (a == 0.0) break;
      std::uniform_real_distribution<double> u(-a, a);
      for (Index i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k) out.points(i, k) += u(rng);
      break;
    }
    case CorruptionKind::gaussian: {
      const double sigma = 0.01 * s * amp;
      if (sigma == 0.0) break;
      std::normal_distribution<double> g(0.0, sigma);
      for (Index i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k) out.points(i, k) += g(rng);
      break;
    }
    case CorruptionKind::impulse: {
      const Index k = scaled_count(0.02 * s * amp, n);
      for (Index i : sample_without_replacement(rng, n, k)) out.points.row(i) = uniform_in_ball(rng).transpose();
      break;
    }
    case CorruptionKind::upsampling: {
      const Index k = scaled_count(0.1 * s * amp, n);
      std::uniform_int_distribution<Index> pick(0, n - 1);
      std::normal_distribution<double> g(0.0, 0.02);
      Points extra(k, 3);
      for (Index i = 0; i < k; ++i) {
        const Index src = pick(rng);
        for (int c = 0; c < 3; ++c) extra(i, c) = in(src, c) + g(rng);
      }
      out.points = append_rows(in, extra);
      break;
    }
    case CorruptionKind::background: {
      const auto k = static_cast<Index>(std::llround(20.0 * s * amp));
      const Eigen::RowVector3d lo = in.colwise().minCoeff();
      const Eigen::RowVector3d hi = in.colwise().maxCoeff();
      std::uniform_real_distribution<double> u(0.0, 1.0);
      Points extra(k, 3);
      for (Index i = 0; i < k; ++i)
        for (int c = 0; c < 3; ++c) extra(i, c) = lo(c) + u(rng) * (hi(c) - lo(c));
      out.points = append_rows(in, extra);
      break;
    }
    case CorruptionKind::cutout: {
      const Index per_anchor = static_cast<Index>(std::llround(30.0 * amp));
      std::vector<bool> removed(static_cast<std::size_t>(n), false);
      std::uniform_int_distribution<Index> pick(0, n - 1);
      for (int a = 0; a < spec.severity + 1; ++a) {
        const Index anchor = pick(rng);
        for (Index i : nearest(in, anchor, per_anchor)) removed[static_cast<std::size_t>(i)] = true;
      }
      std::vector<Index> keep;
      for (Index i = 0; i < n; ++i)
        if (!removed[static_cast<std::size_t>(i)]) keep.push_back(i);
      out.points = take_rows(in, keep);
      break;
    }
    case CorruptionKind::density_inc: {
      const Index per_anchor = static_cast<Index>(std::llround(40.0 * amp));
      std::uniform_int_distribution<Index> pick(0, n - 1);
      std::normal_distribution<double> g(0.0, 0.01);
      std::vector<Index> sources;
      for (int a = 0; a < spec.severity + 1; ++a) {
        const Index anchor = pick(rng);
        for (Index i : nearest(in, anchor, per_anchor)) sources.push_back(i);
      }
      Points extra(static_cast<Index>(sources.size()), 3);
      for (std::size_t i = 0; i < sources.size(); ++i)
        for (int c = 0; c < 3; ++c) extra(static_cast<Index>(i), c) = in(sources[i], c) + g(rng);
      out.points = append_rows(in, extra);
      break;
    }
    case CorruptionKind::density_dec: {
      const Index drop = scaled_count(0.12 * s * amp, n);
      std::vector<Index> dropped = sample_without_replacement(rng, n, drop);
      std::vector<bool> gone(static_cast<std::size_t>(n), false);
      for (Index i : dropped) gone[static_cast<std::size_t>(i)] = true;
      std::vector<Index> keep;
      for (Index i = 0; i < n; ++i)
        if (!gone[static_cast<std::size_t>(i)]) keep.push_back(i);
      out.points = take_rows(in, keep);
      break;
    }
    case CorruptionKind::rotation:
    case CorruptionKind::shear: {
      const Eigen::Matrix3d m = corruption_matrix(spec);
      out.points = in * m.transpose();
      break;
    }
    case CorruptionKind::ffd:
      out.points = free_form_deformation(in, rng, 0.04 * s * amp);
      break;
    case CorruptionKind::rbf:
      out.points = radial_deformation(in, rng, 0.04 * s * amp, [](double q) { return std::exp(-q); });
      break;
    case CorruptionKind::inv_rbf:
      out.points = radial_deformation(in, rng, 0.04 * s * amp, [](double q) { return 1.0 / std::sqrt(1.0 + q); });
      break;
  }
  return out;
}

std::uint64_t corruption_seed(std::uint64_t seed, CorruptionKind kind, int severity) {
  return derive_seed(seed, static_cast<std::uint64_t>(kind) + 1, static_cast<std::uint64_t>(severity));
}

std::vector<std::pair<CorruptionSpec, PointCloud>> corruption_suite(const PointCloud& pc, std::uint64_t seed) {
  std::vector<std::pair<CorruptionSpec, PointCloud>> out;
  out.reserve(kCorruptionKindCount * kMaxSeverity);
  for (CorruptionKind kind : kAllCorruptions) {
    for (int s = 1; s <= kMaxSeverity; ++s) {
      CorruptionSpec spec{kind, s, corruption_seed(seed, kind, s)};
      out.emplace_back(spec, apply_corruption(pc, spec));
    }
  }
  return out;
}

}  // namespace mapper_gin
