#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mapper_gin/corruptions.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>

#include <cmath>

using namespace mapper_gin;

namespace {

PointCloud cloud(Index n = 1024, std::uint64_t seed = 3) { return sample_synthetic(Shape::torus, n, seed); }

double max_distance_change(const Points& a, const Points& b) {
  double worst = 0.0;
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = i + 1; j < a.rows(); ++j) {
      worst = std::max(worst, std::abs((a.row(i) - a.row(j)).norm() - (b.row(i) - b.row(j)).norm()));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("names round trip") {
  for (auto kind : kAllCorruptions) CHECK(corruption_from_name(corruption_name(kind)) == kind);
  CHECK_THROWS_AS(corruption_from_name("occlusion"), std::invalid_argument);
  CHECK(is_transformation(CorruptionKind::rbf));
  CHECK_FALSE(is_transformation(CorruptionKind::impulse));
}

TEST_CASE("severity outside 1..5 is rejected") {
  CHECK_THROWS_AS(apply_corruption(cloud(64), {CorruptionKind::uniform, 0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(apply_corruption(cloud(64), {CorruptionKind::uniform, 6, 0}), std::invalid_argument);
}

TEST_CASE("density_dec keeps round(N (1 - 0.12 s)) points") {
  const auto pc = cloud();
  for (int s = 1; s <= 5; ++s) {
    const auto out = apply_corruption(pc, {CorruptionKind::density_dec, s, 9});
    CHECK(out.size() == static_cast<Index>(std::lround(1024.0 * (1.0 - 0.12 * s))));
  }
  CHECK(apply_corruption(pc, {CorruptionKind::density_dec, 5, 9}).size() == 410);
}

TEST_CASE("point counts follow the kind") {
  const auto pc = cloud(512);
  const Index n = pc.size();
  for (int s = 1; s <= 5; ++s) {
    for (auto kind : kAllCorruptions) {
      const auto out = apply_corruption(pc, {kind, s, 17});
      CAPTURE(corruption_name(kind));
      CHECK(out.points.allFinite());
      switch (kind) {
        case CorruptionKind::upsampling:
          CHECK(out.size() == n + std::lround(0.1 * s * n));
          break;
        case CorruptionKind::background:
          CHECK(out.size() == n + 20 * s);
          break;
        case CorruptionKind::density_inc:
          CHECK(out.size() > n);
          break;
        case CorruptionKind::cutout:
        case CorruptionKind::density_dec:
          CHECK(out.size() < n);
          break;
        default:
          CHECK(out.size() == n);
      }
    }
  }
}

TEST_CASE("zero amplitude leaves the cloud unchanged") {
  const auto pc = cloud(256);
  for (auto kind : {CorruptionKind::uniform, CorruptionKind::gaussian, CorruptionKind::shear, CorruptionKind::rotation,
                    CorruptionKind::ffd, CorruptionKind::rbf, CorruptionKind::inv_rbf}) {
    CAPTURE(corruption_name(kind));
    const auto out = apply_corruption(pc, {kind, 5, 4, 0.0});
    CHECK((out.points - pc.points).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("rotation is an isometry with angles growing in severity") {
  const auto pc = cloud(200, 8);
  double prev = 0.0;
  for (int s = 1; s <= 5; ++s) {
    const CorruptionSpec spec{CorruptionKind::rotation, s, corruption_seed(5, CorruptionKind::rotation, s)};
    const auto out = apply_corruption(pc, spec);
    CHECK(max_distance_change(pc.points, out.points) < 1e-9);
    const Eigen::Matrix3d r = corruption_matrix(spec);
    CHECK((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    const double recovered = std::acos(std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0));
    CHECK(recovered == doctest::Approx(rotation_angle(spec)).epsilon(1e-9));
    CHECK(recovered > prev);
    CHECK(recovered <= 6.0 * s * M_PI / 180.0 + 1e-12);
    prev = recovered;
  }
}

TEST_CASE("shear keeps collinear points collinear") {
  Points line(3, 3);
  line << 0.1, 0.2, 0.3, 0.3, 0.1, -0.2, 0.5, 0.0, -0.7;  // middle is the midpoint
  const auto out = apply_corruption({line, std::nullopt}, {CorruptionKind::shear, 5, 2});
  const Eigen::RowVector3d d1 = out.points.row(1) - out.points.row(0);
  const Eigen::RowVector3d d2 = out.points.row(2) - out.points.row(0);
  CHECK(d1.cross(d2).norm() < 1e-12);
}

TEST_CASE("noise displacement does not shrink with severity") {
  const auto pc = cloud(512, 1);
  for (auto kind : {CorruptionKind::uniform, CorruptionKind::gaussian, CorruptionKind::impulse}) {
    CAPTURE(corruption_name(kind));
    double prev = 0.0;
    for (int s = 1; s <= 5; ++s) {
      double total = 0.0;
      for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto out = apply_corruption(pc, {kind, s, seed});
        total += (out.points - pc.points).rowwise().norm().mean();
      }
      CHECK(total >= prev);
      prev = total;
    }
  }
}

TEST_CASE("background points stay inside the bounding box") {
  const auto pc = cloud(300, 2);
  const Eigen::RowVector3d lo = pc.points.colwise().minCoeff();
  const Eigen::RowVector3d hi = pc.points.colwise().maxCoeff();
  const auto out = apply_corruption(pc, {CorruptionKind::background, 5, 3});
  CHECK(out.points.topRows(pc.size()) == pc.points);
  for (Index i = pc.size(); i < out.size(); ++i) {
    CHECK((out.points.row(i).array() >= lo.array()).all());
    CHECK((out.points.row(i).array() <= hi.array()).all());
  }
}

TEST_CASE("suite has 65 deterministic cells") {
  const auto pc = cloud(128, 4);
  const auto a = corruption_suite(pc, 21);
  const auto b = corruption_suite(pc, 21);
  REQUIRE(a.size() == 65);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first.kind == b[i].first.kind);
    CHECK(a[i].first.severity == b[i].first.severity);
    CHECK(a[i].second.points == b[i].second.points);
  }
  CHECK(a[0].first.kind == kAllCorruptions[0]);
  CHECK(a[64].first.severity == 5);
  CHECK(a[0].second.points != corruption_suite(pc, 22)[0].second.points);
}

TEST_CASE("labels survive corruption") {
  auto pc = cloud(128);
  pc.label = 5;
  CHECK(apply_corruption(pc, {CorruptionKind::cutout, 3, 0}).label == 5);
}
