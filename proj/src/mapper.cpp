#include "mapper_gin/mapper.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <numeric>

namespace mapper_gin {

namespace {

// Lexicographic (x, y, z, id) order.
std::vector<Index> canonical_order(const Points& pts, std::span<const Index> ids) {
  std::vector<Index> order(static_cast<std::size_t>(pts.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  auto id = [&](Index i) { return ids.empty() ? i : ids[static_cast<std::size_t>(i)]; };
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    for (int k = 0; k < 3; ++k) {
      if (pts(a, k) != pts(b, k)) return pts(a, k) < pts(b, k);
    }
    return id(a) < id(b);
  });
  return order;
}

}  // namespace

Points PcaLens::project(const Points& points) const {
  return (points.rowwise() - mean.transpose()) * directions;
}

LensFit fit_pca_lens(const Points& points) {
  LensFit fit;
  const Index n = points.rows();
  if (n == 0) return fit;
  fit.lens.mean = points.colwise().mean().transpose();
  const Points centered = points.rowwise() - fit.lens.mean.transpose();
  if (n >= 3) {
    const Eigen::Matrix3d cov = (centered.transpose() * centered) / static_cast<double>(n);
    if (cov.trace() > 1e-24) {
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
      const Vec3 values = solver.eigenvalues();
      const Eigen::Matrix3d vectors = solver.eigenvectors();
      std::array<int, 3> order{0, 1, 2};
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return values(a) > values(b); });
      for (int c = 0; c < 3; ++c) {
        Vec3 v = vectors.col(order[static_cast<std::size_t>(c)]);
        Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        fit.lens.directions.col(c) = v;
        fit.lens.eigenvalues(c) = std::max(values(order[static_cast<std::size_t>(c)]), 0.0);
      }
    }
  }
  fit.projected = centered * fit.lens.directions;
  return fit;
}

Interval CoverAxis::interval(int i) const {
  const double pad = 0.5 * gain * width;
  return {start + i * width - pad, start + (i + 1) * width + pad};
}

std::vector<int> CoverAxis::memberships(double v) const {
  if (degenerate()) return {0};
  const int base = std::clamp(static_cast<int>(std::floor((v - start) / width)), 0, n_intervals - 1);
  std::vector<int> out;
  for (int i = 0; i < n_intervals; ++i) {
    const Interval iv = interval(i);
    if (i == base || (v >= iv.lo && v <= iv.hi)) out.push_back(i);
  }
  return out;
}

std::array<CoverAxis, 3> cover_axes(const Points& projected, int n_intervals, double gain) {
  if (n_intervals < 1) throw std::invalid_argument("n_intervals must be >= 1");
  std::array<CoverAxis, 3> axes;
  for (int k = 0; k < 3; ++k) {
    auto& axis = axes[static_cast<std::size_t>(k)];
    axis.n_intervals = n_intervals;
    axis.gain = gain;
    if (projected.rows() == 0) continue;
    const double a = projected.col(k).minCoeff();
    const double b = projected.col(k).maxCoeff();
    axis.start = a;
    axis.width = (b - a) > 1e-12 ? (b - a) / n_intervals : 0.0;
  }
  return axes;
}

std::vector<CoverMembers> cover_assign(const Points& projected, int n_intervals, double gain) {
  const auto axes = cover_axes(projected, n_intervals, gain);
  std::map<std::array<int, 3>, std::vector<Index>> cells;
  for (Index p = 0; p < projected.rows(); ++p) {
    const auto mx = axes[0].memberships(projected(p, 0));
    const auto my = axes[1].memberships(projected(p, 1));
    const auto mz = axes[2].memberships(projected(p, 2));
    for (int i : mx)
      for (int j : my)
        for (int k : mz) cells[{i, j, k}].push_back(p);
  }
  std::vector<CoverMembers> out;
  out.reserve(cells.size());
  for (auto& [index, members] : cells) {
    CoverMembers cm;
    cm.cell.index = index;
    for (int k = 0; k < 3; ++k) {
      cm.cell.bounds[static_cast<std::size_t>(k)] =
          axes[static_cast<std::size_t>(k)].interval(index[static_cast<std::size_t>(k)]);
    }
    cm.points = std::move(members);
    out.push_back(std::move(cm));
  }
  return out;
}

std::vector<int> dbscan(const Points& points, double eps, int min_pts, std::span<const Index> ids) {
  if (!(eps > 0.0)) throw std::invalid_argument("dbscan: eps must be > 0");
  if (min_pts < 1) throw std::invalid_argument("dbscan: min_pts must be >= 1");
  const Index m = points.rows();
  const auto order = canonical_order(points, ids);
  std::vector<Index> rank(static_cast<std::size_t>(m));
  for (Index r = 0; r < m; ++r) rank[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = r;

  // Neighbor lists in canonical rank space.
  const double eps2 = eps * eps;
  std::vector<std::vector<Index>> nbrs(static_cast<std::size_t>(m));
  for (Index a = 0; a < m; ++a) {
    const Index pa = order[static_cast<std::size_t>(a)];
    for (Index b = a + 1; b < m; ++b) {
      const Index pb = order[static_cast<std::size_t>(b)];
      if ((points.row(pa) - points.row(pb)).squaredNorm() <= eps2) {
        nbrs[static_cast<std::size_t>(a)].push_back(b);
        nbrs[static_cast<std::size_t>(b)].push_back(a);
      }
    }
  }
  for (auto& list : nbrs) std::sort(list.begin(), list.end());

  constexpr int kUnvisited = -2;
  std::vector<int> label(static_cast<std::size_t>(m), kUnvisited);
  auto core = [&](Index r) { return static_cast<int>(nbrs[static_cast<std::size_t>(r)].size()) + 1 >= min_pts; };
  int next_cluster = 0;
  std::deque<Index> queue;
  for (Index r = 0; r < m; ++r) {
    if (label[static_cast<std::size_t>(r)] != kUnvisited) continue;
    if (!core(r)) {
      label[static_cast<std::size_t>(r)] = kNoise;
      continue;
    }
    const int c = next_cluster++;
    label[static_cast<std::size_t>(r)] = c;
    queue.assign(1, r);
    while (!queue.empty()) {
      const Index q = queue.front();
      queue.pop_front();
      for (Index nb : nbrs[static_cast<std::size_t>(q)]) {
        int& l = label[static_cast<std::size_t>(nb)];
        if (l == kUnvisited || l == kNoise) {
          const bool fresh = l == kUnvisited;
          l = c;
          if (fresh && core(nb)) queue.push_back(nb);
        }
      }
    }
  }

  std::vector<int> out(static_cast<std::size_t>(m));
  for (Index p = 0; p < m; ++p) out[static_cast<std::size_t>(p)] = label[static_cast<std::size_t>(rank[static_cast<std::size_t>(p)])];
  return out;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> overlap_edges(
    const std::vector<std::vector<std::uint32_t>>& nodes, std::uint32_t point_count) {
  std::vector<std::vector<std::uint32_t>> owners(point_count);
  for (std::uint32_t n = 0; n < nodes.size(); ++n) {
    for (std::uint32_t p : nodes[n]) owners[p].push_back(n);
  }
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (const auto& list : owners) {
    for (std::size_t a = 0; a < list.size(); ++a)
      for (std::size_t b = a + 1; b < list.size(); ++b) edges.emplace_back(list[a], list[b]);
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

MapperGraph build_mapper_graph(const Points& points, const MapperParams& params) {
  const Index n = points.rows();
  if (n == 0) throw std::invalid_argument("build_mapper_graph: empty point cloud");

  // All arithmetic runs in canonical order, so input permutations only relabel points.
  const auto perm = canonical_order(points, {});
  const Points sorted = take_rows(points, perm);
  const LensFit fit = fit_pca_lens(sorted);

  MapperGraph graph;
  graph.point_count = static_cast<std::uint32_t>(n);
  for (const auto& cell : cover_assign(fit.projected, params.n_intervals, params.gain)) {
    const Points sub = take_rows(sorted, cell.points);
    std::vector<Index> ids(cell.points.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = perm[static_cast<std::size_t>(cell.points[i])];
    const auto labels = dbscan(sub, params.eps, params.min_pts, ids);
    const int clusters = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    const std::size_t first = graph.nodes.size();
    graph.nodes.resize(first + static_cast<std::size_t>(clusters));
    for (int c = 0; c < clusters; ++c) {
      graph.provenance.push_back({{cell.cell.index[0], cell.cell.index[1], cell.cell.index[2]}, c});
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != kNoise) graph.nodes[first + static_cast<std::size_t>(labels[i])].push_back(static_cast<std::uint32_t>(ids[i]));
    }
  }
  if (graph.nodes.empty()) {
    graph.nodes.emplace_back(static_cast<std::size_t>(n));
    std::iota(graph.nodes[0].begin(), graph.nodes[0].end(), 0u);
    graph.provenance.emplace_back();
  }
  for (auto& node : graph.nodes) std::sort(node.begin(), node.end());
  graph.edges = overlap_edges(graph.nodes, graph.point_count);
  return graph;
}

}  // namespace mapper_gin
