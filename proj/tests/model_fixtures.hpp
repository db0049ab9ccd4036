#pragma once

#include "mapper_gin/model.hpp"
#include "mapper_gin/train_eval.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

namespace fixtures {

using namespace mapper_gin;

/// `count` synthetic samples of `points` points with default Mapper graphs.
inline std::vector<Sample> samples(int count, Index points, std::uint64_t seed) {
  std::vector<PointCloud> clouds;
  for (int i = 0; i < count; ++i) {
    auto pc = sample_synthetic(static_cast<Shape>((seed + static_cast<std::uint64_t>(i)) % kShapeCount), points,
                               seed * 100 + static_cast<std::uint64_t>(i));
    pc.label = i % 2;
    clouds.push_back(std::move(pc));
  }
  return make_samples(clouds, {}, true);
}

/// lin2(relu(lin1(x))) reduces to x for non-negative inputs.
inline GinBlock<double> identity_block(Eigen::Index d) {
  using M = nn::Matrix<double>;
  GinBlock<double> b;
  b.eps = nn::Param<double>("eps", M::Zero(1, 1));
  b.lin1 = {nn::Param<double>("w1", M::Identity(d, d)), nn::Param<double>("b1", M::Zero(1, d))};
  b.lin2 = {nn::Param<double>("w2", M::Identity(d, d)), nn::Param<double>("b2", M::Zero(1, d))};
  b.norm = nn::make_graphnorm<double>(d, "norm");
  return b;
}

inline Sample permute_points(const Sample& s, std::mt19937_64& rng) {
  std::vector<Index> perm(static_cast<std::size_t>(s.points.rows()));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::uint32_t> where(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) where[static_cast<std::size_t>(perm[i])] = static_cast<std::uint32_t>(i);
  Sample out = s;
  out.points = take_rows(s.points, perm);
  for (auto& node : out.graph.nodes) {
    for (auto& p : node) p = where[p];
    std::sort(node.begin(), node.end());
  }
  return out;
}

inline Sample relabel_nodes(const Sample& s, std::mt19937_64& rng) {
  std::vector<std::uint32_t> perm(s.graph.num_nodes());
  std::iota(perm.begin(), perm.end(), 0u);
  std::shuffle(perm.begin(), perm.end(), rng);
  Sample out = s;
  for (std::size_t n = 0; n < perm.size(); ++n) {
    out.graph.nodes[perm[n]] = s.graph.nodes[n];
    out.graph.provenance[perm[n]] = s.graph.provenance[n];
  }
  for (auto& [u, v] : out.graph.edges) {
    u = perm[u];
    v = perm[v];
    if (u > v) std::swap(u, v);
  }
  std::sort(out.graph.edges.begin(), out.graph.edges.end());
  return out;
}

inline Sample reorder_edges(const Sample& s, std::mt19937_64& rng) {
  Sample out = s;
  std::shuffle(out.graph.edges.begin(), out.graph.edges.end(), rng);
  for (auto& [u, v] : out.graph.edges) {
    if (rng() % 2) std::swap(u, v);
  }
  return out;
}

struct InvarianceReport {
  bool point_permutation = true;
  bool node_relabeling = true;
  bool edge_reordering = true;
  bool duplicate_rows = true;
  bool rebuilt_graph = true;
  /// Logits vary across samples, so the exact comparisons mean something.
  bool informative = false;
};

/// Exact comparisons of eval-mode logits in the training precision.
inline InvarianceReport invariance(Variant variant, std::uint64_t seed, int trials) {
  const auto base = samples(3, 256, seed);
  ModelConfig cfg;
  cfg.variant = variant;
  cfg.hidden_dim = 32;
  cfg.classes = 5;
  auto model = init_model<float>(cfg, seed);
  {
    // One train-mode pass gives the running statistics non-default values.
    std::vector<const Sample*> ptrs{&base[0], &base[1], &base[2]};
    nn::Rng rng(seed);
    forward(model, make_batch(ptrs, variant != Variant::mlp_baseline), nn::Mode::train, &rng);
  }
  auto logits = [&](const std::vector<Sample>& set) {
    std::vector<const Sample*> ptrs;
    for (const auto& s : set) ptrs.push_back(&s);
    return forward(model, make_batch(ptrs, variant != Variant::mlp_baseline), nn::Mode::eval);
  };
  const auto reference = logits(base);
  InvarianceReport rep;
  rep.informative = reference.allFinite() && reference.row(0) != reference.row(1) && !reference.isZero(0.0f);
  std::mt19937_64 rng(seed + 1);
  for (int t = 0; t < trials; ++t) {
    std::vector<Sample> perm, relabel, reorder, rebuilt;
    for (const auto& s : base) {
      perm.push_back(permute_points(s, rng));
      relabel.push_back(relabel_nodes(s, rng));
      reorder.push_back(reorder_edges(s, rng));
      Sample r = perm.back();
      r.graph = build_mapper_graph(r.points);
      rebuilt.push_back(std::move(r));
    }
    rep.point_permutation = rep.point_permutation && logits(perm) == reference;
    rep.node_relabeling = rep.node_relabeling && logits(relabel) == reference;
    rep.edge_reordering = rep.edge_reordering && logits(reorder) == reference;
    rep.rebuilt_graph = rep.rebuilt_graph && logits(rebuilt) == reference;
  }
  const auto dup = logits({base[1], base[1]});
  rep.duplicate_rows = dup.row(0) == dup.row(1) && dup.row(0) == reference.row(1);
  return rep;
}

}  // namespace fixtures
