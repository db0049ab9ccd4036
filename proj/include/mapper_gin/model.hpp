#pragma once

#include "mapper_gin/mapper.hpp"
#include "mapper_gin/nn.hpp"
#include "mapper_gin/pointcloud.hpp"

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace mapper_gin {

enum class Variant : std::uint8_t { mapper_gin, mapper_gin_base, mlp_baseline };

std::string_view variant_name(Variant v);
Variant variant_from_name(std::string_view name);

struct ModelConfig {
  Variant variant = Variant::mapper_gin;
  int hidden_dim = 240;
  int layers = 4;
  double p_edge = 0.3;
  double p_feature = 0.3;
  int classes = 40;

  void validate() const;
};

/// One labeled example: its points and (for the graph variants) its Mapper graph.
struct Sample {
  Points points;
  MapperGraph graph;
  int label = 0;
};

using Edge = std::pair<std::uint32_t, std::uint32_t>;

/// Disjoint union of several samples. Node ranges, point ranges and graph
/// ranges are contiguous per graph.
struct GraphBatch {
  Points points;
  std::vector<std::uint32_t> point_offsets{0};  // per graph, into points
  std::vector<std::uint32_t> node_offsets{0};   // per node, into members
  std::vector<std::uint32_t> members;           // batch point rows, grouped by node
  std::vector<std::uint32_t> node_graph;        // graph id per node
  std::vector<std::uint32_t> graph_nodes{0};    // per graph, into nodes
  std::vector<Edge> edges;                      // batch node ids
  std::vector<int> labels;

  std::size_t num_graphs() const { return point_offsets.size() - 1; }
  std::size_t num_nodes() const { return node_graph.size(); }
};

/// Throws std::invalid_argument when a graph has no nodes and `need_graphs` is set.
GraphBatch make_batch(std::span<const Sample* const> samples, bool need_graphs = true);

/// Node center and radius; the radius is clamped below at 1e-6.
struct NodeFrame {
  Vec3 center = Vec3::Zero();
  double radius = 1e-6;
};
NodeFrame node_frame(const Points& node_points);

template <typename S>
struct GinBlock {
  nn::Param<S> eps;
  nn::Dense<S> lin1;
  nn::Dense<S> lin2;
  nn::GraphNorm<S> norm;
};

/// All learnable parameters (and BatchNorm running statistics) for one variant.
template <typename S>
struct ModelState {
  ModelConfig config;

  // Graph variants.
  nn::Dense<S> encoder;
  nn::BatchNorm<S> encoder_bn;
  std::vector<GinBlock<S>> blocks;

  // MLP baseline.
  nn::Dense<S> mlp1;
  nn::BatchNorm<S> mlp_bn1;
  nn::Dense<S> mlp2;
  nn::BatchNorm<S> mlp_bn2;

  nn::LayerNorm<S> head_norm;
  nn::Dense<S> classifier;

  /// Stable order; pointers are valid until the state is moved or copied.
  std::vector<nn::Param<S>*> parameters();
  std::vector<const nn::Param<S>*> parameters() const;
  std::vector<nn::BatchNorm<S>*> batchnorms();
  void zero_grad();
};

template <typename S>
ModelState<S> init_model(const ModelConfig& config, std::uint64_t seed);

/// Exact number of learnable scalars.
std::int64_t param_count(const ModelConfig& config);

template <typename S>
ModelState<S> cast_model(const ModelState<double>& src);

// Forward / backward ----------------------------------------------------------

template <typename S>
struct GinLayerCache {
  std::vector<Edge> edges;
  nn::Matrix<S> input;
  nn::Matrix<S> agg;
  nn::Matrix<S> hidden;  // relu(lin1(agg))
  nn::Matrix<S> mlp_out;
  nn::GraphNormCache<S> norm;
  nn::Matrix<S> activated;  // relu(graphnorm(mlp_out))
  nn::Matrix<S> mask;
};

/// Statistics of a fused dense -> batchnorm -> relu -> segment max stage. Its
/// input is narrow, so batch statistics of dense(x) follow from the Gram
/// matrix of x and the wide activations are never stored.
struct FusedCache {
  Eigen::MatrixXd gram;        // x^T x
  Eigen::RowVectorXd sum;      // column sums of x
  Eigen::RowVectorXd mean;     // per-channel mean of dense(x)
  Eigen::RowVectorXd inv_std;  // per-channel 1 / sqrt(var + eps)
  bool bypass = false;         // plain dense -> max, no batchnorm or relu
};

template <typename S>
struct Tape {
  nn::Mode mode = nn::Mode::eval;
  // Node encoder (graph variants) or the first point stage input (baseline).
  nn::Matrix<S> descriptors;
  FusedCache encoder;
  nn::Matrix<S> nodes;                     // encoder output, num_nodes x d
  std::vector<std::uint32_t> node_argmax;  // num_nodes x d, descriptor rows
  // Baseline point MLP: classic first stage, fused second stage.
  nn::NormCache<S> bn1;
  nn::Matrix<S> act1;
  FusedCache point_stage;
  std::vector<GinLayerCache<S>> layers;
  std::vector<std::uint32_t> pool_argmax;  // G x d
  nn::Matrix<S> pooled;
  nn::NormCache<S> head;
  nn::Matrix<S> head_out;
};

/// Local variant: [x, (x - c_n) / R_n] per node membership; base variant: x per point.
template <typename S>
nn::Matrix<S> point_descriptors(const GraphBatch& batch, Variant variant);

/// phi = relu(bn(dense(descriptor))), then a per-node coordinate-wise max.
/// `bypass_norm` drops the batchnorm and relu (test hook).
/// Rows of the base variant's descriptors are points, gathered through batch.members.
template <typename S>
nn::Matrix<S> encode_nodes(ModelState<S>& model, const GraphBatch& batch, nn::Mode mode, Tape<S>* tape = nullptr,
                           bool bypass_norm = false);

/// (1 + eps) z_v + sum of neighbor features.
template <typename S>
nn::Matrix<S> gin_aggregate(const nn::Matrix<S>& z, std::span<const Edge> edges, S eps);

/// MLP(gin_aggregate(z)) with MLP = lin2(relu(lin1(.))).
template <typename S>
nn::Matrix<S> gin_layer(const GinBlock<S>& block, const nn::Matrix<S>& z, std::span<const Edge> edges);

/// Keeps each undirected edge with probability 1 - p in train mode.
std::vector<Edge> dropedge(std::span<const Edge> edges, double p, nn::Mode mode, nn::Rng& rng);

/// Logits G x C. `rng` is only used in train mode.
template <typename S>
nn::Matrix<S> forward(ModelState<S>& model, const GraphBatch& batch, nn::Mode mode, nn::Rng* rng = nullptr,
                      Tape<S>* tape = nullptr);

/// Accumulates parameter gradients given dL/dlogits.
template <typename S>
void backward(ModelState<S>& model, const GraphBatch& batch, const Tape<S>& tape, const nn::Matrix<S>& dlogits);

}  // namespace mapper_gin
