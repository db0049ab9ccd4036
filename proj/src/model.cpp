#include "mapper_gin/model.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace mapper_gin {

using nn::Matrix;
using nn::Mode;

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::mapper_gin: return "mapper_gin";
    case Variant::mapper_gin_base: return "mapper_gin_base";
    case Variant::mlp_baseline: return "mlp_baseline";
  }
  return "?";
}

Variant variant_from_name(std::string_view name) {
  for (Variant v : {Variant::mapper_gin, Variant::mapper_gin_base, Variant::mlp_baseline}) {
    if (variant_name(v) == name) return v;
  }
  throw std::invalid_argument("unknown model variant '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (hidden_dim < 1) throw std::invalid_argument("model.hidden_dim must be > 0");
  if (layers < 0) throw std::invalid_argument("model.layers must be >= 0");
  if (classes < 2) throw std::invalid_argument("model.classes must be >= 2");
  if (p_edge < 0.0 || p_edge >= 1.0) throw std::invalid_argument("model.p_edge must be in [0, 1)");
  if (p_feature < 0.0 || p_feature >= 1.0) throw std::invalid_argument("model.p_feature must be in [0, 1)");
}

// Batching ------------------------------------------------------------------

namespace {

bool coord_less(const Points& pts, std::uint32_t a, std::uint32_t b) {
  for (int k = 0; k < 3; ++k) {
    if (pts(a, k) != pts(b, k)) return pts(a, k) < pts(b, k);
  }
  return false;
}

}  // namespace

GraphBatch make_batch(std::span<const Sample* const> samples, bool need_graphs) {
  GraphBatch batch;
  Index total_points = 0;
  for (const Sample* s : samples) total_points += s->points.rows();
  batch.points.resize(total_points, 3);

  Index point_base = 0;
  for (std::size_t gi = 0; gi < samples.size(); ++gi) {
    const Sample& s = *samples[gi];
    const auto base = static_cast<std::uint32_t>(point_base);
    batch.points.middleRows(point_base, s.points.rows()) = s.points;
    point_base += s.points.rows();
    batch.point_offsets.push_back(static_cast<std::uint32_t>(point_base));
    batch.labels.push_back(s.label);

    if (need_graphs) {
      if (s.graph.nodes.empty()) throw std::invalid_argument("make_batch: graph without nodes");
      if (s.graph.point_count != s.points.rows()) throw std::invalid_argument("make_batch: graph/point count mismatch");
      // Members sorted by coordinate and nodes sorted by their coordinate
      // sequences make every downstream sum independent of point and node labels.
      std::vector<std::vector<std::uint32_t>> nodes = s.graph.nodes;
      for (auto& node : nodes) {
        std::sort(node.begin(), node.end(), [&](std::uint32_t a, std::uint32_t b) {
          return coord_less(s.points, a, b) || (!coord_less(s.points, b, a) && a < b);
        });
      }
      std::vector<std::uint32_t> order(nodes.size());
      std::iota(order.begin(), order.end(), 0u);
      std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        const auto& na = nodes[a];
        const auto& nb = nodes[b];
        const std::size_t n = std::min(na.size(), nb.size());
        for (std::size_t i = 0; i < n; ++i) {
          if (coord_less(s.points, na[i], nb[i])) return true;
          if (coord_less(s.points, nb[i], na[i])) return false;
        }
        return na.size() < nb.size();
      });
      std::vector<std::uint32_t> new_id(nodes.size());
      const auto node_base = static_cast<std::uint32_t>(batch.num_nodes());
      for (std::uint32_t r = 0; r < order.size(); ++r) new_id[order[r]] = r;
      for (std::uint32_t r = 0; r < order.size(); ++r) {
        for (std::uint32_t p : nodes[order[r]]) {
          if (p >= s.graph.point_count) throw std::invalid_argument("make_batch: node references a missing point");
          batch.members.push_back(base + p);
        }
        batch.node_offsets.push_back(static_cast<std::uint32_t>(batch.members.size()));
        batch.node_graph.push_back(static_cast<std::uint32_t>(gi));
      }
      std::vector<Edge> edges;
      edges.reserve(s.graph.edges.size());
      for (auto [u, v] : s.graph.edges) {
        if (u >= nodes.size() || v >= nodes.size() || u == v) throw std::invalid_argument("make_batch: invalid edge");
        auto a = new_id[u], b = new_id[v];
        if (a > b) std::swap(a, b);
        edges.emplace_back(node_base + a, node_base + b);
      }
      std::sort(edges.begin(), edges.end());
      edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
      batch.edges.insert(batch.edges.end(), edges.begin(), edges.end());
    }
    batch.graph_nodes.push_back(static_cast<std::uint32_t>(batch.num_nodes()));
  }
  return batch;
}

NodeFrame node_frame(const Points& node_points) {
  if (node_points.rows() == 0) throw std::invalid_argument("node_frame: empty node");
  NodeFrame f;
  f.center = node_points.colwise().mean().transpose();
  const double r = (node_points.rowwise() - f.center.transpose()).rowwise().norm().maxCoeff();
  f.radius = std::max(r, 1e-6);
  return f;
}

// Parameters ----------------------------------------------------------------

template <typename S>
std::vector<nn::Param<S>*> ModelState<S>::parameters() {
  std::vector<nn::Param<S>*> out;
  auto dense = [&](nn::Dense<S>& d) {
    out.push_back(&d.weight);
    out.push_back(&d.bias);
  };
  if (config.variant == Variant::mlp_baseline) {
    dense(mlp1);
    out.push_back(&mlp_bn1.gamma);
    out.push_back(&mlp_bn1.beta);
    dense(mlp2);
    out.push_back(&mlp_bn2.gamma);
    out.push_back(&mlp_bn2.beta);
  } else {
    dense(encoder);
    out.push_back(&encoder_bn.gamma);
    out.push_back(&encoder_bn.beta);
    for (auto& b : blocks) {
      out.push_back(&b.eps);
      dense(b.lin1);
      dense(b.lin2);
      out.push_back(&b.norm.alpha);
      out.push_back(&b.norm.gamma);
      out.push_back(&b.norm.beta);
    }
  }
  out.push_back(&head_norm.gamma);
  out.push_back(&head_norm.beta);
  dense(classifier);
  return out;
}

template <typename S>
std::vector<const nn::Param<S>*> ModelState<S>::parameters() const {
  auto mut = const_cast<ModelState<S>*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

template <typename S>
std::vector<nn::BatchNorm<S>*> ModelState<S>::batchnorms() {
  if (config.variant == Variant::mlp_baseline) return {&mlp_bn1, &mlp_bn2};
  return {&encoder_bn};
}

template <typename S>
void ModelState<S>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename S>
ModelState<S> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  nn::Rng rng(splitmix64(seed));
  ModelState<S> m;
  m.config = config;
  const Index d = config.hidden_dim;
  Index feature_dim = d;
  if (config.variant == Variant::mlp_baseline) {
    m.mlp1 = nn::make_dense<S>(3, 64, rng, "mlp1");
    m.mlp_bn1 = nn::make_batchnorm<S>(64, "mlp_bn1");
    m.mlp2 = nn::make_dense<S>(64, 256, rng, "mlp2");
    m.mlp_bn2 = nn::make_batchnorm<S>(256, "mlp_bn2");
    feature_dim = 256;
  } else {
    const Index din = config.variant == Variant::mapper_gin ? 6 : 3;
    m.encoder = nn::make_dense<S>(din, d, rng, "encoder");
    m.encoder_bn = nn::make_batchnorm<S>(d, "encoder_bn");
    for (int l = 0; l < config.layers; ++l) {
      const std::string name = "gin" + std::to_string(l);
      GinBlock<S> b;
      b.eps = nn::Param<S>(name + ".eps", Matrix<S>::Zero(1, 1));
      b.lin1 = nn::make_dense<S>(d, d, rng, name + ".lin1");
      b.lin2 = nn::make_dense<S>(d, d, rng, name + ".lin2");
      b.norm = nn::make_graphnorm<S>(d, name + ".norm");
      m.blocks.push_back(std::move(b));
    }
  }
  m.head_norm = nn::make_layernorm<S>(feature_dim, "head_norm");
  m.classifier = nn::make_dense<S>(feature_dim, config.classes, rng, "classifier");
  return m;
}

std::int64_t param_count(const ModelConfig& config) {
  ModelState<float> m = init_model<float>(config, 0);
  std::int64_t total = 0;
  for (const auto* p : m.parameters()) total += p->size();
  return total;
}

template <typename S>
ModelState<S> cast_model(const ModelState<double>& src) {
  ModelState<S> dst = init_model<S>(src.config, 0);
  auto from = src.parameters();
  auto to = dst.parameters();
  for (std::size_t i = 0; i < from.size(); ++i) to[i]->value = from[i]->value.template cast<S>();
  auto& mutable_src = const_cast<ModelState<double>&>(src);
  auto bn_from = mutable_src.batchnorms();
  auto bn_to = dst.batchnorms();
  for (std::size_t i = 0; i < bn_from.size(); ++i) {
    bn_to[i]->running_mean = bn_from[i]->running_mean.template cast<S>();
    bn_to[i]->running_var = bn_from[i]->running_var.template cast<S>();
  }
  return dst;
}

// Forward -------------------------------------------------------------------

namespace {

// Column-wise max over row ranges; argmax holds the winning row per (range, column).
template <typename S>
Matrix<S> segment_max(const Matrix<S>& x, std::span<const std::uint32_t> offsets, std::vector<std::uint32_t>* argmax) {
  const Index segments = static_cast<Index>(offsets.size()) - 1;
  const Index d = x.cols();
  Matrix<S> out(segments, d);
  if (argmax) argmax->assign(static_cast<std::size_t>(segments * d), 0);
  for (Index s = 0; s < segments; ++s) {
    const auto begin = offsets[static_cast<std::size_t>(s)];
    const auto end = offsets[static_cast<std::size_t>(s) + 1];
    if (begin == end) throw std::invalid_argument("segment_max: empty segment");
    S* o = out.row(s).data();
    std::copy_n(x.row(begin).data(), d, o);
    std::uint32_t* am = argmax ? argmax->data() + s * d : nullptr;
    if (am) std::fill(am, am + d, begin);
    for (std::uint32_t r = begin + 1; r < end; ++r) {
      const S* row = x.row(r).data();
      for (Index c = 0; c < d; ++c) {
        const bool up = row[c] > o[c];
        o[c] = up ? row[c] : o[c];
        if (am) am[c] = up ? r : am[c];
      }
    }
  }
  return out;
}

template <typename S>
void segment_max_backward(const Matrix<S>& dy, const std::vector<std::uint32_t>& argmax, Matrix<S>& dx) {
  const Index d = dy.cols();
  for (Index s = 0; s < dy.rows(); ++s) {
    for (Index c = 0; c < d; ++c) dx(argmax[static_cast<std::size_t>(s * d + c)], c) += dy(s, c);
  }
}

// z[s] = max over the rows of segment s of relu(bn(x W + b)). Segment s covers
// positions offsets[s]..offsets[s+1]; `rows` maps positions to rows of x
// (identity when empty). A null `bn` means plain x W + b with no relu.
template <typename S>
Matrix<S> fused_forward(const nn::Dense<S>& dense, nn::BatchNorm<S>* bn, const Matrix<S>& x,
                        std::span<const std::uint32_t> offsets, std::span<const std::uint32_t> rows, Mode mode,
                        FusedCache& cache, std::vector<std::uint32_t>& argmax) {
  const Index k = x.cols();
  const Index d = dense.out_dim();
  const Eigen::MatrixXd w = dense.weight.value.template cast<double>();
  const Eigen::RowVectorXd b = dense.bias.value.row(0).template cast<double>();

  // Fold dense + batchnorm into one affine map x -> x wf + bf.
  cache = FusedCache{};
  cache.bypass = bn == nullptr;
  Eigen::MatrixXd wf = w;
  Eigen::RowVectorXd bf = b;
  if (bn) {
    const Eigen::MatrixXd xd = x.template cast<double>();
    cache.gram = xd.transpose() * xd;
    cache.sum = xd.colwise().sum();
    const double m = static_cast<double>(x.rows());
    Eigen::RowVectorXd var;
    if (mode == Mode::train) {
      if (x.rows() < 2) throw std::invalid_argument("batchnorm: training mode needs at least 2 rows");
      const Eigen::RowVectorXd mx = cache.sum / m;
      const Eigen::MatrixXd cov = cache.gram / m - mx.transpose() * mx;
      cache.mean = mx * w + b;
      var = (w.array() * (cov * w).array()).colwise().sum().cwiseMax(0.0);
      const S mom = bn->momentum;
      bn->running_mean = (S(1) - mom) * bn->running_mean + mom * cache.mean.cast<S>();
      bn->running_var = (S(1) - mom) * bn->running_var + mom * (var * (m / (m - 1.0))).cast<S>();
    } else {
      cache.mean = bn->running_mean.template cast<double>();
      var = bn->running_var.template cast<double>();
    }
    cache.inv_std = (var.array() + static_cast<double>(bn->eps)).rsqrt().matrix();
    const Eigen::RowVectorXd scale = cache.inv_std.cwiseProduct(bn->gamma.value.row(0).template cast<double>());
    wf = w * scale.asDiagonal();
    bf = (b - cache.mean).cwiseProduct(scale) + bn->beta.value.row(0).template cast<double>();
  }
  const Matrix<S> ws = wf.cast<S>();
  const nn::RowVector<S> bs = bf.cast<S>();

  const Index segments = static_cast<Index>(offsets.size()) - 1;
  Matrix<S> z(segments, d);
  argmax.assign(static_cast<std::size_t>(segments * d), 0);
  Matrix<S> xs, block;
  std::vector<std::uint32_t> ids;
  for (Index s = 0; s < segments; ++s) {
    const auto begin = offsets[static_cast<std::size_t>(s)];
    const auto end = offsets[static_cast<std::size_t>(s) + 1];
    if (begin == end) throw std::invalid_argument("segment_max: empty segment");
    ids.resize(end - begin);
    xs.resize(end - begin, k);
    for (std::uint32_t i = begin; i < end; ++i) {
      ids[i - begin] = rows.empty() ? i : rows[i];
      xs.row(i - begin) = x.row(ids[i - begin]);
    }
    block.noalias() = xs * ws;
    block.rowwise() += bs;
    S* out = z.row(s).data();
    std::uint32_t* am = argmax.data() + s * d;
    std::copy_n(block.row(0).data(), d, out);
    std::fill(am, am + d, ids[0]);
    for (Index i = 1; i < block.rows(); ++i) {
      const S* row = block.row(i).data();
      const std::uint32_t r = ids[static_cast<std::size_t>(i)];
      for (Index c = 0; c < d; ++c) {
        const bool up = row[c] > out[c];
        out[c] = up ? row[c] : out[c];
        am[c] = up ? r : am[c];
      }
    }
  }
  if (bn) z = z.cwiseMax(S(0));
  return z;
}

// Backward of fused_forward. Only argmax rows receive gradient directly; the
// batch-statistics terms are rebuilt from the cached Gram matrix. Returns dx
// when `want_dx` is set (an empty matrix otherwise).
template <typename S>
Matrix<S> fused_backward(nn::Dense<S>& dense, nn::BatchNorm<S>* bn, const Matrix<S>& x, const FusedCache& cache,
                         Mode mode, const Matrix<S>& z, const std::vector<std::uint32_t>& argmax, const Matrix<S>& dz,
                         bool want_dx) {
  const Index k = x.cols();
  const Index d = dz.cols();
  const double m = static_cast<double>(x.rows());
  const Eigen::MatrixXd w = dense.weight.value.template cast<double>();
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> wt = w.transpose();
  const Eigen::RowVectorXd b = dense.bias.value.row(0).template cast<double>();
  const Eigen::RowVectorXd gamma =
      bn ? bn->gamma.value.row(0).template cast<double>().eval() : Eigen::RowVectorXd::Ones(d).eval();
  const bool train_bn = bn && mode == Mode::train;

  // Per channel c: sx[c] = sum of x_r * dxhat, s1 = sum of dxhat, s2 = sum of dxhat * xhat.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> sx =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(d, k);
  Eigen::RowVectorXd s1 = Eigen::RowVectorXd::Zero(d), s2 = Eigen::RowVectorXd::Zero(d);
  Eigen::RowVectorXd dgamma = Eigen::RowVectorXd::Zero(d), dbeta = Eigen::RowVectorXd::Zero(d);
  // dh at argmax rows, scaled into dx later: (row, channel, value).
  struct Hit {
    std::uint32_t row;
    Index channel;
    double dh;
  };
  std::vector<Hit> hits;
  std::vector<double> xr(static_cast<std::size_t>(k));
  for (Index s = 0; s < dz.rows(); ++s) {
    for (Index c = 0; c < d; ++c) {
      const double g = static_cast<double>(dz(s, c));
      if (g == 0.0) continue;
      if (bn && !(z(s, c) > S(0))) continue;
      const auto r = argmax[static_cast<std::size_t>(s * d + c)];
      const S* xp = x.row(r).data();
      for (Index j = 0; j < k; ++j) xr[static_cast<std::size_t>(j)] = static_cast<double>(xp[j]);
      double* acc = sx.row(c).data();
      double dxhat = g;
      if (bn) {
        const double* wc = wt.row(c).data();
        double h = b(c);
        for (Index j = 0; j < k; ++j) h += xr[static_cast<std::size_t>(j)] * wc[j];
        const double xhat = (h - cache.mean(c)) * cache.inv_std(c);
        dgamma(c) += g * xhat;
        dbeta(c) += g;
        dxhat = gamma(c) * g;
        s2(c) += dxhat * xhat;
      }
      for (Index j = 0; j < k; ++j) acc[j] += dxhat * xr[static_cast<std::size_t>(j)];
      s1(c) += dxhat;
      if (want_dx) hits.push_back({r, c, bn ? dxhat * cache.inv_std(c) : dxhat});
    }
  }

  Eigen::MatrixXd dw(k, d);
  Eigen::RowVectorXd db(d);
  if (!bn) {
    dw = sx.transpose();
    db = s1;
  } else if (!train_bn) {
    dw = sx.transpose() * cache.inv_std.asDiagonal();
    db = s1.cwiseProduct(cache.inv_std);
  } else {
    for (Index c = 0; c < d; ++c) {
      const double shift = b(c) - cache.mean(c);
      const Eigen::VectorXd xt_xhat = cache.inv_std(c) * (cache.gram * w.col(c) + shift * cache.sum.transpose());
      const double sum_xhat = cache.inv_std(c) * (cache.sum.dot(w.col(c)) + m * shift);
      dw.col(c) = cache.inv_std(c) * (sx.row(c).transpose() - cache.sum.transpose() * (s1(c) / m) - xt_xhat * (s2(c) / m));
      db(c) = -cache.inv_std(c) * sum_xhat * s2(c) / m;
    }
  }
  dense.weight.grad += dw.cast<S>();
  dense.bias.grad.row(0) += db.cast<S>();
  if (bn) {
    bn->gamma.grad.row(0) += dgamma.cast<S>();
    bn->beta.grad.row(0) += dbeta.cast<S>();
  }
  if (!want_dx) return {};

  // dx = dh W^T. In train mode dh = s (dxhat - s1/m - xhat s2/m), which
  // expands to the sparse hits plus x A plus a constant row.
  Matrix<S> dx;
  if (train_bn) {
    const Eigen::RowVectorXd q = cache.inv_std.array().square() * s2.array() / m;
    const Eigen::MatrixXd a = -(w * q.asDiagonal() * w.transpose());
    const Eigen::RowVectorXd shift = b - cache.mean;
    const Eigen::RowVectorXd coef =
        -(cache.inv_std.cwiseProduct(s1) / m) - q.cwiseProduct(shift);
    const Eigen::RowVectorXd row = coef * w.transpose();
    Eigen::MatrixXd dense_part = x.template cast<double>() * a;
    dense_part.rowwise() += row;
    dx = dense_part.cast<S>();
  } else {
    dx = Matrix<S>::Zero(x.rows(), k);
  }
  for (const Hit& h : hits) {
    const double* wc = wt.row(h.channel).data();
    S* out = dx.row(h.row).data();
    for (Index j = 0; j < k; ++j) out[j] += static_cast<S>(h.dh * wc[j]);
  }
  return dx;
}

template <typename S>
Matrix<S> head_forward(ModelState<S>& model, const Matrix<S>& pooled, Tape<S>* tape) {
  nn::NormCache<S> cache;
  Matrix<S> normed = nn::layernorm_forward<S>(model.head_norm, pooled, tape ? &cache : nullptr);
  Matrix<S> logits = nn::dense_forward<S>(model.classifier, normed);
  if (tape) {
    tape->pooled = pooled;
    tape->head = std::move(cache);
    tape->head_out = std::move(normed);
  }
  return logits;
}

template <typename S>
Matrix<S> mlp_forward(ModelState<S>& model, const GraphBatch& batch, Mode mode, Tape<S>* tape) {
  Matrix<S> x = batch.points.template cast<S>();
  nn::NormCache<S> c1;
  Matrix<S> a1 = nn::relu<S>(nn::batchnorm_forward<S>(model.mlp_bn1, nn::dense_forward<S>(model.mlp1, x), mode, &c1));
  FusedCache c2;
  std::vector<std::uint32_t> argmax;
  Matrix<S> pooled = fused_forward<S>(model.mlp2, &model.mlp_bn2, a1, batch.point_offsets, {}, mode, c2, argmax);
  if (tape) {
    tape->descriptors = std::move(x);
    tape->bn1 = std::move(c1);
    tape->act1 = std::move(a1);
    tape->point_stage = std::move(c2);
    tape->pool_argmax = std::move(argmax);
  }
  return head_forward(model, pooled, tape);
}

}  // namespace

template <typename S>
Matrix<S> point_descriptors(const GraphBatch& batch, Variant variant) {
  if (variant == Variant::mapper_gin_base) return batch.points.template cast<S>();
  Matrix<S> desc(static_cast<Index>(batch.members.size()), 6);
  Points node_pts;
  for (std::size_t n = 0; n < batch.num_nodes(); ++n) {
    const auto begin = batch.node_offsets[n];
    const auto end = batch.node_offsets[n + 1];
    node_pts.resize(end - begin, 3);
    for (std::uint32_t i = begin; i < end; ++i) node_pts.row(i - begin) = batch.points.row(batch.members[i]);
    const NodeFrame frame = node_frame(node_pts);
    for (std::uint32_t i = begin; i < end; ++i) {
      const Eigen::RowVector3d x = node_pts.row(i - begin);
      const Eigen::RowVector3d local = (x - frame.center.transpose()) / frame.radius;
      desc.row(i) << static_cast<S>(x(0)), static_cast<S>(x(1)), static_cast<S>(x(2)), static_cast<S>(local(0)),
          static_cast<S>(local(1)), static_cast<S>(local(2));
    }
  }
  return desc;
}

template <typename S>
Matrix<S> encode_nodes(ModelState<S>& model, const GraphBatch& batch, Mode mode, Tape<S>* tape, bool bypass_norm) {
  const Variant variant = model.config.variant;
  if (variant == Variant::mlp_baseline) throw std::invalid_argument("encode_nodes: not a graph variant");
  Matrix<S> desc = point_descriptors<S>(batch, variant);
  nn::check_shape(desc.cols() == model.encoder.in_dim(), "encoder input dimension");
  // Local descriptors are laid out per membership; base ones per point.
  const std::span<const std::uint32_t> rows =
      variant == Variant::mapper_gin ? std::span<const std::uint32_t>{} : std::span<const std::uint32_t>(batch.members);
  FusedCache cache;
  std::vector<std::uint32_t> argmax;
  Matrix<S> z = fused_forward<S>(model.encoder, bypass_norm ? nullptr : &model.encoder_bn, desc, batch.node_offsets,
                                 rows, mode, cache, argmax);
  if (tape) {
    tape->descriptors = std::move(desc);
    tape->encoder = std::move(cache);
    tape->nodes = z;
    tape->node_argmax = std::move(argmax);
  }
  return z;
}

template <typename S>
Matrix<S> gin_aggregate(const Matrix<S>& z, std::span<const Edge> edges, S eps) {
  Matrix<S> agg = (S(1) + eps) * z;
  for (auto [u, v] : edges) {
    agg.row(u) += z.row(v);
    agg.row(v) += z.row(u);
  }
  return agg;
}

template <typename S>
Matrix<S> gin_layer(const GinBlock<S>& block, const Matrix<S>& z, std::span<const Edge> edges) {
  const Matrix<S> agg = gin_aggregate<S>(z, edges, block.eps.value(0, 0));
  return nn::dense_forward<S>(block.lin2, nn::relu<S>(nn::dense_forward<S>(block.lin1, agg)));
}

std::vector<Edge> dropedge(std::span<const Edge> edges, double p, Mode mode, nn::Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropedge: p must be in [0, 1)");
  if (mode == Mode::eval || p == 0.0) return {edges.begin(), edges.end()};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Edge> kept;
  kept.reserve(edges.size());
  for (const Edge& e : edges) {
    if (u(rng) >= p) kept.push_back(e);
  }
  return kept;
}

template <typename S>
Matrix<S> forward(ModelState<S>& model, const GraphBatch& batch, Mode mode, nn::Rng* rng, Tape<S>* tape) {
  if (mode == Mode::train && !rng) throw std::invalid_argument("forward: train mode needs an rng");
  if (tape) {
    tape->mode = mode;
    tape->layers.clear();
  }
  if (model.config.variant == Variant::mlp_baseline) return mlp_forward(model, batch, mode, tape);

  Matrix<S> z = encode_nodes(model, batch, mode, tape);
  nn::Rng dummy;
  nn::Rng& r = rng ? *rng : dummy;
  for (auto& block : model.blocks) {
    GinLayerCache<S> c;
    c.edges = dropedge(batch.edges, model.config.p_edge, mode, r);
    c.agg = gin_aggregate<S>(z, c.edges, block.eps.value(0, 0));
    c.hidden = nn::relu<S>(nn::dense_forward<S>(block.lin1, c.agg));
    c.mlp_out = nn::dense_forward<S>(block.lin2, c.hidden);
    c.activated = nn::relu<S>(nn::graphnorm_forward<S>(block.norm, c.mlp_out, batch.node_graph, batch.num_graphs(),
                                                       tape ? &c.norm : nullptr));
    c.mask = nn::dropout_mask<S>(c.activated.rows(), c.activated.cols(), model.config.p_feature, mode, r);
    Matrix<S> next = nn::apply_mask<S>(c.activated, c.mask);
    if (tape) {
      c.input = std::move(z);
      tape->layers.push_back(std::move(c));
    }
    z = std::move(next);
  }
  std::vector<std::uint32_t> argmax;
  Matrix<S> pooled = segment_max<S>(z, batch.graph_nodes, tape ? &argmax : nullptr);
  if (tape) tape->pool_argmax = std::move(argmax);
  return head_forward(model, pooled, tape);
}

template <typename S>
void backward(ModelState<S>& model, const GraphBatch& batch, const Tape<S>& tape, const Matrix<S>& dlogits) {
  Matrix<S> dnormed = nn::dense_backward<S>(model.classifier, tape.head_out, dlogits);
  Matrix<S> dpooled = nn::layernorm_backward<S>(model.head_norm, tape.head, dnormed);

  if (model.config.variant == Variant::mlp_baseline) {
    Matrix<S> da1 = fused_backward<S>(model.mlp2, &model.mlp_bn2, tape.act1, tape.point_stage, tape.mode, tape.pooled,
                                      tape.pool_argmax, dpooled, true);
    Matrix<S> dh1 = nn::batchnorm_backward<S>(model.mlp_bn1, tape.bn1, nn::relu_backward<S>(tape.act1, da1));
    nn::dense_backward<S>(model.mlp1, tape.descriptors, dh1);
    return;
  }

  const Index d = dpooled.cols();
  Matrix<S> dz = Matrix<S>::Zero(static_cast<Index>(batch.num_nodes()), d);
  segment_max_backward<S>(dpooled, tape.pool_argmax, dz);
  for (std::size_t li = model.blocks.size(); li-- > 0;) {
    GinBlock<S>& block = model.blocks[li];
    const GinLayerCache<S>& c = tape.layers[li];
    Matrix<S> dact = c.mask.size() ? Matrix<S>(dz.cwiseProduct(c.mask)) : dz;
    Matrix<S> dout = nn::graphnorm_backward<S>(block.norm, c.norm, nn::relu_backward<S>(c.activated, dact));
    Matrix<S> dhidden = nn::dense_backward<S>(block.lin2, c.hidden, dout);
    Matrix<S> dagg = nn::dense_backward<S>(block.lin1, c.agg, nn::relu_backward<S>(c.hidden, dhidden));
    block.eps.grad(0, 0) += dagg.cwiseProduct(c.input).sum();
    dz = (S(1) + block.eps.value(0, 0)) * dagg;
    for (auto [u, v] : c.edges) {
      dz.row(v) += dagg.row(u);
      dz.row(u) += dagg.row(v);
    }
  }
  fused_backward<S>(model.encoder, tape.encoder.bypass ? nullptr : &model.encoder_bn, tape.descriptors, tape.encoder,
                    tape.mode, tape.nodes, tape.node_argmax, dz, false);
}

#define MAPPER_GIN_INSTANTIATE(S)                                                                              \
  template struct ModelState<S>;                                                                               \
  template ModelState<S> init_model<S>(const ModelConfig&, std::uint64_t);                                     \
  template ModelState<S> cast_model<S>(const ModelState<double>&);                                             \
  template Matrix<S> point_descriptors<S>(const GraphBatch&, Variant);                                         \
  template Matrix<S> encode_nodes<S>(ModelState<S>&, const GraphBatch&, Mode, Tape<S>*, bool);                 \
  template Matrix<S> gin_aggregate<S>(const Matrix<S>&, std::span<const Edge>, S);                             \
  template Matrix<S> gin_layer<S>(const GinBlock<S>&, const Matrix<S>&, std::span<const Edge>);                \
  template Matrix<S> forward<S>(ModelState<S>&, const GraphBatch&, Mode, nn::Rng*, Tape<S>*);                  \
  template void backward<S>(ModelState<S>&, const GraphBatch&, const Tape<S>&, const Matrix<S>&);

MAPPER_GIN_INSTANTIATE(float)
MAPPER_GIN_INSTANTIATE(double)

#undef MAPPER_GIN_INSTANTIATE

}  // namespace mapper_gin
