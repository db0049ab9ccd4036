#pragma once

// Dense layers, normalizations, dropout, loss and Adam with explicit
// reverse-mode contracts. Everything is templated on the scalar type so the
// same code runs in double for gradient checks and float for training.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mapper_gin::nn {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using RowVector = Eigen::Matrix<S, 1, Eigen::Dynamic>;

using Rng = std::mt19937_64;

enum class Mode { train, eval };

template <typename S>
struct Param {
  std::string name;
  Matrix<S> value;
  Matrix<S> grad;

  Param() = default;
  Param(std::string n, Matrix<S> v) : name(std::move(n)), value(std::move(v)), grad(Matrix<S>::Zero(value.rows(), value.cols())) {}

  Eigen::Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

inline void check_shape(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("shape mismatch: ") + what);
}

// Dense ---------------------------------------------------------------------

/// y = x * wt + b, wt is din x dout.
template <typename S>
struct Dense {
  Param<S> weight;
  Param<S> bias;

  Eigen::Index in_dim() const { return weight.value.rows(); }
  Eigen::Index out_dim() const { return weight.value.cols(); }
};

/// Glorot-uniform weights, zero bias.
template <typename S>
Dense<S> make_dense(Eigen::Index din, Eigen::Index dout, Rng& rng, const std::string& name) {
  const double limit = std::sqrt(6.0 / static_cast<double>(din + dout));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix<S> w(din, dout);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>(u(rng));
  return {Param<S>(name + ".weight", std::move(w)), Param<S>(name + ".bias", Matrix<S>::Zero(1, dout))};
}

template <typename S>
Matrix<S> dense(const Matrix<S>& x, const Matrix<S>& wt, const RowVector<S>& b) {
  check_shape(x.cols() == wt.rows() && b.cols() == wt.cols(), "dense");
  Matrix<S> y = x * wt;
  y.rowwise() += b;
  return y;
}

template <typename S>
Matrix<S> dense_forward(const Dense<S>& layer, const Matrix<S>& x) {
  return dense<S>(x, layer.weight.value, layer.bias.value.row(0));
}

/// Accumulates dWt = x^T dy and db = colsum(dy); returns dx = dy Wt^T.
template <typename S>
Matrix<S> dense_backward(Dense<S>& layer, const Matrix<S>& x, const Matrix<S>& dy) {
  check_shape(dy.cols() == layer.out_dim() && x.rows() == dy.rows(), "dense_backward");
  layer.weight.grad.noalias() += x.transpose() * dy;
  layer.bias.grad += dy.colwise().sum();
  return dy * layer.weight.value.transpose();
}

// ReLU / dropout --------------------------------------------------------------

template <typename S>
Matrix<S> relu(const Matrix<S>& x) {
  return x.cwiseMax(S(0));
}

/// Gradient through relu given its output; zero where the output is 0.
template <typename S>
Matrix<S> relu_backward(const Matrix<S>& y, const Matrix<S>& dy) {
  return (y.array() > S(0)).select(dy, S(0));
}

/// Inverted-dropout mask: entries are 0 with probability p and 1/(1-p) otherwise.
/// Empty when the layer is an identity (eval mode or p == 0).
template <typename S>
Matrix<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Mode mode, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout probability must be in [0, 1)");
  if (mode == Mode::eval || p == 0.0) return {};
  const S keep = static_cast<S>(1.0 / (1.0 - p));
  // One engine draw seeds a splitmix stream; each 64-bit output covers two entries.
  const auto threshold = static_cast<std::uint64_t>(std::ldexp(p, 32));
  std::uint64_t state = rng();
  Matrix<S> mask(rows, cols);
  S* out = mask.data();
  const Eigen::Index n = mask.size();
  for (Eigen::Index i = 0; i < n; i += 2) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    out[i] = (z & 0xffffffffULL) < threshold ? S(0) : keep;
    if (i + 1 < n) out[i + 1] = (z >> 32) < threshold ? S(0) : keep;
  }
  return mask;
}

template <typename S>
Matrix<S> apply_mask(const Matrix<S>& x, const Matrix<S>& mask) {
  if (mask.size() == 0) return x;
  return x.cwiseProduct(mask);
}

template <typename S>
Matrix<S> feature_dropout(const Matrix<S>& x, double p, Mode mode, Rng& rng) {
  return apply_mask<S>(x, dropout_mask<S>(x.rows(), x.cols(), p, mode, rng));
}

// BatchNorm -----------------------------------------------------------------

template <typename S>
struct BatchNorm {
  Param<S> gamma;
  Param<S> beta;
  RowVector<S> running_mean;
  RowVector<S> running_var;
  S momentum = S(0.1);
  S eps = S(1e-5);
};

template <typename S>
BatchNorm<S> make_batchnorm(Eigen::Index dim, const std::string& name) {
  BatchNorm<S> bn;
  bn.gamma = Param<S>(name + ".gamma", Matrix<S>::Ones(1, dim));
  bn.beta = Param<S>(name + ".beta", Matrix<S>::Zero(1, dim));
  bn.running_mean = RowVector<S>::Zero(dim);
  bn.running_var = RowVector<S>::Ones(dim);
  return bn;
}

template <typename S>
struct NormCache {
  Matrix<S> xhat;
  /// Per column (batchnorm) or per row (layernorm).
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std;
  Mode mode = Mode::train;
};

/// Train mode standardizes with batch statistics (1/n variance) and updates
/// running statistics (unbiased variance, momentum 0.1); eval mode uses them.
template <typename S>
Matrix<S> batchnorm_forward(BatchNorm<S>& bn, const Matrix<S>& x, Mode mode, NormCache<S>* cache = nullptr) {
  check_shape(x.cols() == bn.gamma.value.cols(), "batchnorm");
  RowVector<S> mean, var;
  if (mode == Mode::train) {
    if (x.rows() < 2) throw std::invalid_argument("batchnorm: training mode needs at least 2 rows");
    mean = x.colwise().mean();
    var = (x.rowwise() - mean).array().square().colwise().mean().matrix();
    const S n = static_cast<S>(x.rows());
    bn.running_mean = (S(1) - bn.momentum) * bn.running_mean + bn.momentum * mean;
    bn.running_var = (S(1) - bn.momentum) * bn.running_var + bn.momentum * var * (n / (n - S(1)));
  } else {
    mean = bn.running_mean;
    var = bn.running_var;
  }
  const RowVector<S> inv_std = (var.array() + bn.eps).rsqrt().matrix();
  Matrix<S> xhat = (x.rowwise() - mean).array().rowwise() * inv_std.array();
  Matrix<S> y = (xhat.array().rowwise() * bn.gamma.value.row(0).array()).matrix();
  y.rowwise() += bn.beta.value.row(0);
  if (cache) {
    cache->inv_std = inv_std.transpose();
    cache->xhat = std::move(xhat);
    cache->mode = mode;
  }
  return y;
}

template <typename S>
Matrix<S> batchnorm_backward(BatchNorm<S>& bn, const NormCache<S>& cache, const Matrix<S>& dy) {
  bn.gamma.grad += dy.cwiseProduct(cache.xhat).colwise().sum();
  bn.beta.grad += dy.colwise().sum();
  const Matrix<S> g = dy.array().rowwise() * bn.gamma.value.row(0).array();
  const RowVector<S> inv = cache.inv_std.transpose();
  if (cache.mode == Mode::eval) return g.array().rowwise() * inv.array();
  const RowVector<S> mean_g = g.colwise().mean();
  const RowVector<S> mean_gx = g.cwiseProduct(cache.xhat).colwise().mean();
  Matrix<S> dx = g.rowwise() - mean_g;
  dx -= (cache.xhat.array().rowwise() * mean_gx.array()).matrix();
  return dx.array().rowwise() * inv.array();
}

// LayerNorm -----------------------------------------------------------------

template <typename S>
struct LayerNorm {
  Param<S> gamma;
  Param<S> beta;
  S eps = S(1e-5);
};

template <typename S>
LayerNorm<S> make_layernorm(Eigen::Index dim, const std::string& name) {
  return {Param<S>(name + ".gamma", Matrix<S>::Ones(1, dim)), Param<S>(name + ".beta", Matrix<S>::Zero(1, dim))};
}

template <typename S>
Matrix<S> layernorm_forward(const LayerNorm<S>& ln, const Matrix<S>& x, NormCache<S>* cache = nullptr) {
  check_shape(x.cols() == ln.gamma.value.cols() && x.cols() >= 1, "layernorm");
  const Eigen::Matrix<S, Eigen::Dynamic, 1> mean = x.rowwise().mean();
  Matrix<S> c = x.colwise() - mean;
  const Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std = (c.array().square().rowwise().mean() + ln.eps).rsqrt().matrix();
  Matrix<S> xhat = c.array().colwise() * inv_std.array();
  Matrix<S> y = xhat.array().rowwise() * ln.gamma.value.row(0).array();
  y.rowwise() += ln.beta.value.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = inv_std;
  }
  return y;
}

template <typename S>
Matrix<S> layernorm_backward(LayerNorm<S>& ln, const NormCache<S>& cache, const Matrix<S>& dy) {
  ln.gamma.grad += dy.cwiseProduct(cache.xhat).colwise().sum();
  ln.beta.grad += dy.colwise().sum();
  const Matrix<S> g = dy.array().rowwise() * ln.gamma.value.row(0).array();
  const Eigen::Matrix<S, Eigen::Dynamic, 1> mean_g = g.rowwise().mean();
  const Eigen::Matrix<S, Eigen::Dynamic, 1> mean_gx = g.cwiseProduct(cache.xhat).rowwise().mean();
  Matrix<S> dx = g.colwise() - mean_g;
  dx -= (cache.xhat.array().colwise() * mean_gx.array()).matrix();
  return dx.array().colwise() * cache.inv_std.array();
}

// GraphNorm -----------------------------------------------------------------

/// y = gamma * (h - alpha * mu_g) / sigma_g + beta with per-graph statistics.
template <typename S>
struct GraphNorm {
  Param<S> alpha;
  Param<S> gamma;
  Param<S> beta;
  S eps = S(1e-5);
};

template <typename S>
GraphNorm<S> make_graphnorm(Eigen::Index dim, const std::string& name) {
  return {Param<S>(name + ".alpha", Matrix<S>::Ones(1, dim)), Param<S>(name + ".gamma", Matrix<S>::Ones(1, dim)),
          Param<S>(name + ".beta", Matrix<S>::Zero(1, dim))};
}

template <typename S>
struct GraphNormCache {
  Matrix<S> centered;  // h - alpha * mu_g
  Matrix<S> mean;      // G x d
  Matrix<S> inv_std;   // G x d
  std::vector<std::uint32_t> graph_id;
  std::vector<S> count;
};

template <typename S>
Matrix<S> graphnorm_forward(const GraphNorm<S>& gn, const Matrix<S>& x, std::span<const std::uint32_t> graph_id,
                            std::size_t num_graphs, GraphNormCache<S>* cache = nullptr) {
  check_shape(static_cast<std::size_t>(x.rows()) == graph_id.size() && x.cols() == gn.gamma.value.cols(), "graphnorm");
  const Eigen::Index d = x.cols();
  const auto G = static_cast<Eigen::Index>(num_graphs);
  Matrix<S> mean = Matrix<S>::Zero(G, d);
  std::vector<S> count(num_graphs, S(0));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto g = graph_id[static_cast<std::size_t>(i)];
    if (g >= num_graphs) throw std::out_of_range("graphnorm: graph id out of range");
    mean.row(g) += x.row(i);
    count[g] += S(1);
  }
  for (Eigen::Index g = 0; g < G; ++g) {
    if (count[static_cast<std::size_t>(g)] > S(0)) mean.row(g) /= count[static_cast<std::size_t>(g)];
  }
  const RowVector<S> alpha = gn.alpha.value.row(0);
  Matrix<S> centered(x.rows(), d);
  Matrix<S> var = Matrix<S>::Zero(G, d);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto g = graph_id[static_cast<std::size_t>(i)];
    centered.row(i) = x.row(i) - mean.row(g).cwiseProduct(alpha);
    var.row(g) += centered.row(i).cwiseAbs2();
  }
  Matrix<S> inv_std(G, d);
  for (Eigen::Index g = 0; g < G; ++g) {
    const S n = std::max(count[static_cast<std::size_t>(g)], S(1));
    inv_std.row(g) = (var.row(g).array() / n + gn.eps).rsqrt().matrix();
  }
  Matrix<S> y(x.rows(), d);
  const RowVector<S> gamma = gn.gamma.value.row(0);
  const RowVector<S> beta = gn.beta.value.row(0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto g = graph_id[static_cast<std::size_t>(i)];
    y.row(i) = centered.row(i).cwiseProduct(inv_std.row(g)).cwiseProduct(gamma) + beta;
  }
  if (cache) {
    cache->centered = std::move(centered);
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
    cache->graph_id.assign(graph_id.begin(), graph_id.end());
    cache->count = std::move(count);
  }
  return y;
}

template <typename S>
Matrix<S> graphnorm_backward(GraphNorm<S>& gn, const GraphNormCache<S>& cache, const Matrix<S>& dy) {
  const Eigen::Index n = dy.rows();
  const Eigen::Index d = dy.cols();
  const Eigen::Index G = cache.mean.rows();
  const RowVector<S> gamma = gn.gamma.value.row(0);
  const RowVector<S> alpha = gn.alpha.value.row(0);

  // s1_g = sum_i (dy_i * gamma) * c_i
  Matrix<S> s1 = Matrix<S>::Zero(G, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto g = cache.graph_id[static_cast<std::size_t>(i)];
    const auto xhat = cache.centered.row(i).cwiseProduct(cache.inv_std.row(g));
    gn.gamma.grad.row(0) += dy.row(i).cwiseProduct(xhat);
    gn.beta.grad.row(0) += dy.row(i);
    s1.row(g) += dy.row(i).cwiseProduct(gamma).cwiseProduct(cache.centered.row(i));
  }
  // dc_i = g_i / sigma - c_i * s1 / (m sigma^3); D_g = sum_i dc_i
  Matrix<S> dc(n, d);
  Matrix<S> dsum = Matrix<S>::Zero(G, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto g = cache.graph_id[static_cast<std::size_t>(i)];
    const S m = cache.count[g];
    const auto inv = cache.inv_std.row(g).array();
    dc.row(i) = (dy.row(i).cwiseProduct(gamma).array() * inv -
                 cache.centered.row(i).array() * s1.row(g).array() * inv.cube() / m)
                    .matrix();
    dsum.row(g) += dc.row(i);
  }
  for (Eigen::Index g = 0; g < G; ++g) gn.alpha.grad.row(0) -= cache.mean.row(g).cwiseProduct(dsum.row(g));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto g = cache.graph_id[static_cast<std::size_t>(i)];
    dc.row(i) -= dsum.row(g).cwiseProduct(alpha) / cache.count[g];
  }
  return dc;
}

// Loss ----------------------------------------------------------------------

template <typename S>
struct LossResult {
  double loss = 0.0;
  Matrix<S> grad;
};

/// Mean over rows of logsumexp(row) - row[label]; grad = (softmax - onehot) / n.
template <typename S>
LossResult<S> cross_entropy_logits(const Matrix<S>& logits, std::span<const int> labels) {
  check_shape(static_cast<std::size_t>(logits.rows()) == labels.size(), "cross_entropy");
  const Eigen::Index n = logits.rows();
  const Eigen::Index c = logits.cols();
  LossResult<S> out;
  out.grad.resize(n, c);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) throw std::out_of_range("cross_entropy: label out of range");
    const double mx = static_cast<double>(logits.row(i).maxCoeff());
    double z = 0.0;
    for (Eigen::Index k = 0; k < c; ++k) z += std::exp(static_cast<double>(logits(i, k)) - mx);
    const double lse = mx + std::log(z);
    total += lse - static_cast<double>(logits(i, y));
    for (Eigen::Index k = 0; k < c; ++k) {
      const double p = std::exp(static_cast<double>(logits(i, k)) - lse);
      out.grad(i, k) = static_cast<S>((p - (k == y ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  out.loss = n > 0 ? total / static_cast<double>(n) : 0.0;
  return out;
}

// Optimizer -----------------------------------------------------------------

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <typename S>
struct AdamState {
  AdamOptions options;
  std::vector<Matrix<S>> m;
  std::vector<Matrix<S>> v;
  std::int64_t t = 0;
};

/// Adam with bias correction; weight decay is added to the gradient (L2).
template <typename S>
void adam_step(std::span<Param<S>* const> params, AdamState<S>& state, double lr) {
  if (state.m.empty()) {
    for (const Param<S>* p : params) {
      state.m.push_back(Matrix<S>::Zero(p->value.rows(), p->value.cols()));
      state.v.push_back(Matrix<S>::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: parameter count changed");
  const AdamOptions& o = state.options;
  ++state.t;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param<S>& p = *params[i];
    check_shape(state.m[i].rows() == p.value.rows() && state.m[i].cols() == p.value.cols(), "adam moments");
    Matrix<S> g = p.grad;
    if (o.weight_decay != 0.0) g += static_cast<S>(o.weight_decay) * p.value;
    state.m[i] = static_cast<S>(o.beta1) * state.m[i] + static_cast<S>(1.0 - o.beta1) * g;
    state.v[i] = static_cast<S>(o.beta2) * state.v[i] + static_cast<S>(1.0 - o.beta2) * g.cwiseAbs2();
    const auto mhat = state.m[i].array() / static_cast<S>(bc1);
    const auto vhat = state.v[i].array() / static_cast<S>(bc2);
    p.value.array() -= static_cast<S>(lr) * mhat / (vhat.sqrt() + static_cast<S>(o.eps));
  }
}

/// base_lr * gamma^floor(epoch / step)
inline double steplr(int epoch, double base_lr = 1e-3, int step = 10, double gamma = 0.9) {
  if (epoch < 0) throw std::invalid_argument("steplr: epoch must be >= 0");
  return base_lr * std::pow(gamma, epoch / step);
}

}  // namespace mapper_gin::nn
