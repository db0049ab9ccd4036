#include "mapper_gin/checkpoint.hpp"

#include "mapper_gin/binary_io.hpp"
#include "mapper_gin/mapper.hpp"

#include <cstring>

namespace mapper_gin {

namespace {

constexpr std::string_view kMagic{"MCKPT1\0\0", 8};

template <typename S>
void put_matrix(ByteWriter& w, const nn::Matrix<S>& m) {
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (Index i = 0; i < m.size(); ++i) w.f64(static_cast<double>(m.data()[i]));
}

template <typename S, typename Dst>
void get_matrix(ByteReader& r, Dst& m, Index rows, Index cols) {
  const Index got_rows = r.u32();
  const Index got_cols = r.u32();
  if (got_rows != rows || got_cols != cols) {
    throw CacheError(CacheError::Kind::version, "checkpoint array shape does not match its config");
  }
  r.require(static_cast<std::size_t>(rows * cols) * 8);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(r.f64());
}

}  // namespace

template <typename S>
std::string checkpoint_encode(const Checkpoint<S>& ckpt) {
  ByteWriter w;
  w.bytes(kMagic);
  w.u64(ckpt.config_hash);
  w.u32(static_cast<std::uint32_t>(ckpt.epoch));
  w.f64(ckpt.clean_accuracy);
  const ModelConfig& c = ckpt.model.config;
  w.u32(static_cast<std::uint32_t>(c.variant));
  w.u32(static_cast<std::uint32_t>(c.hidden_dim));
  w.u32(static_cast<std::uint32_t>(c.layers));
  w.u32(static_cast<std::uint32_t>(c.classes));
  w.f64(c.p_edge);
  w.f64(c.p_feature);

  auto& model = const_cast<ModelState<S>&>(ckpt.model);
  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    w.str(p->name);
    put_matrix<S>(w, p->value);
  }
  const auto bns = model.batchnorms();
  w.u32(static_cast<std::uint32_t>(bns.size()));
  for (const auto* bn : bns) {
    put_matrix<S>(w, bn->running_mean);
    put_matrix<S>(w, bn->running_var);
  }
  const bool has_opt = !ckpt.optimizer.m.empty();
  w.u32(has_opt ? 1 : 0);
  w.u64(static_cast<std::uint64_t>(ckpt.optimizer.t));
  const auto& o = ckpt.optimizer.options;
  for (double v : {o.lr, o.beta1, o.beta2, o.eps, o.weight_decay}) w.f64(v);
  if (has_opt) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      put_matrix<S>(w, ckpt.optimizer.m[i]);
      put_matrix<S>(w, ckpt.optimizer.v[i]);
    }
  }
  w.str(ckpt.rng_state);
  w.u32(crc32_of(w.data()));
  return w.take();
}

template <typename S>
Checkpoint<S> checkpoint_decode(std::string_view bytes) {
  if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic) {
    throw CacheError(CacheError::Kind::version, "not a MCKPT1 checkpoint (bad magic or version)");
  }
  if (bytes.size() < kMagic.size() + 4) throw CacheError(CacheError::Kind::truncated, "checkpoint is truncated");
  const std::string_view body = bytes.substr(0, bytes.size() - 4);
  if (ByteReader(bytes.substr(bytes.size() - 4)).u32() != crc32_of(body)) {
    throw CacheError(CacheError::Kind::checksum, "checkpoint checksum mismatch");
  }
  ByteReader r(body);
  Checkpoint<S> ckpt;
  try {
    r.skip(kMagic.size());
    ckpt.config_hash = r.u64();
    ckpt.epoch = static_cast<int>(r.u32());
    ckpt.clean_accuracy = r.f64();
    ModelConfig c;
    c.variant = static_cast<Variant>(r.u32());
    c.hidden_dim = static_cast<int>(r.u32());
    c.layers = static_cast<int>(r.u32());
    c.classes = static_cast<int>(r.u32());
    c.p_edge = r.f64();
    c.p_feature = r.f64();
    ckpt.model = init_model<S>(c, 0);
    auto params = ckpt.model.parameters();
    if (r.u32() != params.size()) throw CacheError(CacheError::Kind::version, "checkpoint parameter count mismatch");
    for (auto* p : params) {
      if (r.str() != p->name) throw CacheError(CacheError::Kind::version, "checkpoint parameter name mismatch");
      get_matrix<S>(r, p->value, p->value.rows(), p->value.cols());
      p->zero_grad();
    }
    auto bns = ckpt.model.batchnorms();
    if (r.u32() != bns.size()) throw CacheError(CacheError::Kind::version, "checkpoint batchnorm count mismatch");
    for (auto* bn : bns) {
      get_matrix<S>(r, bn->running_mean, 1, bn->running_mean.cols());
      get_matrix<S>(r, bn->running_var, 1, bn->running_var.cols());
    }
    const bool has_opt = r.u32() != 0;
    ckpt.optimizer.t = static_cast<std::int64_t>(r.u64());
    auto& o = ckpt.optimizer.options;
    o.lr = r.f64();
    o.beta1 = r.f64();
    o.beta2 = r.f64();
    o.eps = r.f64();
    o.weight_decay = r.f64();
    if (has_opt) {
      for (auto* p : params) {
        nn::Matrix<S> m(p->value.rows(), p->value.cols()), v(p->value.rows(), p->value.cols());
        get_matrix<S>(r, m, m.rows(), m.cols());
        get_matrix<S>(r, v, v.rows(), v.cols());
        ckpt.optimizer.m.push_back(std::move(m));
        ckpt.optimizer.v.push_back(std::move(v));
      }
    }
    ckpt.rng_state = r.str();
  } catch (const std::out_of_range&) {
    throw CacheError(CacheError::Kind::truncated, "checkpoint is truncated");
  } catch (const std::invalid_argument& e) {
    throw CacheError(CacheError::Kind::version, std::string("checkpoint config invalid: ") + e.what());
  }
  if (r.position() != body.size()) throw CacheError(CacheError::Kind::checksum, "checkpoint has trailing bytes");
  return ckpt;
}

template <typename S>
void checkpoint_write(const std::filesystem::path& path, const Checkpoint<S>& ckpt) {
  write_file_atomic(path, checkpoint_encode(ckpt));
}

template <typename S>
Checkpoint<S> checkpoint_read(const std::filesystem::path& path) {
  std::string bytes;
  if (!read_file(path, bytes)) throw CacheError(CacheError::Kind::io, "cannot read checkpoint " + path.string());
  return checkpoint_decode<S>(bytes);
}

template <typename S>
std::uint64_t parameter_checksum(const ModelState<S>& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const auto& m) {
    for (Index i = 0; i < m.size(); ++i) {
      const double v = static_cast<double>(m.data()[i]);
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      h = splitmix64(h ^ bits);
    }
  };
  for (const auto* p : model.parameters()) mix(p->value);
  for (const auto* bn : const_cast<ModelState<S>&>(model).batchnorms()) {
    mix(bn->running_mean);
    mix(bn->running_var);
  }
  return h;
}

template std::string checkpoint_encode<float>(const Checkpoint<float>&);
template std::string checkpoint_encode<double>(const Checkpoint<double>&);
template Checkpoint<float> checkpoint_decode<float>(std::string_view);
template Checkpoint<double> checkpoint_decode<double>(std::string_view);
template void checkpoint_write<float>(const std::filesystem::path&, const Checkpoint<float>&);
template void checkpoint_write<double>(const std::filesystem::path&, const Checkpoint<double>&);
template Checkpoint<float> checkpoint_read<float>(const std::filesystem::path&);
template Checkpoint<double> checkpoint_read<double>(const std::filesystem::path&);
template std::uint64_t parameter_checksum<float>(const ModelState<float>&);
template std::uint64_t parameter_checksum<double>(const ModelState<double>&);

}  // namespace mapper_gin
