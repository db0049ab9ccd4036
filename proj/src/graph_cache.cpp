#include "mapper_gin/binary_io.hpp"
#include "mapper_gin/mapper.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

namespace mapper_gin {

namespace {

constexpr std::string_view kMagic{"MGRAPH1\0", 8};

CacheError truncated() { return CacheError(CacheError::Kind::truncated, "graph cache is truncated"); }

}  // namespace

std::string cache_encode(const GraphCache& cache) {
  ByteWriter w;
  w.bytes(kMagic);
  w.u64(cache.key);
  w.u32(static_cast<std::uint32_t>(cache.graphs.size()));
  for (const auto& g : cache.graphs) {
    w.u32(g.point_count);
    w.u32(static_cast<std::uint32_t>(g.nodes.size()));
    for (const auto& node : g.nodes) {
      w.u32(static_cast<std::uint32_t>(node.size()));
      for (std::uint32_t p : node) w.u32(p);
    }
    w.u32(static_cast<std::uint32_t>(g.edges.size()));
    for (const auto& [u, v] : g.edges) {
      w.u32(u);
      w.u32(v);
    }
    for (const auto& prov : g.provenance) {
      for (std::int32_t c : prov.cell) w.i32(c);
      w.i32(prov.cluster);
    }
  }
  w.u32(crc32_of(w.data()));
  return w.take();
}

GraphCache cache_decode(std::string_view bytes) {
  if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic) {
    throw CacheError(CacheError::Kind::version, "not a MGRAPH1 graph cache (bad magic or version)");
  }
  ByteReader r(bytes.substr(0, bytes.size() >= 4 ? bytes.size() - 4 : 0));
  GraphCache cache;
  try {
    r.skip(kMagic.size());
    cache.key = r.u64();
    const std::uint32_t count = r.u32();
    r.require(std::size_t{count} * 8);
    cache.graphs.reserve(count);
    for (std::uint32_t gi = 0; gi < count; ++gi) {
      MapperGraph g;
      g.point_count = r.u32();
      const std::uint32_t nodes = r.u32();
      r.require(std::size_t{nodes} * 4);
      g.nodes.resize(nodes);
      for (auto& node : g.nodes) {
        const std::uint32_t size = r.u32();
        r.require(std::size_t{size} * 4);
        node.resize(size);
        for (auto& p : node) p = r.u32();
      }
      const std::uint32_t edges = r.u32();
      r.require(std::size_t{edges} * 8);
      g.edges.resize(edges);
      for (auto& [u, v] : g.edges) {
        u = r.u32();
        v = r.u32();
      }
      g.provenance.resize(nodes);
      for (auto& prov : g.provenance) {
        for (auto& c : prov.cell) c = r.i32();
        prov.cluster = r.i32();
      }
      cache.graphs.push_back(std::move(g));
    }
  } catch (const std::out_of_range&) {
    throw truncated();
  }
  if (bytes.size() < 4 || r.position() != bytes.size() - 4) {
    // Either the CRC trailer is missing or there are stray bytes before it.
    if (bytes.size() < 4 || r.position() > bytes.size() - 4) throw truncated();
    throw CacheError(CacheError::Kind::checksum, "graph cache has trailing bytes");
  }
  const std::uint32_t stored = ByteReader(bytes.substr(bytes.size() - 4)).u32();
  if (stored != crc32_of(bytes.substr(0, bytes.size() - 4))) {
    throw CacheError(CacheError::Kind::checksum, "graph cache checksum mismatch");
  }
  return cache;
}

void cache_write(const std::filesystem::path& path, const GraphCache& cache) {
  write_file_atomic(path, cache_encode(cache));
}

GraphCache cache_read(const std::filesystem::path& path) {
  std::string bytes;
  if (!read_file(path, bytes)) throw CacheError(CacheError::Kind::io, "cannot read graph cache " + path.string());
  return cache_decode(bytes);
}

std::string cache_to_json(const GraphCache& cache) {
  nlohmann::json doc;
  doc["format"] = "MGRAPH1";
  doc["key"] = cache.key;
  auto& graphs = doc["graphs"] = nlohmann::json::array();
  for (const auto& g : cache.graphs) {
    nlohmann::json jg;
    jg["point_count"] = g.point_count;
    jg["nodes"] = g.nodes;
    auto& edges = jg["edges"] = nlohmann::json::array();
    for (const auto& [u, v] : g.edges) edges.push_back({u, v});
    auto& prov = jg["provenance"] = nlohmann::json::array();
    for (const auto& p : g.provenance) prov.push_back({p.cell[0], p.cell[1], p.cell[2], p.cluster});
    graphs.push_back(std::move(jg));
  }
  return doc.dump(1);
}

}  // namespace mapper_gin
