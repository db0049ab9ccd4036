#include "mapper_gin/pointcloud.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace mapper_gin {

namespace {

struct LineReader {
  std::istream& in;
  int line_no = 0;

  // Next non-empty, non-comment line split into tokens. False at EOF.
  bool next(std::vector<std::string_view>& tokens, std::string& storage) {
    while (std::getline(in, storage)) {
      ++line_no;
      if (auto hash = storage.find('#'); hash != std::string::npos) storage.resize(hash);
      tokens.clear();
      std::string_view rest(storage);
      while (!rest.empty()) {
        auto begin = rest.find_first_not_of(" \t\r\f\v");
        if (begin == std::string_view::npos) break;
        rest.remove_prefix(begin);
        auto end = rest.find_first_of(" \t\r\f\v");
        tokens.push_back(rest.substr(0, end));
        if (end == std::string_view::npos) break;
        rest.remove_prefix(end);
      }
      if (!tokens.empty()) return true;
    }
    return false;
  }
};

template <typename T>
T parse_number(std::string_view token, int line) {
  T value{};
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc{} || ptr != token.data() + token.size()) {
    throw ParseError("non-numeric token '" + std::string(token) + "'", line);
  }
  return value;
}

}  // namespace

PointCloud parse_off(std::istream& in) {
  LineReader reader{in};
  std::vector<std::string_view> tok;
  std::string buf;

  if (!reader.next(tok, buf)) throw ParseError("empty input, expected OFF header", reader.line_no);
  if (tok[0].substr(0, 3) != "OFF") throw ParseError("missing OFF header", reader.line_no);

  // Counts either follow on the header line (possibly glued to "OFF") or on the next line.
  std::vector<std::string> counts;
  if (tok[0].size() > 3) counts.emplace_back(tok[0].substr(3));
  for (std::size_t i = 1; i < tok.size(); ++i) counts.emplace_back(tok[i]);
  if (counts.empty()) {
    if (!reader.next(tok, buf)) throw ParseError("missing vertex/face counts", reader.line_no);
    for (auto t : tok) counts.emplace_back(t);
  }
  if (counts.size() < 2) throw ParseError("malformed header counts", reader.line_no);
  const int header_line = reader.line_no;
  const auto nv = parse_number<long long>(counts[0], header_line);
  const auto nf = parse_number<long long>(counts[1], header_line);
  if (nv < 1) throw ParseError("zero vertices declared", header_line);
  if (nf < 0) throw ParseError("negative face count", header_line);

  PointCloud pc;
  pc.points.resize(static_cast<Index>(nv), 3);
  for (long long v = 0; v < nv; ++v) {
    if (!reader.next(tok, buf)) {
      throw ParseError("expected " + std::to_string(nv) + " vertices, found " + std::to_string(v),
                       reader.line_no);
    }
    if (tok.size() < 3) throw ParseError("vertex needs 3 coordinates", reader.line_no);
    for (int k = 0; k < 3; ++k) {
      const double c = parse_number<double>(tok[k], reader.line_no);
      if (!std::isfinite(c)) throw ParseError("non-finite coordinate", reader.line_no);
      pc.points(static_cast<Index>(v), k) = c;
    }
  }
  for (long long f = 0; f < nf; ++f) {
    if (!reader.next(tok, buf)) {
      throw ParseError("expected " + std::to_string(nf) + " faces, found " + std::to_string(f),
                       reader.line_no);
    }
    const auto k = parse_number<long long>(tok[0], reader.line_no);
    if (k < 1 || static_cast<long long>(tok.size()) < k + 1) {
      throw ParseError("truncated face record", reader.line_no);
    }
    for (long long i = 1; i <= k; ++i) {
      const auto idx = parse_number<long long>(tok[static_cast<std::size_t>(i)], reader.line_no);
      if (idx < 0 || idx >= nv) throw ParseError("face index out of range", reader.line_no);
    }
  }
  return pc;
}

PointCloud parse_off(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_off(in);
}

PointCloud read_off_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return parse_off(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
}

namespace {

void append_xyz_row(std::string& out, const Points& points, Index i) {
  char line[96];
  const int n = std::snprintf(line, sizeof line, "%.9g %.9g %.9g\n", points(i, 0), points(i, 1),
                              points(i, 2));
  out.append(line, static_cast<std::size_t>(n));
}

}  // namespace

std::string serialize_off(const PointCloud& pc) {
  std::string out = "OFF\n" + std::to_string(pc.size()) + " 0 0\n";
  for (Index i = 0; i < pc.size(); ++i) append_xyz_row(out, pc.points, i);
  return out;
}

void write_xyz(std::ostream& out, const Points& points) {
  std::string text;
  for (Index i = 0; i < points.rows(); ++i) append_xyz_row(text, points, i);
  out << text;
}

Points normalize_unit_sphere(const Points& points) {
  const Eigen::RowVector3d centroid = points.colwise().mean();
  Points centered = points.rowwise() - centroid;
  const double r = std::max(centered.rowwise().norm().maxCoeff(), 1e-12);
  return centered / r;
}

PointCloud normalize_unit_sphere(const PointCloud& pc) {
  return PointCloud{normalize_unit_sphere(pc.points), pc.label};
}

std::vector<Index> farthest_point_sampling(const Points& points, Index n, Index start) {
  const Index total = points.rows();
  if (total == 0) throw std::invalid_argument("farthest_point_sampling: empty cloud");
  if (n < 1) throw std::invalid_argument("farthest_point_sampling: n must be >= 1");
  if (start < 0 || start >= total) throw std::out_of_range("farthest_point_sampling: bad start");

  const Index count = std::min(n, total);
  std::vector<Index> picked;
  picked.reserve(static_cast<std::size_t>(count));
  Eigen::VectorXd min_d2 = Eigen::VectorXd::Constant(total, std::numeric_limits<double>::infinity());
  Index current = start;
  for (Index s = 0; s < count; ++s) {
    picked.push_back(current);
    min_d2(current) = -1.0;
    Index best = -1;
    double best_d2 = -1.0;
    for (Index i = 0; i < total; ++i) {
      if (min_d2(i) < 0.0) continue;
      const double d2 = (points.row(i) - points.row(current)).squaredNorm();
      if (d2 < min_d2(i)) min_d2(i) = d2;
      if (min_d2(i) > best_d2) {
        best_d2 = min_d2(i);
        best = i;
      }
    }
    if (best < 0) break;
    current = best;
  }
  return picked;
}

Points take_rows(const Points& points, const std::vector<Index>& rows) {
  Points out(static_cast<Index>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = points.row(rows[i]);
  return out;
}

std::string_view split_name(Split split) { return split == Split::train ? "train" : "test"; }

Split split_from_name(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

std::vector<ManifestEntry> DatasetManifest::split(Split which) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries) {
    if (e.split == which) out.push_back(e);
  }
  return out;
}

void DatasetManifest::validate() const {
  const int classes = static_cast<int>(class_names.size());
  std::vector<bool> seen(class_names.size(), false);
  for (const auto& e : entries) {
    if (e.label < 0 || e.label >= classes) {
      throw std::invalid_argument("manifest entry '" + e.source + "' has invalid class index");
    }
    seen[static_cast<std::size_t>(e.label)] = true;
  }
  if (!entries.empty() && std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw std::invalid_argument("manifest class indices are not dense");
  }
}

DatasetManifest enumerate_modelnet(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw std::runtime_error("dataset root not found: " + root.string());
  DatasetManifest manifest;
  std::vector<fs::path> class_dirs;
  for (const auto& d : fs::directory_iterator(root)) {
    if (d.is_directory()) class_dirs.push_back(d.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  for (const auto& dir : class_dirs) {
    const int label = static_cast<int>(manifest.class_names.size());
    manifest.class_names.push_back(dir.filename().string());
    for (Split split : {Split::train, Split::test}) {
      const fs::path sub = dir / std::string(split_name(split));
      if (!fs::is_directory(sub)) continue;
      std::vector<fs::path> files;
      for (const auto& f : fs::directory_iterator(sub)) {
        if (f.is_regular_file() && f.path().extension() == ".off") files.push_back(f.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        manifest.entries.push_back({f.string(), label, split, f.stem().string()});
      }
    }
  }
  manifest.validate();
  return manifest;
}

DatasetManifest synthetic_manifest(int classes, int train_per_class, int test_per_class,
                                   std::uint64_t seed) {
  if (classes < 1 || classes > kShapeCount) {
    throw std::invalid_argument("synthetic.classes must be in [1, 8]");
  }
  DatasetManifest manifest;
  for (int c = 0; c < classes; ++c) manifest.class_names.emplace_back(shape_name(static_cast<Shape>(c)));
  for (Split split : {Split::train, Split::test}) {
    const int per_class = split == Split::train ? train_per_class : test_per_class;
    for (int i = 0; i < per_class; ++i) {
      for (int c = 0; c < classes; ++c) {
        const auto s = derive_seed(seed, static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(c),
                                   static_cast<std::uint64_t>(i));
        const std::string shape(shape_name(static_cast<Shape>(c)));
        manifest.entries.push_back({"synthetic:" + shape + ":" + std::to_string(s), c, split,
                                    shape + "_" + std::to_string(i)});
      }
    }
  }
  return manifest;
}

PointCloud load_sample(const ManifestEntry& entry, Index n_points) {
  constexpr std::string_view prefix = "synthetic:";
  PointCloud pc;
  if (std::string_view(entry.source).substr(0, prefix.size()) == prefix) {
    const std::string_view rest = std::string_view(entry.source).substr(prefix.size());
    const auto colon = rest.find(':');
    if (colon == std::string_view::npos) throw std::invalid_argument("bad synthetic source " + entry.source);
    const Shape shape = shape_from_name(rest.substr(0, colon));
    const auto seed = std::stoull(std::string(rest.substr(colon + 1)));
    pc = sample_synthetic(shape, n_points, seed);
  } else {
    pc = normalize_unit_sphere(read_off_file(entry.source));
    if (pc.size() > n_points) pc.points = take_rows(pc.points, farthest_point_sampling(pc.points, n_points, 0));
  }
  pc.label = entry.label;
  return pc;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ (b + 0x51ed2701ULL));
  return splitmix64(h ^ (c + 0x2545f491ULL));
}

}  // namespace mapper_gin
