#include "mapper_gin/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mapper_gin {

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"dataset.kind", "synthetic", "synthetic | modelnet40"},
      {"dataset.root", "", "ModelNet40 root (<root>/<class>/<split>/*.off)"},
      {"dataset.points", "1024", "points per cloud"},
      {"synthetic.classes", "8", "number of synthetic shape classes (1..8)"},
      {"synthetic.samples_per_class", "200", "synthetic training clouds per class"},
      {"synthetic.test_per_class", "50", "synthetic test clouds per class"},
      {"synthetic.seed", "0", "synthetic generator seed"},
      {"mapper.n_intervals", "6", "cover intervals per lens axis"},
      {"mapper.gain", "0.3", "interval overlap fraction"},
      {"mapper.eps", "0.1", "DBSCAN radius"},
      {"mapper.min_pts", "4", "DBSCAN core threshold (point counts itself)"},
      {"model.variant", "mapper_gin", "mapper_gin | mapper_gin_base | mlp_baseline"},
      {"model.hidden_dim", "240", "hidden width"},
      {"model.layers", "4", "GIN layers"},
      {"model.p_edge", "0.3", "DropEdge probability"},
      {"model.p_feature", "0.3", "feature dropout probability"},
      {"model.classes", "8", "output classes"},
      {"run.epochs", "60", "training epochs"},
      {"run.batch_size", "64", "minibatch size"},
      {"run.lr", "0.001", "base learning rate"},
      {"run.weight_decay", "0.0001", "L2 weight decay"},
      {"run.lr_step", "10", "StepLR period in epochs"},
      {"run.lr_gamma", "0.9", "StepLR factor"},
      {"run.seeds", "0,1,2,3,4", "comma-separated seeds"},
      {"corruption.kinds", "all", "comma-separated corruption names or 'all'"},
      {"corruption.severities", "1,2,3,4,5", "comma-separated severities"},
      {"corruption.seed", "0", "corruption sampling seed"},
  };
  return keys;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Config::Config() {
  for (const ConfigKey& k : config_keys()) values_.emplace(std::string(k.key), std::string(k.default_value));
}

Config Config::parse(std::string_view text) {
  Config cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    cfg.set(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void Config::set(std::string_view key, std::string_view value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("unknown config key '" + std::string(key) + "'");
  it->second = std::string(value);
}

void Config::set_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw std::invalid_argument("--set expects key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& Config::get(std::string_view key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("unknown config key '" + std::string(key) + "'");
  return it->second;
}

std::int64_t Config::get_int(std::string_view key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const long long out = std::stoll(v, &used);
    if (used == v.size()) return out;
  } catch (const std::logic_error&) {
  }
  throw std::invalid_argument(std::string(key) + ": expected an integer, got '" + v + "'");
}

double Config::get_double(std::string_view key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::logic_error&) {
  }
  throw std::invalid_argument(std::string(key) + ": expected a number, got '" + v + "'");
}

std::vector<std::string> Config::get_list(std::string_view key) const {
  std::vector<std::string> out;
  std::istringstream in(get(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string Config::canonical() const {
  std::string out;
  for (const ConfigKey& k : config_keys()) {
    out += k.key;
    out += '=';
    out += get(k.key);
    out += '\n';
  }
  return out;
}

std::uint64_t Config::hash() const { return fnv1a(canonical()); }

namespace {

std::string section_text(const Config& cfg, std::initializer_list<std::string_view> prefixes) {
  std::string text;
  for (const ConfigKey& k : config_keys()) {
    for (std::string_view p : prefixes) {
      if (k.key.starts_with(p)) {
        text += std::string(k.key) + '=' + cfg.get(k.key) + '\n';
        break;
      }
    }
  }
  return text;
}

}  // namespace

std::uint64_t Config::graph_key(std::string_view split) const {
  return fnv1a(section_text(*this, {"dataset.", "synthetic.", "mapper."}) + "split=" + std::string(split) + '\n');
}

std::uint64_t Config::model_key() const {
  return fnv1a(section_text(*this, {"dataset.", "synthetic.", "mapper.", "model."}));
}

MapperParams Config::mapper() const {
  MapperParams p;
  p.n_intervals = static_cast<int>(get_int("mapper.n_intervals"));
  p.gain = get_double("mapper.gain");
  p.eps = get_double("mapper.eps");
  p.min_pts = static_cast<int>(get_int("mapper.min_pts"));
  if (p.n_intervals < 1) throw std::invalid_argument("mapper.n_intervals must be >= 1");
  if (p.gain < 0.0 || p.gain >= 1.0) throw std::invalid_argument("mapper.gain must be in [0, 1)");
  if (!(p.eps > 0.0)) throw std::invalid_argument("mapper.eps must be > 0");
  if (p.min_pts < 1) throw std::invalid_argument("mapper.min_pts must be >= 1");
  return p;
}

ModelConfig Config::model() const {
  ModelConfig m;
  m.variant = variant_from_name(get("model.variant"));
  m.hidden_dim = static_cast<int>(get_int("model.hidden_dim"));
  m.layers = static_cast<int>(get_int("model.layers"));
  m.p_edge = get_double("model.p_edge");
  m.p_feature = get_double("model.p_feature");
  m.classes = static_cast<int>(get_int("model.classes"));
  m.validate();
  return m;
}

RunConfig Config::run() const {
  RunConfig r;
  r.epochs = static_cast<int>(get_int("run.epochs"));
  r.batch_size = static_cast<int>(get_int("run.batch_size"));
  r.lr = get_double("run.lr");
  r.weight_decay = get_double("run.weight_decay");
  r.lr_step = static_cast<int>(get_int("run.lr_step"));
  r.lr_gamma = get_double("run.lr_gamma");
  r.seeds.clear();
  for (const std::string& s : get_list("run.seeds")) {
    try {
      r.seeds.push_back(std::stoull(s));
    } catch (const std::logic_error&) {
      throw std::invalid_argument("run.seeds: bad seed '" + s + "'");
    }
  }
  const auto kinds = get_list("corruption.kinds");
  if (!(kinds.size() == 1 && kinds[0] == "all")) {
    r.kinds.clear();
    for (const std::string& k : kinds) r.kinds.push_back(corruption_from_name(k));
  }
  r.severities.clear();
  for (const std::string& s : get_list("corruption.severities")) {
    try {
      r.severities.push_back(std::stoi(s));
    } catch (const std::logic_error&) {
      throw std::invalid_argument("corruption.severities: bad value '" + s + "'");
    }
  }
  r.corruption_seed = static_cast<std::uint64_t>(get_int("corruption.seed"));
  r.validate();
  return r;
}

}  // namespace mapper_gin
