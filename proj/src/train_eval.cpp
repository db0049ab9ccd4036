#include "mapper_gin/train_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <memory>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mapper_gin {

void RunConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("run: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("run: batch_size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("run: lr must be > 0");
  if (weight_decay < 0.0) throw std::invalid_argument("run: weight_decay must be >= 0");
  if (lr_step < 1) throw std::invalid_argument("run: lr_step must be >= 1");
  if (!(lr_gamma > 0.0)) throw std::invalid_argument("run: lr_gamma must be > 0");
  if (seeds.empty()) throw std::invalid_argument("run: at least one seed is required");
  for (int s : severities) {
    if (s < 1 || s > 5) throw std::invalid_argument("run: severities must be in 1..5");
  }
}

std::vector<Sample> make_samples(std::span<const PointCloud> clouds, const MapperParams& params, bool need_graphs) {
  std::vector<Sample> out;
  out.reserve(clouds.size());
  for (const PointCloud& pc : clouds) {
    Sample s;
    s.points = pc.points;
    if (need_graphs) s.graph = build_mapper_graph(pc.points, params);
    s.label = pc.label.value_or(0);
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

std::vector<const Sample*> pointers(std::span<const Sample> samples) {
  std::vector<const Sample*> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back(&s);
  return out;
}

template <typename S>
std::vector<int> argmax_rows(const nn::Matrix<S>& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Index i = 0; i < logits.rows(); ++i) {
    Index best = 0;
    for (Index k = 1; k < logits.cols(); ++k) {
      if (logits(i, k) > logits(i, best)) best = k;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

bool needs_graphs(Variant v) { return v != Variant::mlp_baseline; }

// Batch temporaries are several MB; without this glibc maps and unmaps them on
// every step and the page faults cost more than the arithmetic.
void keep_large_blocks() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)once;
#endif
}

std::string rng_text(const nn::Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

}  // namespace

// Training ------------------------------------------------------------------

TrainResult train(const RunConfig& run, const ModelConfig& model_config, std::span<const Sample> train_set,
                  std::span<const Sample> test_set, std::uint64_t seed, const EpochCallback& on_epoch) {
  run.validate();
  model_config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  const bool graphs = needs_graphs(model_config.variant);
  keep_large_blocks();

  TrainResult result;
  TrainModel model = init_model<TrainScalar>(model_config, derive_seed(seed, 1));
  nn::Rng shuffle_rng(derive_seed(seed, 2));
  nn::Rng drop_rng(derive_seed(seed, 3));
  result.optimizer.options.lr = run.lr;
  result.optimizer.options.weight_decay = run.weight_decay;

  // Test batches never change, so build them once.
  std::vector<GraphBatch> test_batches;
  const auto test_ptrs = pointers(test_set);
  for (std::size_t b = 0; b < test_ptrs.size(); b += static_cast<std::size_t>(run.batch_size)) {
    const std::size_t e = std::min(test_ptrs.size(), b + static_cast<std::size_t>(run.batch_size));
    test_batches.push_back(make_batch(std::span(test_ptrs).subspan(b, e - b), graphs));
  }

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  double best_acc = -1.0;
  Tape<TrainScalar> tape;
  std::vector<const Sample*> chunk;

  for (int epoch = 0; epoch < run.epochs; ++epoch) {
    // Fisher-Yates with our own draws: std::shuffle is not portable across libraries.
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(shuffle_rng() % i);
      std::swap(order[i - 1], order[j]);
    }
    const double lr = nn::steplr(epoch, run.lr, run.lr_step, run.lr_gamma);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(run.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(run.batch_size));
      chunk.clear();
      for (std::size_t i = b; i < e; ++i) chunk.push_back(&train_set[order[i]]);
      const GraphBatch batch = make_batch(chunk, graphs);
      model.zero_grad();
      const nn::Matrix<TrainScalar> logits = forward(model, batch, nn::Mode::train, &drop_rng, &tape);
      const auto loss = nn::cross_entropy_logits<TrainScalar>(logits, batch.labels);
      backward(model, batch, tape, loss.grad);
      auto params = model.parameters();
      nn::adam_step<TrainScalar>(params, result.optimizer, lr);
      ++result.optimizer_steps;
      loss_sum += loss.loss * static_cast<double>(e - b);
      seen += e - b;
    }

    std::size_t correct = 0;
    for (const GraphBatch& batch : test_batches) {
      const auto pred = argmax_rows(forward(model, batch, nn::Mode::eval));
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.labels[i];
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.clean_accuracy = test_set.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(test_set.size());
    result.history.push_back(rec);
    if (rec.clean_accuracy > best_acc) {
      best_acc = rec.clean_accuracy;
      result.best_epoch = epoch;
      result.best = model;
    }
    if (on_epoch) on_epoch(rec);
  }
  result.last = std::move(model);
  result.rng_state = rng_text(drop_rng);
  return result;
}

std::size_t select_best(std::span<const EpochRecord> history) {
  if (history.empty()) throw std::invalid_argument("select_best: empty history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i].clean_accuracy > history[best].clean_accuracy) best = i;
  }
  return best;
}

// Evaluation ----------------------------------------------------------------

Predictor model_predictor(const TrainModel& model, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("model_predictor: batch_size must be >= 1");
  auto state = std::make_shared<TrainModel>(model);
  return [state, batch_size](std::span<const Sample* const> samples) {
    const bool graphs = needs_graphs(state->config.variant);
    std::vector<int> out;
    out.reserve(samples.size());
    for (std::size_t b = 0; b < samples.size(); b += static_cast<std::size_t>(batch_size)) {
      const std::size_t n = std::min(samples.size() - b, static_cast<std::size_t>(batch_size));
      const GraphBatch batch = make_batch(samples.subspan(b, n), graphs);
      const auto pred = argmax_rows(forward(*state, batch, nn::Mode::eval));
      out.insert(out.end(), pred.begin(), pred.end());
    }
    return out;
  };
}

double accuracy(const Predictor& predict, std::span<const Sample> samples, int batch_size) {
  if (samples.empty()) return 0.0;
  if (batch_size < 1) throw std::invalid_argument("accuracy: batch_size must be >= 1");
  const auto ptrs = pointers(samples);
  std::size_t correct = 0;
  for (std::size_t b = 0; b < ptrs.size(); b += static_cast<std::size_t>(batch_size)) {
    const std::size_t n = std::min(ptrs.size() - b, static_cast<std::size_t>(batch_size));
    const auto pred = predict(std::span(ptrs).subspan(b, n));
    if (pred.size() != n) throw std::runtime_error("accuracy: predictor returned the wrong number of labels");
    for (std::size_t i = 0; i < n; ++i) correct += pred[i] == ptrs[b + i]->label;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

double MetricsTable::kind_mean(CorruptionKind kind) const {
  const auto it = accuracy.find(kind);
  if (it == accuracy.end() || it->second.empty()) throw std::out_of_range("MetricsTable: no values for kind");
  double sum = 0.0;
  for (const auto& [sev, acc] : it->second) sum += acc;
  return sum / static_cast<double>(it->second.size());
}

std::map<std::string, double> MetricsTable::per_kind_means() const {
  std::map<std::string, double> out;
  for (const auto& [kind, cells] : accuracy) {
    if (!cells.empty()) out[std::string(corruption_name(kind))] = kind_mean(kind);
  }
  return out;
}

std::vector<Sample> corrupt_samples(std::span<const Sample> clean, CorruptionKind kind, int severity,
                                    std::uint64_t seed, const MapperParams& params, bool need_graphs) {
  const std::uint64_t cell_seed = corruption_seed(seed, kind, severity);
  std::vector<Sample> out;
  out.reserve(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    CorruptionSpec spec;
    spec.kind = kind;
    spec.severity = severity;
    spec.seed = derive_seed(cell_seed, i);
    PointCloud pc;
    pc.points = clean[i].points;
    pc.label = clean[i].label;
    Sample s;
    s.points = apply_corruption(pc, spec).points;
    if (need_graphs) s.graph = build_mapper_graph(s.points, params);
    s.label = clean[i].label;
    out.push_back(std::move(s));
  }
  return out;
}

MetricsTable evaluate(const Predictor& predict, std::span<const Sample> clean, const EvalOptions& options) {
  MetricsTable table;
  table.clean = accuracy(predict, clean, options.batch_size);
  for (CorruptionKind kind : options.kinds) {
    for (int sev : options.severities) {
      const std::vector<Sample> cell =
          options.source ? options.source(kind, sev)
                         : corrupt_samples(clean, kind, sev, options.seed, options.mapper, options.need_graphs);
      table.accuracy[kind][sev] = accuracy(predict, cell, options.batch_size);
    }
  }
  return table;
}

// Aggregation ---------------------------------------------------------------

namespace {

struct CategoryDef {
  std::string_view name;
  std::vector<std::string_view> members;
};

const std::vector<CategoryDef>& category_defs() {
  static const std::vector<CategoryDef> defs = {
      {"Density", {"occlusion", "lidar", "density_inc", "density_dec", "cutout"}},
      {"Noise", {"uniform", "gaussian", "impulse", "upsampling", "background"}},
      {"Transformation", {"rotation", "shear", "ffd", "rbf", "inv_rbf"}},
      {"Hard", {"occlusion", "lidar", "background"}},
      {"Density*", {"density_inc", "density_dec", "cutout"}},
      {"Noise*", {"uniform", "gaussian", "impulse", "upsampling"}},
      {"Overall", {kBenchmarkKinds.begin(), kBenchmarkKinds.end()}},
  };
  return defs;
}

}  // namespace

std::vector<CategoryValue> aggregate_categories(const std::map<std::string, double>& per_kind) {
  std::vector<CategoryValue> out;
  for (const CategoryDef& def : category_defs()) {
    CategoryValue v;
    v.name = std::string(def.name);
    double sum = 0.0;
    int n = 0;
    for (std::string_view k : def.members) {
      const auto it = per_kind.find(std::string(k));
      if (it == per_kind.end()) {
        v.missing.emplace_back(k);
      } else {
        sum += it->second;
        ++n;
      }
    }
    v.available = n > 0;
    v.mean = n > 0 ? sum / n : 0.0;
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<std::pair<std::string, double>> flatten(const MetricsTable& table) {
  std::vector<std::pair<std::string, double>> out;
  out.emplace_back("clean", table.clean);
  for (const auto& [kind, cells] : table.accuracy) {
    for (const auto& [sev, acc] : cells) {
      out.emplace_back(std::string(corruption_name(kind)) + "@" + std::to_string(sev), acc);
    }
  }
  const auto means = table.per_kind_means();
  for (const auto& [kind, cells] : table.accuracy) {
    const std::string name(corruption_name(kind));
    if (means.count(name)) out.emplace_back(name, means.at(name));
  }
  for (const CategoryValue& c : aggregate_categories(means)) {
    if (c.available) out.emplace_back(c.name, c.mean);
  }
  return out;
}

std::vector<CellStat> summarize(std::span<const MetricsTable> tables) {
  if (tables.empty()) throw std::invalid_argument("summarize: no tables");
  std::vector<std::string> names;
  std::map<std::string, std::vector<double>> values;
  for (const MetricsTable& t : tables) {
    for (const auto& [name, v] : flatten(t)) {
      auto& vs = values[name];
      if (vs.empty()) names.push_back(name);
      vs.push_back(v);
    }
  }
  std::vector<CellStat> out;
  for (const std::string& name : names) {
    const auto& vs = values[name];
    const double n = static_cast<double>(vs.size());
    const double mean = std::accumulate(vs.begin(), vs.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : vs) ss += (v - mean) * (v - mean);
    out.push_back({name, mean, vs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0});
  }
  return out;
}

ProtocolResult run_protocol(std::span<const std::uint64_t> seeds,
                            const std::function<MetricsTable(std::uint64_t)>& pipeline) {
  if (seeds.empty()) throw std::invalid_argument("run_protocol: at least one seed is required");
  ProtocolResult result;
  std::vector<MetricsTable> tables;
  for (std::uint64_t s : seeds) {
    tables.push_back(pipeline(s));
    result.per_seed.emplace_back(s, tables.back());
  }
  result.summary = summarize(tables);
  return result;
}

// Reports -------------------------------------------------------------------

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string percent(double fraction) { return fixed(round_half_up(fraction * 100.0, 1), 1); }

const std::map<std::string_view, std::string_view>& display_names() {
  static const std::map<std::string_view, std::string_view> names = {
      {"occlusion", "Occlusion"},    {"lidar", "LiDAR"},          {"density_inc", "Density Increase"},
      {"density_dec", "Density Decrease"}, {"cutout", "Cutout"},  {"uniform", "Uniform"},
      {"gaussian", "Gaussian"},      {"impulse", "Impulse"},      {"upsampling", "Upsampling"},
      {"background", "Background"},  {"rotation", "Rotation"},    {"shear", "Shear"},
      {"ffd", "FFD"},                {"rbf", "RBF"},              {"inv_rbf", "Inv. RBF"},
  };
  return names;
}

struct Stat {
  double mean = 0.0;
  double std = 0.0;
  bool present = false;
};

Stat stat_of(const std::vector<double>& vs) {
  Stat s;
  if (vs.empty()) return s;
  s.present = true;
  const double n = static_cast<double>(vs.size());
  s.mean = std::accumulate(vs.begin(), vs.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : vs) ss += (v - s.mean) * (v - s.mean);
  s.std = vs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  return s;
}

}  // namespace

double round_half_up(double value, int digits) {
  const double scale = std::pow(10.0, digits);
  // The nudge absorbs binary representation error so 83.75 really rounds up.
  return std::floor(value * scale + 0.5 + 1e-7) / scale;
}

void write_metrics_csv(std::ostream& out, const std::string& model, std::uint64_t seed, const MetricsTable& table,
                       bool header) {
  if (header) out << "model,seed,kind,severity,accuracy\n";
  out << model << ',' << seed << ",clean,0," << fixed(table.clean, 6) << '\n';
  for (CorruptionKind kind : kAllCorruptions) {
    const auto it = table.accuracy.find(kind);
    if (it == table.accuracy.end()) continue;
    for (const auto& [sev, acc] : it->second) {
      out << model << ',' << seed << ',' << corruption_name(kind) << ',' << sev << ',' << fixed(acc, 6) << '\n';
    }
  }
}

void write_aggregate_csv(std::ostream& out, const std::string& model, std::span<const CellStat> stats,
                         bool header) {
  if (header) out << "model,category,mean,std\n";
  for (const CellStat& s : stats) out << model << ',' << s.name << ',' << fixed(s.mean, 6) << ',' << fixed(s.std, 6) << '\n';
}

MetricsRows read_metrics_csv(std::istream& in) {
  MetricsRows rows;
  std::string line;
  int lineno = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (!saw_header) {
      if (cells != std::vector<std::string>{"model", "seed", "kind", "severity", "accuracy"}) {
        throw std::runtime_error("metrics csv: expected header model,seed,kind,severity,accuracy");
      }
      saw_header = true;
      continue;
    }
    if (cells.size() != 5) throw std::runtime_error("metrics csv line " + std::to_string(lineno) + ": need 5 columns");
    try {
      std::size_t used = 0;
      const std::uint64_t seed = std::stoull(cells[1], &used);
      if (used != cells[1].size()) throw std::invalid_argument("seed");
      const int sev = std::stoi(cells[3], &used);
      if (used != cells[3].size()) throw std::invalid_argument("severity");
      const double acc = std::stod(cells[4], &used);
      if (used != cells[4].size()) throw std::invalid_argument("accuracy");
      if (!(acc >= 0.0 && acc <= 1.0)) throw std::invalid_argument("accuracy outside [0, 1]");
      rows.models[cells[0]][seed][cells[2]][sev] = acc;
    } catch (const std::logic_error& e) {
      throw std::runtime_error("metrics csv line " + std::to_string(lineno) + ": bad value (" + e.what() + ")");
    }
  }
  if (!saw_header) throw std::runtime_error("metrics csv: empty input");
  return rows;
}

std::string render_report(const MetricsRows& rows) {
  // model -> name -> per-seed values
  std::map<std::string, std::map<std::string, std::vector<double>>> per_model;
  std::map<std::string, std::vector<std::string>> footnotes;  // category -> missing kinds
  for (const auto& [model, seeds] : rows.models) {
    for (const auto& [seed, kinds] : seeds) {
      std::map<std::string, double> means;
      for (const auto& [kind, sevs] : kinds) {
        if (sevs.empty()) continue;
        double sum = 0.0;
        for (const auto& [sev, acc] : sevs) sum += acc;
        const double mean = sum / static_cast<double>(sevs.size());
        per_model[model][kind].push_back(mean);
        if (kind != "clean") means[kind] = mean;
      }
      for (const CategoryValue& c : aggregate_categories(means)) {
        if (!c.available) continue;
        per_model[model]["cat:" + c.name].push_back(c.mean);
        if (!c.missing.empty()) footnotes[c.name] = c.missing;
      }
    }
  }

  auto cell = [&](const std::string& model, const std::string& key, bool with_std) -> std::string {
    const auto it = per_model[model].find(key);
    const Stat s = it == per_model[model].end() ? Stat{} : stat_of(it->second);
    if (!s.present) return "n/a";
    std::string out = percent(s.mean);
    if (with_std) out += " ± " + percent(s.std);
    return out;
  };
  auto cat_label = [&](const std::string& name) { return footnotes.count(name) ? name + "†" : name; };

  std::vector<std::string> models;
  for (const auto& [m, _] : rows.models) models.push_back(m);

  std::ostringstream os;
  os << "| Category | Corruption |";
  for (const auto& m : models) os << ' ' << m << " |";
  os << "\n|---|---|";
  for (std::size_t i = 0; i < models.size(); ++i) os << "---|";
  os << '\n';
  auto row = [&](const std::string& a, const std::string& b, const std::string& key, bool with_std) {
    os << "| " << a << " | " << b << " |";
    for (const auto& m : models) os << ' ' << cell(m, key, with_std) << " |";
    os << '\n';
  };
  row("Clean", "", "clean", true);
  const std::array<std::pair<std::string_view, std::size_t>, 3> groups = {
      {{"Density", 0}, {"Noise", 5}, {"Transformation", 10}}};
  for (const auto& [group, first] : groups) {
    for (std::size_t i = first; i < first + 5; ++i) {
      const std::string_view kind = kBenchmarkKinds[i];
      row(i == first ? std::string(group) : "", std::string(display_names().at(kind)), std::string(kind), true);
    }
    row("", "Overall (" + cat_label(std::string(group)) + ")", "cat:" + std::string(group), false);
  }
  row(cat_label("Overall"), "", "cat:Overall", false);

  os << "\n| Model | " << cat_label("Hard") << " | " << cat_label("Density*") << " | " << cat_label("Noise*")
     << " | " << cat_label("Transformation") << " | " << cat_label("Overall") << " |\n|---|---|---|---|---|---|\n";
  for (const auto& m : models) {
    os << "| " << m << " |";
    for (const char* c : {"Hard", "Density*", "Noise*", "Transformation", "Overall"}) {
      os << ' ' << cell(m, std::string("cat:") + c, false) << " |";
    }
    os << '\n';
  }

  std::set<std::string> missing;
  for (const auto& [cat, kinds] : footnotes) missing.insert(kinds.begin(), kinds.end());
  if (!missing.empty()) {
    os << "\n† mean over the available kinds only; not evaluated:";
    bool first = true;
    for (const auto& k : missing) {
      os << (first ? " " : ", ") << k;
      first = false;
    }
    os << ".\n";
  }
  return os.str();
}

}  // namespace mapper_gin
