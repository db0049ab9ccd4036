#include "mapper_gin/binary_io.hpp"
#include "mapper_gin/checkpoint.hpp"
#include "mapper_gin/config.hpp"
#include "mapper_gin/pipeline.hpp"
#include "mapper_gin/train_eval.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <regex>
#include <sstream>

namespace fs = std::filesystem;
using namespace mapper_gin;

namespace {

enum Exit { ok = 0, usage = 2, missing = 3, data = 4 };

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string cache_dir = "mapper_gin_cache";
  bool quiet = false;

  Config load() const {
    Config cfg = config_path.empty() ? Config{} : Config::load(config_path);
    for (const auto& o : overrides) cfg.set_override(o);
    return cfg;
  }
  fs::path cache() const { return cache_root(cache_dir); }
};

std::string key_table() {
  std::ostringstream os;
  os << "Config keys (file lines `key = value`, or --set key=value):\n";
  std::size_t width = 0;
  for (const auto& k : config_keys()) width = std::max(width, k.key.size() + k.default_value.size() + 3);
  for (const auto& k : config_keys()) {
    std::string lhs = std::string(k.key) + " = " + std::string(k.default_value);
    lhs.resize(width + 2, ' ');
    os << "  " << lhs << k.help << '\n';
  }
  os << "\nEnvironment: MAPPER_GIN_CACHE_DIR overrides --cache-dir.\n"
        "Exit codes: 0 success, 2 usage, 3 missing prerequisite, 4 data error.";
  return os.str();
}

std::string checkpoint_stem(Variant v, std::uint64_t seed) {
  return std::string(variant_name(v)) + "-seed" + std::to_string(seed);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, text);
}

void note(const Common& c, const std::string& msg) {
  if (!c.quiet) std::cerr << msg << '\n';
}

// build-graphs -----------------------------------------------------------------

int cmd_build_graphs(const Common& c, const std::string& which, bool corrupted) {
  const Config cfg = c.load();
  const fs::path root = c.cache();
  std::vector<Split> splits;
  if (which == "train" || which == "all") splits.push_back(Split::train);
  if (which == "test" || which == "all") splits.push_back(Split::test);
  fs::create_directories(root);
  const MapperParams params = cfg.mapper();
  for (Split split : splits) {
    SplitData d = load_split(cfg, split, root, false, GraphPolicy::build);
    const std::string label(split_name(split));
    GraphCache cache;
    cache.key = cfg.graph_key(label);
    for (const Sample& s : d.samples) cache.graphs.push_back(build_mapper_graph(s.points, params));
    cache_write(graph_cache_path(root, label), cache);
    std::cout << "wrote " << graph_cache_path(root, label).string() << " (" << cache.graphs.size() << " graphs)\n";
  }
  if (corrupted) {
    const RunConfig run = cfg.run();
    SplitData test = load_split(cfg, Split::test, root, false, GraphPolicy::build);
    for (CorruptionKind kind : run.kinds) {
      for (int sev : run.severities) {
        const std::string label = corrupted_label(kind, sev);
        fs::remove(graph_cache_path(root, label));
        corrupted_split(cfg, test.samples, kind, sev, root, true, GraphPolicy::store);
        std::cout << "wrote " << graph_cache_path(root, label).string() << '\n';
      }
    }
  }
  return ok;
}

// corrupt ----------------------------------------------------------------------

int cmd_corrupt(const Common& c, const fs::path& out, int limit) {
  const Config cfg = c.load();
  const RunConfig run = cfg.run();
  SplitData test = load_split(cfg, Split::test, c.cache(), false, GraphPolicy::build);
  if (limit >= 0 && static_cast<std::size_t>(limit) < test.samples.size()) {
    test.samples.resize(static_cast<std::size_t>(limit));
    test.entries.resize(static_cast<std::size_t>(limit));
  }
  const auto seed = static_cast<std::uint64_t>(cfg.get_int("corruption.seed"));
  std::size_t files = 0;
  for (CorruptionKind kind : run.kinds) {
    for (int sev : run.severities) {
      const auto cell = corrupt_samples(test.samples, kind, sev, seed, {}, false);
      const fs::path dir = out / std::string(corruption_name(kind)) / std::to_string(sev);
      fs::create_directories(dir);
      for (std::size_t i = 0; i < cell.size(); ++i) {
        std::ostringstream os;
        write_xyz(os, cell[i].points);
        std::string name = test.entries[i].name;
        std::replace(name.begin(), name.end(), '/', '_');
        write_file_atomic(dir / (name + ".xyz"), os.str());
        ++files;
      }
    }
  }
  std::cout << "wrote " << files << " clouds under " << out.string() << '\n';
  return ok;
}

// train ------------------------------------------------------------------------

int cmd_train(const Common& c, const fs::path& out, std::vector<std::uint64_t> seeds, bool all_seeds) {
  const Config cfg = c.load();
  const RunConfig run = cfg.run();
  const ModelConfig model = cfg.model();
  if (all_seeds) seeds = run.seeds;
  if (seeds.empty()) seeds = {run.seeds.front()};
  const bool graphs = model.variant != Variant::mlp_baseline;
  const GraphPolicy policy = default_policy(cfg);
  const SplitData train_data = load_split(cfg, Split::train, c.cache(), graphs, policy);
  const SplitData test_data = load_split(cfg, Split::test, c.cache(), graphs, policy);
  if (train_data.samples.empty()) throw std::invalid_argument("the training split is empty");
  fs::create_directories(out);

  for (std::uint64_t seed : seeds) {
    std::ostringstream log;
    log << "epoch,train_loss,clean_accuracy\n";
    const TrainResult result = train(run, model, train_data.samples, test_data.samples, seed, [&](const EpochRecord& r) {
      char line[128];
      std::snprintf(line, sizeof line, "%d,%.6f,%.6f", r.epoch, r.train_loss, r.clean_accuracy);
      log << line << '\n';
      note(c, std::string("seed ") + std::to_string(seed) + " epoch " + line);
    });
    const std::size_t best = select_best(result.history);
    Checkpoint<TrainScalar> ckpt;
    ckpt.config_hash = cfg.model_key();
    ckpt.epoch = result.history[best].epoch;
    ckpt.clean_accuracy = result.history[best].clean_accuracy;
    ckpt.model = result.best;
    ckpt.optimizer.options = result.optimizer.options;
    ckpt.optimizer.t = result.optimizer.t;
    ckpt.rng_state = result.rng_state;
    const std::string stem = checkpoint_stem(model.variant, seed);
    checkpoint_write(out / (stem + ".mckpt"), ckpt);
    write_text(out / (stem + ".epochs.csv"), log.str());
    std::printf("%s: best epoch %d, clean accuracy %.4f -> %s\n", stem.c_str(), ckpt.epoch, ckpt.clean_accuracy,
                (out / (stem + ".mckpt")).string().c_str());
  }
  return ok;
}

// eval -------------------------------------------------------------------------

struct Evaluated {
  std::string model;
  std::uint64_t seed = 0;
  Predictor predict;
  bool graphs = true;
  MetricsTable table;
};

int cmd_eval(const Common& c, const fs::path& run_dir, std::vector<std::string> checkpoints, bool stub,
             const fs::path& out_dir) {
  const Config cfg = c.load();
  const RunConfig run = cfg.run();
  std::vector<Evaluated> models;
  if (stub) {
    Evaluated e;
    e.model = "perfect_stub";
    e.graphs = false;
    e.predict = [](std::span<const Sample* const> s) {
      std::vector<int> out;
      for (const Sample* x : s) out.push_back(x->label);
      return out;
    };
    models.push_back(std::move(e));
  } else {
    if (!run_dir.empty()) {
      if (!fs::is_directory(run_dir)) throw MissingPrerequisite("run directory " + run_dir.string() + " not found");
      for (const auto& entry : fs::directory_iterator(run_dir)) {
        if (entry.path().extension() == ".mckpt") checkpoints.push_back(entry.path().string());
      }
    }
    std::sort(checkpoints.begin(), checkpoints.end());
    if (checkpoints.empty()) throw MissingPrerequisite("no checkpoints to evaluate; run `mapper_gin train` first");
    const std::regex pattern(R"(([a-z_]+)-seed(\d+)\.mckpt)");
    for (const auto& path : checkpoints) {
      if (!fs::exists(path)) throw MissingPrerequisite("checkpoint " + path + " not found");
      const auto ckpt = checkpoint_read<TrainScalar>(path);
      if (ckpt.config_hash != cfg.model_key()) {
        throw CacheError(CacheError::Kind::key_mismatch,
                         path + " was trained under a different data/mapper/model config; refusing to evaluate");
      }
      Evaluated e;
      e.model = std::string(variant_name(ckpt.model.config.variant));
      std::smatch m;
      const std::string name = fs::path(path).filename().string();
      if (std::regex_match(name, m, pattern)) e.seed = std::stoull(m[2]);
      e.graphs = ckpt.model.config.variant != Variant::mlp_baseline;
      e.predict = model_predictor(ckpt.model);
      models.push_back(std::move(e));
    }
  }
  const bool graphs = std::any_of(models.begin(), models.end(), [](const Evaluated& e) { return e.graphs; });
  const GraphPolicy policy = default_policy(cfg);
  const SplitData test = load_split(cfg, Split::test, c.cache(), graphs, policy);
  for (auto& e : models) e.table.clean = accuracy(e.predict, test.samples);
  for (CorruptionKind kind : run.kinds) {
    for (int sev : run.severities) {
      const auto cell = corrupted_split(cfg, test.samples, kind, sev, c.cache(), graphs,
                                        policy == GraphPolicy::require ? GraphPolicy::store : policy);
      for (auto& e : models) e.table.accuracy[kind][sev] = accuracy(e.predict, cell);
      note(c, std::string("evaluated ") + std::string(corruption_name(kind)) + " severity " + std::to_string(sev));
    }
  }

  std::ostringstream metrics, aggregate;
  metrics << "model,seed,kind,severity,accuracy\n";
  aggregate << "model,category,mean,std\n";
  std::map<std::string, std::vector<MetricsTable>> by_model;
  for (const auto& e : models) {
    write_metrics_csv(metrics, e.model, e.seed, e.table, false);
    by_model[e.model].push_back(e.table);
  }
  for (const auto& [model, tables] : by_model) write_aggregate_csv(aggregate, model, summarize(tables), false);
  write_text(out_dir / "metrics.csv", metrics.str());
  write_text(out_dir / "aggregate.csv", aggregate.str());
  std::cout << "wrote " << (out_dir / "metrics.csv").string() << " and " << (out_dir / "aggregate.csv").string()
            << '\n';
  return ok;
}

// report -----------------------------------------------------------------------

int cmd_report(const fs::path& metrics, const fs::path& out) {
  std::ifstream in(metrics);
  if (!in) throw MissingPrerequisite("metrics file " + metrics.string() + " not found");
  const std::string md = render_report(read_metrics_csv(in));
  if (out.empty()) {
    std::cout << md;
  } else {
    write_text(out, md);
    std::cout << "wrote " << out.string() << '\n';
  }
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mapper graphs, GIN training and corruption robustness evaluation for point clouds"};
  app.footer(key_table());
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config_path, "Config file")->check(CLI::ExistingFile);
  app.add_option("--set", common.overrides, "Override one config key (key=value); repeatable");
  app.add_option("--cache-dir", common.cache_dir, "Graph cache root")->capture_default_str();
  app.add_flag("--quiet", common.quiet, "No progress lines on stderr");

  auto* build = app.add_subcommand("build-graphs", "Precompute Mapper graph caches");
  std::string split = "all";
  bool corrupted = false;
  build->add_option("--split", split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}))
      ->capture_default_str();
  build->add_flag("--corrupted", corrupted, "Also cache every corrupted test cell");

  auto* corrupt = app.add_subcommand("corrupt", "Write corrupted test clouds as <out>/<kind>/<severity>/<name>.xyz");
  std::string corrupt_out;
  int limit = -1;
  corrupt->add_option("--out", corrupt_out, "Output directory")->required();
  corrupt->add_option("--limit", limit, "Only the first N test clouds");

  auto* trn = app.add_subcommand("train", "Train one model per seed; writes the best checkpoint and an epoch log");
  std::string train_out = "runs";
  std::vector<std::uint64_t> seeds;
  bool all_seeds = false, full = false;
  int epochs = 0;
  trn->add_option("--out", train_out, "Run directory")->capture_default_str();
  trn->add_option("--seed", seeds, "Seed(s); default is the first of run.seeds");
  trn->add_flag("--all-seeds", all_seeds, "Train every seed in run.seeds");
  trn->add_option("--epochs", epochs, "Alias for --set run.epochs=N");
  trn->add_flag("--full", full, "Full schedule: 400 epochs, batch 512");

  auto* ev = app.add_subcommand("eval", "Evaluate checkpoints on clean and corrupted test data");
  std::string run_dir, eval_out;
  std::vector<std::string> checkpoints;
  bool stub = false;
  ev->add_option("--run-dir", run_dir, "Evaluate every checkpoint in this directory");
  ev->add_option("--checkpoint", checkpoints, "Checkpoint file(s)");
  ev->add_flag("--perfect-stub", stub, "Label-revealing predictor instead of checkpoints (test hook)");
  ev->add_option("--out-dir", eval_out, "Where metrics.csv and aggregate.csv go (default: run dir or .)");

  auto* rep = app.add_subcommand("report", "Render a markdown table from a metrics CSV");
  std::string metrics_path, report_out;
  rep->add_option("--metrics", metrics_path, "metrics.csv from eval")->required();
  rep->add_option("--out", report_out, "Markdown output (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  try {
    if (*build) return cmd_build_graphs(common, split, corrupted);
    if (*corrupt) return cmd_corrupt(common, corrupt_out, limit);
    if (*trn) {
      if (full) {
        common.overrides.insert(common.overrides.begin(), {"run.epochs=400", "run.batch_size=512"});
      }
      if (epochs > 0) common.overrides.push_back("run.epochs=" + std::to_string(epochs));
      return cmd_train(common, train_out, seeds, all_seeds);
    }
    if (*ev) {
      if (!stub && run_dir.empty() && checkpoints.empty()) {
        std::cerr << "error: eval needs --run-dir, --checkpoint or --perfect-stub\n";
        return usage;
      }
      const fs::path out = !eval_out.empty() ? fs::path(eval_out) : !run_dir.empty() ? fs::path(run_dir) : fs::path(".");
      return cmd_eval(common, run_dir, checkpoints, stub, out);
    }
    if (*rep) return cmd_report(metrics_path, report_out);
  } catch (const MissingPrerequisite& e) {
    std::cerr << "error: " << e.what() << '\n';
    return missing;
  } catch (const CacheError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == CacheError::Kind::io ? missing : data;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return data;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return usage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return data;
  }
  return usage;
}
