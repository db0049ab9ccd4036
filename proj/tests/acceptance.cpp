// Acceptance run: one PASS/FAIL line per criterion, tolerances fixed below.
// Usage: acceptance [--set key=value ...] [criterion ...]   (default: all of 1..9)
// Overrides only reshape the desk-scale run and are meant for smoke testing.
//
// Wall-clock limits for the training criteria were set for a 4-core machine.
// They are measured and printed honestly; a miss on time alone is reported as
// FAIL but does not change the exit status, everything else does.

#include "gradient_suite.hpp"
#include "model_fixtures.hpp"
#include "oracles.hpp"
#include "reference_tables.hpp"

#include "mapper_gin/config.hpp"
#include "mapper_gin/corruptions.hpp"
#include "mapper_gin/mapper.hpp"
#include "mapper_gin/model.hpp"
#include "mapper_gin/pipeline.hpp"
#include "mapper_gin/train_eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace mapper_gin;
namespace fs = std::filesystem;

namespace {

constexpr double kTableTol = 0.05;
constexpr double kGradTol = 1e-4;
constexpr double kRotationTol = 1e-9;
constexpr std::int64_t kParamLo = 450000, kParamHi = 550000;
constexpr double kLearnAccuracy = 0.85;
constexpr double kRobustMargin = 0.05;
constexpr double kTableSeconds = 1.0, kOracleSeconds = 30.0, kGradSeconds = 120.0;
constexpr double kLearnSeconds = 600.0, kRobustSeconds = 1800.0;

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void progress(const std::string& msg) { std::cerr << "[acceptance] " << msg << std::endl; }

struct Verdict {
  int id = 0;
  std::string name;
  bool pass = false;
  // Failed only on a wall-clock limit.
  bool time_only = false;
  std::string detail;
};

std::vector<Verdict> verdicts;
// ctest hides the output of passing tests, so the lines are kept here as well.
std::ofstream report_file;

void say(const std::string& line) {
  std::cout << line << std::endl;
  if (report_file) report_file << line << std::endl;
}

void report(Verdict v) {
  say(std::string(v.pass ? "PASS" : "FAIL") + "  " + std::to_string(v.id) + "  " + v.name + "  " + v.detail);
  verdicts.push_back(std::move(v));
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// 1 -------------------------------------------------------------------------

void table_arithmetic() {
  const auto t0 = Clock::now();
  std::ostringstream d;
  bool ok = true;
  auto categories = [](const reference::ModelColumn& col) {
    std::map<std::string, double> per_kind;
    for (std::size_t k = 0; k < kBenchmarkKinds.size(); ++k) per_kind[std::string(kBenchmarkKinds[k])] = col.per_kind[k];
    std::map<std::string, double> out;
    for (const auto& c : aggregate_categories(per_kind)) out[c.name] = c.mean;
    return out;
  };
  auto expect = [&](const std::map<std::string, double>& got, const char* model, const char* cat, double want) {
    const double v = got.at(cat);
    const bool hit = std::abs(v - want) <= kTableTol + 1e-9;
    ok = ok && hit;
    d << model << ' ' << cat << '=' << fmt("%.3f", v) << (hit ? "" : "(want " + fmt("%.1f", want) + ")") << ' ';
  };
  const auto gin = categories(reference::column("Mapper-GIN"));
  expect(gin, "Mapper-GIN", "Hard", 48.3);
  expect(gin, "Mapper-GIN", "Density*", 82.8);
  expect(gin, "Mapper-GIN", "Noise*", 84.8);
  expect(gin, "Mapper-GIN", "Transformation", 78.7);
  expect(gin, "Mapper-GIN", "Overall", 75.1);
  const auto pp = categories(reference::column("PointNet++"));
  expect(pp, "PointNet++", "Overall", 76.4);
  const double secs = since(t0);
  const bool fast = secs < kTableSeconds;
  d << fmt("(%.3f s)", secs);
  report({1, "table arithmetic", ok && fast, ok && !fast, d.str()});
}

// 2 -------------------------------------------------------------------------

void nerve_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  int mismatches = 0;
  std::size_t edges = 0, nodes = 0;
  for (int t = 0; t < 100; ++t) {
    const Points p = oracle::random_cloud(rng, 300);
    const auto g = build_mapper_graph(p);
    mismatches += g.edges != oracle::nerve(g.nodes);
    edges += g.edges.size();
    nodes += g.num_nodes();
  }
  const double secs = since(t0);
  const bool ok = mismatches == 0;
  std::ostringstream d;
  d << "100 clouds, " << nodes << " nodes, " << edges << " edges, " << mismatches << " mismatches"
    << fmt(" (%.2f s)", secs);
  report({2, "nerve oracle", ok && secs < kOracleSeconds, ok && secs >= kOracleSeconds, d.str()});
}

// 3 -------------------------------------------------------------------------

void dbscan_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> eps_dist(0.02, 0.4);
  std::uniform_int_distribution<int> pts_dist(1, 10);
  int partition_bad = 0, core_bad = 0, clusters = 0;
  for (int t = 0; t < 200; ++t) {
    const Points p = oracle::random_cloud(rng, 200);
    const double eps = eps_dist(rng);
    const int m = pts_dist(rng);
    const auto got = dbscan(p, eps, m);
    const auto want = oracle::dbscan(p, eps, m);
    partition_bad += got != want;
    // Core points are always clustered, and every cluster holds a core point.
    const auto core = oracle::core_mask(p, eps, m);
    std::set<int> seeded;
    bool core_ok = true;
    for (std::size_t i = 0; i < core.size(); ++i) {
      if (core[i]) {
        core_ok = core_ok && got[i] != kNoise;
        seeded.insert(got[i]);
      }
    }
    for (int label : got) core_ok = core_ok && (label == kNoise || seeded.count(label));
    core_bad += !core_ok;
    clusters += want.empty() ? 0 : *std::max_element(want.begin(), want.end()) + 1;
  }
  const double secs = since(t0);
  const bool ok = partition_bad == 0 && core_bad == 0;
  std::ostringstream d;
  d << "200 instances, " << clusters << " clusters, " << partition_bad << " partition / " << core_bad
    << " core mismatches" << fmt(" (%.2f s)", secs);
  report({3, "dbscan oracle", ok && secs < kOracleSeconds, ok && secs >= kOracleSeconds, d.str()});
}

// 4 -------------------------------------------------------------------------

void gradient_suite() {
  const auto t0 = Clock::now();
  constexpr int seeds = 10;
  auto lines = gradsuite::run_all(seeds);
  bool ok = true;
  std::ostringstream d;
  for (const auto& l : lines) {
    const bool hit = l.worst.max_rel < kGradTol && l.worst.checked > 0 && l.seeds >= 10;
    ok = ok && hit;
    d << l.name << '=' << fmt("%.1e", l.worst.max_rel);
    if (l.worst.skipped) d << '[' << l.worst.checked << " checked, " << l.worst.skipped << " at kinks]";
    d << (hit ? "" : "!") << ' ';
  }
  const double secs = since(t0);
  d << fmt("(%.1f s)", secs);
  report({4, "gradient suite", ok && secs < kGradSeconds, ok && secs >= kGradSeconds, d.str()});
}

// 5 -------------------------------------------------------------------------

void invariance_suite() {
  bool ok = true;
  std::ostringstream d;
  for (auto v : {Variant::mapper_gin, Variant::mapper_gin_base, Variant::mlp_baseline}) {
    for (std::uint64_t seed : {0u, 1u, 2u}) {
      const auto r = fixtures::invariance(v, seed, 3);
      const bool hit = r.point_permutation && r.node_relabeling && r.edge_reordering && r.rebuilt_graph &&
                       r.duplicate_rows && r.informative;
      if (!hit) d << variant_name(v) << " seed " << seed << " not invariant; ";
      ok = ok && hit;
    }
  }
  d << "logits exact over 3 variants x 3 seeds; ";

  // Node size and degree multiset of the Mapper graph under input permutation.
  std::mt19937_64 rng(55);
  int multiset_bad = 0;
  auto signature = [](const MapperGraph& g) {
    std::vector<std::size_t> deg(g.num_nodes(), 0);
    for (const auto& [u, v] : g.edges) ++deg[u], ++deg[v];
    std::vector<std::pair<std::size_t, std::size_t>> s;
    for (std::size_t n = 0; n < g.num_nodes(); ++n) s.emplace_back(g.nodes[n].size(), deg[n]);
    std::sort(s.begin(), s.end());
    return s;
  };
  for (int t = 0; t < 30; ++t) {
    const Points p = t % 3 == 0 ? sample_synthetic(static_cast<Shape>(t % kShapeCount), 1024, t).points
                                : oracle::random_cloud(rng, 300);
    std::vector<Index> perm(static_cast<std::size_t>(p.rows()));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    Points q(p.rows(), 3);
    for (Index i = 0; i < p.rows(); ++i) q.row(i) = p.row(perm[static_cast<std::size_t>(i)]);
    multiset_bad += signature(build_mapper_graph(p)) != signature(build_mapper_graph(q));
  }
  ok = ok && multiset_bad == 0;
  d << multiset_bad << "/30 graph multiset mismatches; ";

  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto pc = sample_synthetic(static_cast<Shape>(seed % kShapeCount), 256, seed);
    for (int s = 1; s <= 5; ++s) {
      const auto out =
          apply_corruption(pc, {CorruptionKind::rotation, s, corruption_seed(seed, CorruptionKind::rotation, s)});
      for (Index i = 0; i < pc.size(); ++i) {
        for (Index j = i + 1; j < pc.size(); ++j) {
          worst = std::max(worst, std::abs((pc.points.row(i) - pc.points.row(j)).norm() -
                                           (out.points.row(i) - out.points.row(j)).norm()));
        }
      }
    }
  }
  ok = ok && worst <= kRotationTol;
  d << "rotation distance drift " << fmt("%.1e", worst);
  report({5, "invariance suite", ok, false, d.str()});
}

// 6 -------------------------------------------------------------------------

void parameter_budget() {
  ModelConfig gin;
  gin.classes = 40;
  const auto n = param_count(gin);
  ModelConfig mlp = gin;
  mlp.variant = Variant::mlp_baseline;
  const std::int64_t c = mlp.classes;
  // conv 3->64, conv 64->256, BN after each, head layernorm, classifier 256->C
  const std::int64_t closed = (3 * 64 + 64) + (64 * 256 + 256) + 2 * (64 + 256) + 2 * 256 + (256 * c + c);
  const bool ok = n >= kParamLo && n <= kParamHi && param_count(mlp) == closed;
  std::ostringstream d;
  d << "Mapper-GIN " << n << ", MLP " << param_count(mlp) << " (closed form " << closed << ")";
  report({6, "parameter budget", ok, false, d.str()});
}

// 7, 8, 9 -------------------------------------------------------------------

struct Data {
  std::vector<Sample> train, test;
  double build_seconds = 0.0;
};

Data load_desk(const Config& cfg, const fs::path& scratch) {
  const auto t0 = Clock::now();
  Data d;
  d.train = load_split(cfg, Split::train, scratch, true, GraphPolicy::build).samples;
  d.test = load_split(cfg, Split::test, scratch, true, GraphPolicy::build).samples;
  d.build_seconds = since(t0);
  progress("desk data: " + std::to_string(d.train.size()) + " train / " + std::to_string(d.test.size()) +
           " test clouds with graphs in " + fmt("%.0f s", d.build_seconds));
  return d;
}

struct Trained {
  TrainResult result;
  double seconds = 0.0;
};

Trained fit(const Config& cfg, Variant variant, const Data& data, std::uint64_t seed) {
  ModelConfig mc = cfg.model();
  mc.variant = variant;
  const auto t0 = Clock::now();
  Trained t;
  t.result = train(cfg.run(), mc, data.train, data.test, seed, [&](const EpochRecord& e) {
    if (e.epoch % 10 == 0) {
      progress(std::string(variant_name(variant)) + " seed " + std::to_string(seed) + " epoch " +
               std::to_string(e.epoch) + " loss " + fmt("%.4f", e.train_loss) + " clean " +
               fmt("%.4f", e.clean_accuracy));
    }
  });
  t.seconds = since(t0);
  const auto& best = t.result.history[static_cast<std::size_t>(t.result.best_epoch)];
  progress(std::string(variant_name(variant)) + " seed " + std::to_string(seed) + " best clean " +
           fmt("%.4f", best.clean_accuracy) + " in " + fmt("%.0f s", t.seconds));
  return t;
}

double best_clean(const Trained& t) {
  return t.result.history[static_cast<std::size_t>(t.result.best_epoch)].clean_accuracy;
}

/// Evaluates several models cell by cell so each corrupted set is built once.
std::vector<MetricsTable> evaluate_all(const Config& cfg, const std::vector<const TrainModel*>& models,
                                       const Data& data, const std::vector<CorruptionKind>& kinds,
                                       const std::vector<int>& severities, const fs::path& scratch) {
  std::vector<Predictor> preds;
  for (const auto* m : models) preds.push_back(model_predictor(*m, 64));
  std::vector<MetricsTable> out(models.size());
  for (std::size_t i = 0; i < models.size(); ++i) out[i].clean = accuracy(preds[i], data.test, 64);
  for (auto kind : kinds) {
    for (int s : severities) {
      const auto cell = corrupted_split(cfg, data.test, kind, s, scratch, true, GraphPolicy::build);
      for (std::size_t i = 0; i < models.size(); ++i) out[i].accuracy[kind][s] = accuracy(preds[i], cell, 64);
    }
  }
  return out;
}

struct DeskRun {
  Trained gin, mlp;
  std::string csv;
  double impulse_drop_gin = 0.0, impulse_drop_mlp = 0.0;
  double eval_seconds = 0.0;
};

/// Seed 0 for both models, evaluated on every corruption cell.
DeskRun full_desk_run(const Config& cfg, const Data& data, const fs::path& scratch) {
  DeskRun r;
  r.gin = fit(cfg, Variant::mapper_gin, data, 0);
  r.mlp = fit(cfg, Variant::mlp_baseline, data, 0);
  const auto t0 = Clock::now();
  const auto run = cfg.run();
  const auto tables =
      evaluate_all(cfg, {&r.gin.result.best, &r.mlp.result.best}, data, run.kinds, run.severities, scratch);
  r.eval_seconds = since(t0);
  progress("full-suite evaluation in " + fmt("%.0f s", r.eval_seconds));
  std::ostringstream csv;
  write_metrics_csv(csv, "mapper_gin", 0, tables[0]);
  write_metrics_csv(csv, "mlp_baseline", 0, tables[1], false);
  r.csv = csv.str();
  r.impulse_drop_gin = tables[0].clean - tables[0].accuracy.at(CorruptionKind::impulse).at(3);
  r.impulse_drop_mlp = tables[1].clean - tables[1].accuracy.at(CorruptionKind::impulse).at(3);
  return r;
}

void desk_scale(const Config& cfg, bool want7, bool want8, bool want9) {
  const fs::path scratch = fs::temp_directory_path() / "mapper_gin_acceptance";
  fs::remove_all(scratch);
  fs::create_directories(scratch);
  const unsigned cores = std::max(1u, std::thread::hardware_concurrency());
  const std::string host = " [host has " + std::to_string(cores) + " core" + (cores == 1 ? "" : "s") +
                           "; limits assume 4]";

  Data data = load_desk(cfg, scratch);
  DeskRun first = full_desk_run(cfg, data, scratch);

  if (want7) {
    const double gin_acc = best_clean(first.gin), mlp_acc = best_clean(first.mlp);
    const double gin_time = data.build_seconds + first.gin.seconds;
    const double mlp_time = first.mlp.seconds;
    const bool acc_ok = gin_acc >= kLearnAccuracy && mlp_acc >= kLearnAccuracy;
    const bool time_ok = gin_time < kLearnSeconds && mlp_time < kLearnSeconds;
    std::ostringstream d;
    d << "Mapper-GIN clean " << fmt("%.4f", gin_acc) << " in " << fmt("%.0f s", gin_time) << " (graphs "
      << fmt("%.0f s", data.build_seconds) << "), MLP clean " << fmt("%.4f", mlp_acc) << " in "
      << fmt("%.0f s", mlp_time) << "; accuracy " << (acc_ok ? "ok" : "below 0.85") << ", time "
      << (time_ok ? "ok" : "over 600 s") << host;
    report({7, "desk-scale learning", acc_ok && time_ok, acc_ok && !time_ok, d.str()});
  }

  if (want8) {
    const auto t0 = Clock::now();
    double train_seconds = first.gin.seconds + first.mlp.seconds;
    std::vector<double> gin_drops{first.impulse_drop_gin}, mlp_drops{first.impulse_drop_mlp};
    for (std::uint64_t seed : {1u, 2u}) {
      const auto gin = fit(cfg, Variant::mapper_gin, data, seed);
      const auto mlp = fit(cfg, Variant::mlp_baseline, data, seed);
      train_seconds += gin.seconds + mlp.seconds;
      const auto tables =
          evaluate_all(cfg, {&gin.result.best, &mlp.result.best}, data, {CorruptionKind::impulse}, {3}, scratch);
      gin_drops.push_back(tables[0].clean - tables[0].accuracy.at(CorruptionKind::impulse).at(3));
      mlp_drops.push_back(tables[1].clean - tables[1].accuracy.at(CorruptionKind::impulse).at(3));
    }
    const double extra = since(t0) - (train_seconds - first.gin.seconds - first.mlp.seconds);
    const double total = data.build_seconds + train_seconds + extra;
    auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
    const double g = mean(gin_drops), m = mean(mlp_drops);
    const bool robust = g <= m + kRobustMargin;
    const bool time_ok = total < kRobustSeconds;
    std::ostringstream d;
    d << "impulse s3 mean drop Mapper-GIN " << fmt("%.4f", g) << " vs MLP " << fmt("%.4f", m) << " (seeds 0,1,2: ";
    for (std::size_t i = 0; i < gin_drops.size(); ++i) {
      d << fmt("%.3f", gin_drops[i]) << '/' << fmt("%.3f", mlp_drops[i]) << (i + 1 < gin_drops.size() ? " " : "");
    }
    d << "); margin " << (robust ? "ok" : "exceeded") << ", " << fmt("%.0f s", total) << " total, time "
      << (time_ok ? "ok" : "over 1800 s") << host;
    report({8, "robustness smoke", robust && time_ok, robust && !time_ok, d.str()});
  }

  if (want9) {
    progress("determinism: rebuilding data and retraining seed 0");
    Data again = load_desk(cfg, scratch);
    const DeskRun second = full_desk_run(cfg, again, scratch);
    const bool same = first.csv == second.csv && !first.csv.empty();
    std::ostringstream d;
    d << "config " << std::hex << cfg.hash() << std::dec << ", metrics CSV " << first.csv.size() << " bytes, "
      << (same ? "identical" : "differs");
    std::ofstream(scratch / "metrics-run1.csv") << first.csv;
    std::ofstream(scratch / "metrics-run2.csv") << second.csv;
    report({9, "determinism", same, false, d.str()});
  }
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  Config cfg;  // the defaults are the desk-scale setup
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--set" && i + 1 < argc) {
      cfg.set_override(argv[++i]);
    } else {
      wanted.insert(std::atoi(arg.c_str()));
    }
  }
  if (wanted.empty()) wanted = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  auto want = [&](int id) { return wanted.count(id) > 0; };
  report_file.open("acceptance_report.txt");

  try {
    if (want(1)) table_arithmetic();
    if (want(2)) nerve_oracle();
    if (want(3)) dbscan_oracle();
    if (want(4)) gradient_suite();
    if (want(5)) invariance_suite();
    if (want(6)) parameter_budget();
    if (want(7) || want(8) || want(9)) desk_scale(cfg, want(7), want(8), want(9));
  } catch (const std::exception& e) {
    say(std::string("FAIL  acceptance aborted: ") + e.what());
    return 1;
  }

  int hard = 0, timing = 0;
  for (const auto& v : verdicts) {
    if (!v.pass) (v.time_only ? timing : hard) += 1;
  }
  say(std::to_string(verdicts.size() - hard - timing) + " passed, " + std::to_string(hard) + " failed, " +
      std::to_string(timing) + " failed on wall-clock limit only");
  return hard == 0 ? 0 : 1;
}
