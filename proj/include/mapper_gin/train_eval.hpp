#pragma once

#include "mapper_gin/corruptions.hpp"
#include "mapper_gin/mapper.hpp"
#include "mapper_gin/model.hpp"
#include "mapper_gin/nn.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mapper_gin {

/// Models are trained in single precision.
using TrainScalar = float;
using TrainModel = ModelState<TrainScalar>;

struct RunConfig {
  int epochs = 400;
  int batch_size = 512;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  int lr_step = 10;
  double lr_gamma = 0.9;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<CorruptionKind> kinds{kAllCorruptions.begin(), kAllCorruptions.end()};
  std::vector<int> severities{1, 2, 3, 4, 5};
  std::uint64_t corruption_seed = 0;

  void validate() const;
};

/// Builds samples (points + Mapper graph) for a list of clouds.
std::vector<Sample> make_samples(std::span<const PointCloud> clouds, const MapperParams& params, bool need_graphs);

// Training ------------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double clean_accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  TrainModel best;
  TrainModel last;
  nn::AdamState<TrainScalar> optimizer;
  std::int64_t optimizer_steps = 0;
  std::string rng_state;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Seeded shuffle, minibatch Adam with StepLR, clean test accuracy after every
/// epoch; keeps the model of the best epoch. No augmentation.
TrainResult train(const RunConfig& run, const ModelConfig& model_config, std::span<const Sample> train_set,
                  std::span<const Sample> test_set, std::uint64_t seed, const EpochCallback& on_epoch = {});

/// Index of the highest clean accuracy; ties go to the earliest epoch.
std::size_t select_best(std::span<const EpochRecord> history);

// Evaluation ----------------------------------------------------------------

/// Predicted class per sample.
using Predictor = std::function<std::vector<int>(std::span<const Sample* const>)>;

Predictor model_predictor(const TrainModel& model, int batch_size = 64);

double accuracy(const Predictor& predict, std::span<const Sample> samples, int batch_size = 64);

struct MetricsTable {
  double clean = 0.0;
  std::map<CorruptionKind, std::map<int, double>> accuracy;

  /// Mean over the stored severities of one kind.
  double kind_mean(CorruptionKind kind) const;
  /// Keyed by corruption name.
  std::map<std::string, double> per_kind_means() const;
};

/// Corrupted copies of `clean` for one cell, graphs rebuilt from the corrupted points.
std::vector<Sample> corrupt_samples(std::span<const Sample> clean, CorruptionKind kind, int severity,
                                    std::uint64_t seed, const MapperParams& params, bool need_graphs);

using CellSource = std::function<std::vector<Sample>(CorruptionKind, int)>;

struct EvalOptions {
  std::vector<CorruptionKind> kinds{kAllCorruptions.begin(), kAllCorruptions.end()};
  std::vector<int> severities{1, 2, 3, 4, 5};
  std::uint64_t seed = 0;
  MapperParams mapper;
  bool need_graphs = true;
  int batch_size = 64;
  /// Overrides corrupt_samples, e.g. to read cached graphs.
  CellSource source;
};

MetricsTable evaluate(const Predictor& predict, std::span<const Sample> clean, const EvalOptions& options);

// Aggregation ---------------------------------------------------------------

/// All fifteen benchmark kinds in table order, including the two not generated here.
inline constexpr std::array<std::string_view, 15> kBenchmarkKinds = {
    "occlusion", "lidar",      "density_inc", "density_dec", "cutout",
    "uniform",   "gaussian",   "impulse",     "upsampling",  "background",
    "rotation",  "shear",      "ffd",         "rbf",         "inv_rbf"};

struct CategoryValue {
  std::string name;
  double mean = 0.0;
  bool available = false;
  /// Member kinds that had no value.
  std::vector<std::string> missing;
};

/// Density, Noise, Transformation, Hard, Density*, Noise*, Overall (in that order).
std::vector<CategoryValue> aggregate_categories(const std::map<std::string, double>& per_kind);

struct CellStat {
  std::string name;
  double mean = 0.0;
  double std = 0.0;
};

struct ProtocolResult {
  std::vector<std::pair<std::uint64_t, MetricsTable>> per_seed;
  /// clean, "<kind>@<severity>", "<kind>", and category rows.
  std::vector<CellStat> summary;
};

/// Flattened view of one table: clean, per cell, per kind mean, categories.
std::vector<std::pair<std::string, double>> flatten(const MetricsTable& table);

/// Mean and sample standard deviation per cell.
std::vector<CellStat> summarize(std::span<const MetricsTable> tables);

/// Runs one full train/select/evaluate pipeline per seed.
ProtocolResult run_protocol(std::span<const std::uint64_t> seeds,
                            const std::function<MetricsTable(std::uint64_t)>& pipeline);

// Reports -------------------------------------------------------------------

/// model,seed,kind,severity,accuracy (clean rows use kind "clean", severity 0).
void write_metrics_csv(std::ostream& out, const std::string& model, std::uint64_t seed, const MetricsTable& table,
                       bool header = true);
/// model,category,mean,std
void write_aggregate_csv(std::ostream& out, const std::string& model, std::span<const CellStat> stats,
                         bool header = true);

/// Parsed metrics CSV: model -> seed -> kind name -> severity -> accuracy.
/// Kinds are kept by name so benchmark kinds outside the generator catalog survive.
struct MetricsRows {
  std::map<std::string, std::map<std::uint64_t, std::map<std::string, std::map<int, double>>>> models;
};

/// Throws std::runtime_error on malformed rows.
MetricsRows read_metrics_csv(std::istream& in);

/// Per-corruption grid (kinds x models) followed by the category summary.
std::string render_report(const MetricsRows& rows);

/// Half-up rounding to `digits` decimals.
double round_half_up(double value, int digits);

}  // namespace mapper_gin
