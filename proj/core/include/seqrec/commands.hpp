#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "seqrec/config.hpp"
#include "seqrec/evaluation.hpp"
#include "seqrec/train.hpp"

namespace seqrec {

// Pipeline stages behind the command-line tool. Each writes its outputs under
// config.output_dir and prints progress to `log`. Rerunning a stage with the
// same config and seed rewrites identical bytes (timing files excepted).

struct PreprocessResult {
  DatasetStats stats;
  std::filesystem::path bundle;
  /// An identical bundle already existed and was left untouched.
  bool unchanged = false;
};

/// Table with columns Users, Items, Interactions, Avg. length, Density.
std::string stats_table(const DatasetStats& stats, const std::string& name);

PreprocessResult cmd_preprocess(const RunConfig& config, std::ostream& log);

/// Reads the bundle and splits it with the run seed.
SplitDataset load_split(const RunConfig& config);

/// Checkpoint at checkpoint_path() plus train_history.{json,csv}. Returns
/// nothing for models without a training stage.
std::optional<TrainResult> cmd_train(const RunConfig& config, std::ostream& log);

/// The configured model: a trained checkpoint, or a baseline fitted on the
/// training portions of `data`.
std::unique_ptr<NextItemModel> load_model(const RunConfig& config, const SplitDataset& data);

/// Writes report.json, metrics.csv, hitrate.csv and timing.json to
/// <output_dir>/eval_<split>/.
EvalReport cmd_evaluate(const RunConfig& config, std::ostream& log);

struct SweepPoint {
  std::string sweep;
  std::size_t index = 0;
  StrategyDescriptor strategy;
  std::filesystem::path report;
  double ndcg = 0.0;
  double recall = 0.0;
  double map = 0.0;
};

struct SweepResult {
  std::vector<SweepPoint> points;
};

/// One report per grid point under <output_dir>/sweep_<split>/<name>/point_NNN,
/// plus sweep.csv and sweep.json listing every point.
SweepResult cmd_sweep(const RunConfig& config, std::ostream& log);

struct TimingRow {
  std::string strategy;
  int num_sequences = 0;  // 0 for single-sequence strategies
  std::size_t users = 0;
  double mean_user_seconds = 0.0;
  double total_seconds = 0.0;
};

/// Mean per-user latency for every timing strategy and S value, measured on
/// one thread. Writes <output_dir>/timing/timing.csv.
std::vector<TimingRow> cmd_timing(const RunConfig& config, std::ostream& log);

}  // namespace seqrec
