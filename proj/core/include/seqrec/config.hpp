#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqrec/data.hpp"
#include "seqrec/evaluation.hpp"
#include "seqrec/train.hpp"
#include "seqrec/transformer.hpp"

namespace seqrec {

struct DatasetConfig {
  std::filesystem::path path;
  FormatSpec format;
  PreprocessOptions preprocess;
  int n_holdout = 10;
  double val_fraction = 0.5;
  /// Defaults to <output_dir>/dataset.
  std::optional<std::filesystem::path> bundle_dir;
};

enum class ModelKind { kGpt, kMarkov, kPopularity };

std::string_view to_string(ModelKind kind);

/// One axis of a sweep: a strategy parameter (T, topk, S, B or K) and its
/// values.
struct SweepAxis {
  std::string parameter;
  std::vector<double> values;
};

struct SweepSpec {
  std::string name;
  StrategyDescriptor base;
  /// Axes in key order; the grid is their cartesian product.
  std::vector<SweepAxis> axes;

  /// Every grid point as a strategy, first axis varying slowest.
  std::vector<StrategyDescriptor> points() const;
};

struct TimingSpec {
  std::vector<StrategyDescriptor> strategies;
  /// S values applied to rra/ra strategies; others are timed once.
  std::vector<int> num_sequences{1, 5, 10, 30};
  std::size_t max_users = 100;
};

/// Everything a run needs. Defaults reproduce the reference setup: d = 64,
/// two blocks, one head, dropout 0.1, L = 128, batch 64, Adam at 1e-3,
/// N = 10 held-out items, K = 10.
struct RunConfig {
  std::uint64_t seed = 42;
  int workers = 1;
  std::filesystem::path output_dir = "out";
  DatasetConfig dataset;
  ModelKind model_kind = ModelKind::kGpt;
  ModelConfig model;
  TrainConfig train;
  /// Defaults to <output_dir>/model.ckpt.
  std::optional<std::filesystem::path> checkpoint;
  Partition split = Partition::kTest;
  std::optional<std::size_t> max_eval_users;
  std::vector<StrategyDescriptor> strategies;
  std::vector<SweepSpec> sweeps;
  TimingSpec timing;

  std::filesystem::path bundle_dir() const;
  std::filesystem::path checkpoint_path() const;
  /// Seed of a named stage ("split", "train", "sampling").
  std::uint64_t stage_seed(std::string_view stage) const;

  void validate() const;
};

/// Parses a config document. Relative paths are resolved against `base_dir`.
/// Missing keys take their defaults; unknown keys and bad values raise
/// Error(kConfig) naming the field.
RunConfig run_config_from_json(const nlohmann::json& j,
                               const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& config);

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig defaults = {});

}  // namespace seqrec
