#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqrec/data.hpp"
#include "seqrec/decode.hpp"
#include "seqrec/metrics.hpp"
#include "seqrec/model.hpp"

namespace seqrec {

enum class StrategyKind { kTopkPrediction, kGreedy, kBeam, kTemperature, kRra, kRa };

std::string_view to_string(StrategyKind kind);
StrategyKind strategy_kind_from_string(std::string_view name);

/// One recommendation strategy with its parameters, as written in run
/// configs: {"name": "rra", "K": 10, "S": 30, "T": 0.5, "topk": 10, ...}.
struct StrategyDescriptor {
  StrategyKind kind = StrategyKind::kTopkPrediction;
  int k = 10;
  int beam_width = 1;
  double temperature = 1.0;
  /// Sampling top-k for temperature and rra; 0 disables.
  int topk = 10;
  int num_sequences = 30;
  std::optional<std::uint64_t> seed;
  GenerationConstraints constraints;
  /// ra only: accumulate P_T (true) or P_{T=1} (false).
  bool ra_temperature_scores = true;
  /// Display name; derived from the parameters when empty.
  std::string label;

  std::string name() const;
  bool stochastic() const;
  /// Throws Error(kConfig) naming the bad field.
  void validate() const;
};

nlohmann::json to_json(const StrategyDescriptor& d);
/// Unknown keys are rejected with Error(kConfig).
StrategyDescriptor strategy_from_json(const nlohmann::json& j);

/// Applies `d` to one user. `seed` drives all sampling for that user.
RecommendationList recommend(const NextItemModel& model, std::span<const ItemId> history,
                             const StrategyDescriptor& d, std::uint64_t seed,
                             int inner_workers = 1);

struct StrategyReport {
  StrategyDescriptor descriptor;
  double ndcg = 0.0;
  double recall = 0.0;
  double map = 0.0;
  std::vector<double> hitrate_by_position;
  std::vector<double> user_ndcg;
  std::vector<double> user_recall;
  std::vector<double> user_map;
  std::int64_t empty_ground_truth_users = 0;
  std::int64_t truncated_lists = 0;

  struct Significance {
    TTestResult ndcg;
    TTestResult recall;
    TTestResult map;
  };
  /// Paired t-test against the report's baseline (first) strategy.
  std::optional<Significance> vs_baseline;

  // Wall-clock; kept out of report.json so reports stay reproducible.
  double total_seconds = 0.0;
  double mean_user_seconds = 0.0;
};

struct EvalReport {
  std::string split;
  int k = 10;
  int n_holdout = 10;
  std::vector<std::int32_t> users;
  std::vector<StrategyReport> strategies;

  const StrategyReport& find(std::string_view name) const;
};

struct EvaluationOptions {
  std::uint64_t seed = 0;
  int workers = 1;
  /// Evaluate only the first N users of the partition.
  std::optional<std::size_t> max_users;
  double significance_level = 0.05;
};

/// Runs every strategy on every user of `partition`. Per-user work runs on
/// `workers` threads; results are reduced in user order, so reports do not
/// depend on the worker count.
EvalReport evaluate(const NextItemModel& model, const SplitDataset& data,
                    Partition partition, std::span<const StrategyDescriptor> strategies,
                    const EvaluationOptions& options);

/// Machine-readable report (no timings). Parsing and re-serializing yields the
/// same bytes.
nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
std::string report_dump(const EvalReport& report);

/// CSV: strategy,metric,value (one row per strategy x metric).
std::string metrics_table(const EvalReport& report);
/// CSV: strategy,position,hitrate.
std::string hitrate_table(const EvalReport& report);
nlohmann::json timing_json(const EvalReport& report);

}  // namespace seqrec
