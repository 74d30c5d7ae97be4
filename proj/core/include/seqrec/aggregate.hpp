#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "seqrec/decode.hpp"
#include "seqrec/model.hpp"

namespace seqrec {

/// Multi-sequence strategies. Both sample `num_sequences` continuations of
/// length `horizon` with temperature sampling and sum per-sequence relevance:
///  - kReciprocalRank: item generated at position k scores 1/k; sampling uses
///    the top-k filter and forbids repeats.
///  - kRelevance: every step contributes its whole temperature-adjusted
///    next-item distribution; no top-k filter, repeats allowed.
enum class AggregationStrategy { kReciprocalRank, kRelevance };

std::string_view to_string(AggregationStrategy strategy);

struct AggregationConfig {
  AggregationStrategy strategy = AggregationStrategy::kReciprocalRank;
  int num_sequences = 30;
  int horizon = 10;
  double temperature = 1.0;
  /// Sampling top-k for reciprocal rank aggregation; ignored by relevance
  /// aggregation. 0 disables the filter.
  int topk = 10;
  std::uint64_t seed = 0;
  /// Relevance aggregation accumulates P_T (true) or P_{T=1} (false).
  bool relevance_at_sampling_temperature = true;

  void validate() const;
};

/// Dense relevance vector r of size item_count + 1 (slot 0 unused).
using RelevanceAccumulator = std::vector<double>;

/// r^s for one generated sequence: 1/k at the item generated at position k.
/// Throws Error(kContract) if the sequence repeats an item.
RelevanceAccumulator rra_single(const GeneratedSequence& sequence, std::int32_t item_count);

/// r^s as the elementwise sum of the per-step probability vectors. Throws
/// Error(kContract) if any vector is not a probability vector.
RelevanceAccumulator ra_single(std::span<const ScoreVector> steps, std::int32_t item_count);

/// Sum of accumulators reduced pairwise in a fixed tree order, so the result
/// does not depend on how the inputs were produced.
RelevanceAccumulator tree_sum(std::vector<RelevanceAccumulator> parts);

/// r = sum_s r^s over all sampled continuations. Sequence s uses the seed
/// derive_seed(config.seed, "sequence", s); `workers` threads generate
/// sequences in parallel without changing the result.
RelevanceAccumulator aggregate_scores(const NextItemModel& model,
                                      std::span<const ItemId> history,
                                      const AggregationConfig& config, int workers = 1);

/// Top-`horizon` items of aggregate_scores() with history items excluded.
RecommendationList aggregate_recommend(const NextItemModel& model,
                                       std::span<const ItemId> history,
                                       const AggregationConfig& config, int workers = 1);

}  // namespace seqrec
