#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "seqrec/model.hpp"

namespace seqrec {

/// Items that may not be produced. History items are masked for every
/// strategy by default; repeats inside one generated sequence are masked for
/// every strategy except relevance aggregation.
struct GenerationConstraints {
  bool forbid_history = true;
  bool forbid_repeats = true;
};

struct GeneratedSequence {
  std::vector<ItemId> items;
  /// Per-step distribution, filled only when recording was requested.
  std::vector<ScoreVector> step_scores;
  /// log P(item_k | prefix) at T = 1 under the masked distribution.
  std::vector<double> step_log_probs;
  /// Fewer than K items could be produced (catalog exhausted by masking).
  bool truncated = false;
  /// Beam width exceeded the number of expandable candidates and was capped.
  bool beam_capped = false;
};

struct RankedItem {
  ItemId item;
  double score;
  bool operator==(const RankedItem&) const = default;
};

/// Ranked items, scores non-increasing, ties broken by ascending item id.
struct RecommendationList {
  std::vector<RankedItem> items;
  /// Fewer than K unmasked items were available.
  bool truncated = false;

  std::vector<ItemId> ids() const;
};

/// P_T(i) = exp(l_i / T) / sum_j exp(l_j / T) over unmasked entries, computed
/// with max subtraction. Masked (-inf) entries get probability 0. Throws
/// Error(kParameter) for T <= 0.
ScoreVector apply_temperature(const ScoreVector& logits, double temperature);

/// Keeps the k most probable entries (ties at the boundary go to the lower
/// item id) and renormalizes them. k at or above the number of positive
/// entries returns the input unchanged.
ScoreVector topk_filter(const ScoreVector& probs, int k);

/// Top-`k` entries of `scores` (index 0 ignored) among items not masked,
/// sorted by score descending then id ascending. Entries equal to -inf are
/// treated as masked.
RecommendationList rank_scores(std::span<const double> scores, int k,
                               std::span<const std::uint8_t> blocked = {});

/// Reads a generated sequence as a ranked list: position j gets score 1/j.
RecommendationList positional_list(const GeneratedSequence& sequence);

/// One forward pass; the K highest unmasked logits.
RecommendationList topk_prediction(const NextItemModel& model,
                                   std::span<const ItemId> history, int k,
                                   const GenerationConstraints& constraints = {});

GeneratedSequence greedy_decode(const NextItemModel& model, std::span<const ItemId> history,
                                int k, const GenerationConstraints& constraints = {});

/// Beam search over sum of log-probabilities (T = 1, no top-k filter, no
/// length normalization). Candidates with equal score are ordered by their
/// item sequences, lexicographically ascending. Returns the best beam.
GeneratedSequence beam_search(const NextItemModel& model, std::span<const ItemId> history,
                              int k, int beam_width,
                              const GenerationConstraints& constraints = {});

/// Temperatures at or below this value decode by argmax instead of sampling.
inline constexpr double kArgmaxTemperature = 1e-4;

struct SamplingOptions {
  double temperature = 1.0;
  /// 0 disables top-k filtering.
  int topk = 0;
  std::uint64_t seed = 0;
  /// Store each step's sampling distribution in GeneratedSequence::step_scores.
  bool record_scores = false;
  /// When set, recorded distributions use this temperature instead of the
  /// sampling temperature (and no top-k filter).
  std::optional<double> record_temperature;
};

/// Per step: mask, apply_temperature, optional topk_filter, draw one item.
/// Throws Error(kModel) when every item is masked.
GeneratedSequence temperature_sample(const NextItemModel& model,
                                     std::span<const ItemId> history, int k,
                                     const SamplingOptions& options,
                                     const GenerationConstraints& constraints = {});

/// Same, continuing from an already encoded history. `blocked` is the mask
/// implied by the history under `constraints` (see history_mask()).
GeneratedSequence temperature_sample(const DecodeSession& session,
                                     std::span<const std::uint8_t> blocked, int k,
                                     const SamplingOptions& options,
                                     const GenerationConstraints& constraints);

/// Mask of size item_count + 1 with history items set (if forbidden) and the
/// padding slot always set.
std::vector<std::uint8_t> history_mask(std::int32_t item_count,
                                       std::span<const ItemId> history,
                                       const GenerationConstraints& constraints);

}  // namespace seqrec
