#include "seqrec/aggregate.hpp"

#include <cmath>
#include <string>

#include "seqrec/error.hpp"
#include "seqrec/parallel.hpp"
#include "seqrec/rng.hpp"

namespace seqrec {

std::string_view to_string(AggregationStrategy strategy) {
  return strategy == AggregationStrategy::kReciprocalRank ? "rra" : "ra";
}

void AggregationConfig::validate() const {
  if (num_sequences < 1) throw Error(ErrorCategory::kParameter, "S must be >= 1");
  if (horizon < 1) throw Error(ErrorCategory::kParameter, "K must be >= 1");
  if (!(temperature > 0.0)) throw Error(ErrorCategory::kParameter, "T must be positive");
  if (topk < 0) throw Error(ErrorCategory::kParameter, "top-k must be >= 0");
}

RelevanceAccumulator rra_single(const GeneratedSequence& sequence, std::int32_t item_count) {
  RelevanceAccumulator r(static_cast<std::size_t>(item_count) + 1, 0.0);
  for (std::size_t k = 0; k < sequence.items.size(); ++k) {
    const ItemId item = sequence.items[k];
    if (item < 1 || item > item_count) {
      throw Error(ErrorCategory::kContract, "generated item outside catalog");
    }
    if (r[item] != 0.0) {
      throw Error(ErrorCategory::kContract,
                  "reciprocal rank aggregation needs distinct items; item " +
                      std::to_string(item) + " repeats");
    }
    r[item] = 1.0 / static_cast<double>(k + 1);
  }
  return r;
}

RelevanceAccumulator ra_single(std::span<const ScoreVector> steps, std::int32_t item_count) {
  RelevanceAccumulator r(static_cast<std::size_t>(item_count) + 1, 0.0);
  for (const auto& step : steps) {
    if (step.kind != ScoreVector::Kind::kProbabilities) {
      throw Error(ErrorCategory::kContract, "relevance aggregation needs probability vectors");
    }
    if (step.item_count() != item_count) {
      throw Error(ErrorCategory::kContract, "step vector has the wrong catalog size");
    }
    double mass = 0.0;
    for (ItemId i = 1; i <= item_count; ++i) {
      if (!(step.values[i] >= 0.0)) {
        throw Error(ErrorCategory::kContract, "step vector has a negative or NaN entry");
      }
      mass += step.values[i];
    }
    if (std::abs(mass - 1.0) > 1e-6) {
      throw Error(ErrorCategory::kContract, "step vector does not sum to 1");
    }
    for (ItemId i = 1; i <= item_count; ++i) r[i] += step.values[i];
  }
  return r;
}

RelevanceAccumulator tree_sum(std::vector<RelevanceAccumulator> parts) {
  if (parts.empty()) return {};
  for (std::size_t stride = 1; stride < parts.size(); stride *= 2) {
    for (std::size_t i = 0; i + stride < parts.size(); i += 2 * stride) {
      auto& dst = parts[i];
      const auto& src = parts[i + stride];
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }
  return std::move(parts[0]);
}

RelevanceAccumulator aggregate_scores(const NextItemModel& model,
                                      std::span<const ItemId> history,
                                      const AggregationConfig& config, int workers) {
  config.validate();
  const bool rra = config.strategy == AggregationStrategy::kReciprocalRank;
  GenerationConstraints constraints;
  constraints.forbid_history = true;
  constraints.forbid_repeats = rra;

  const auto root = model.start(history);
  const auto blocked = history_mask(model.item_count(), history, constraints);
  const std::int32_t item_count = model.item_count();

  std::vector<RelevanceAccumulator> parts(static_cast<std::size_t>(config.num_sequences));
  parallel_for(parts.size(), workers, [&](std::size_t s) {
    SamplingOptions options;
    options.temperature = config.temperature;
    options.seed = derive_seed(config.seed, "sequence", s);
    if (rra) {
      options.topk = config.topk;
    } else {
      options.topk = 0;
      options.record_scores = true;
      if (!config.relevance_at_sampling_temperature) options.record_temperature = 1.0;
    }
    const GeneratedSequence seq =
        temperature_sample(*root, blocked, config.horizon, options, constraints);
    parts[s] = rra ? rra_single(seq, item_count) : ra_single(seq.step_scores, item_count);
  });
  return tree_sum(std::move(parts));
}

RecommendationList aggregate_recommend(const NextItemModel& model,
                                       std::span<const ItemId> history,
                                       const AggregationConfig& config, int workers) {
  const RelevanceAccumulator r = aggregate_scores(model, history, config, workers);
  // Only history items are excluded from the final ranking.
  const auto blocked = history_mask(model.item_count(), history, GenerationConstraints{});
  return rank_scores(r, config.horizon, blocked);
}

}  // namespace seqrec
