#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "seqrec/model.hpp"

namespace seqrec {

/// First-order Markov chain with add-one smoothing:
///   P(j | ..., i) = (count(i -> j) + 1) / (count(i -> *) + I)
/// forward() returns log-probabilities as logits.
class MarkovModel final : public NextItemModel {
 public:
  MarkovModel(std::span<const std::vector<ItemId>> sequences, std::int32_t item_count);

  std::int32_t item_count() const override { return item_count_; }
  ScoreVector forward(std::span<const ItemId> prefix) const override;

  /// Smoothed transition probability (i -> j).
  double transition(ItemId from, ItemId to) const;
  std::int64_t count(ItemId from, ItemId to) const;

 private:
  std::int32_t item_count_;
  std::vector<std::unordered_map<ItemId, std::int64_t>> rows_;  // indexed by `from`
  std::vector<std::int64_t> row_totals_;
};

/// Prefix-independent baseline: logit(i) = log(count(i) + 1).
class PopularityModel final : public NextItemModel {
 public:
  PopularityModel(std::span<const std::vector<ItemId>> sequences, std::int32_t item_count);

  std::int32_t item_count() const override { return item_count_; }
  ScoreVector forward(std::span<const ItemId> prefix) const override;

 private:
  std::int32_t item_count_;
  ScoreVector logits_;
};

}  // namespace seqrec
