#include "seqrec/baselines.hpp"

#include <cmath>

#include "seqrec/error.hpp"

namespace seqrec {
namespace {

void check_corpus(std::span<const std::vector<ItemId>> sequences, std::int32_t item_count) {
  if (item_count < 1) throw Error(ErrorCategory::kModel, "item_count must be >= 1");
  if (sequences.empty()) throw Error(ErrorCategory::kModel, "empty training corpus");
  for (const auto& seq : sequences) {
    for (ItemId item : seq) {
      if (item < 1 || item > item_count) {
        throw Error(ErrorCategory::kModel, "item id " + std::to_string(item) +
                                               " is out of catalog");
      }
    }
  }
}

}  // namespace

MarkovModel::MarkovModel(std::span<const std::vector<ItemId>> sequences,
                         std::int32_t item_count)
    : item_count_(item_count) {
  check_corpus(sequences, item_count);
  const auto width = static_cast<std::size_t>(item_count) + 1;
  rows_.resize(width);
  row_totals_.assign(width, 0);
  for (const auto& seq : sequences) {
    for (std::size_t t = 1; t < seq.size(); ++t) {
      ++rows_[seq[t - 1]][seq[t]];
      ++row_totals_[seq[t - 1]];
    }
  }
}

std::int64_t MarkovModel::count(ItemId from, ItemId to) const {
  const auto& row = rows_[from];
  const auto it = row.find(to);
  return it == row.end() ? 0 : it->second;
}

double MarkovModel::transition(ItemId from, ItemId to) const {
  return static_cast<double>(count(from, to) + 1) /
         static_cast<double>(row_totals_[from] + item_count_);
}

ScoreVector MarkovModel::forward(std::span<const ItemId> prefix) const {
  check_prefix(prefix);
  const ItemId last = prefix.back();
  ScoreVector out;
  out.kind = ScoreVector::Kind::kLogits;
  out.values.resize(static_cast<std::size_t>(item_count_) + 1);
  out.values[0] = kMaskedLogit;
  const double denom = static_cast<double>(row_totals_[last] + item_count_);
  const double unseen = std::log(1.0 / denom);
  for (ItemId j = 1; j <= item_count_; ++j) out.values[j] = unseen;
  for (const auto& [to, c] : rows_[last]) {
    out.values[to] = std::log(static_cast<double>(c + 1) / denom);
  }
  return out;
}

PopularityModel::PopularityModel(std::span<const std::vector<ItemId>> sequences,
                                 std::int32_t item_count)
    : item_count_(item_count) {
  check_corpus(sequences, item_count);
  std::vector<std::int64_t> counts(static_cast<std::size_t>(item_count) + 1, 0);
  for (const auto& seq : sequences) {
    for (ItemId item : seq) ++counts[item];
  }
  logits_.kind = ScoreVector::Kind::kLogits;
  logits_.values.resize(counts.size());
  logits_.values[0] = kMaskedLogit;
  for (ItemId i = 1; i <= item_count; ++i) {
    logits_.values[i] = std::log(static_cast<double>(counts[i] + 1));
  }
}

ScoreVector PopularityModel::forward(std::span<const ItemId> prefix) const {
  check_prefix(prefix);
  return logits_;
}

}  // namespace seqrec
