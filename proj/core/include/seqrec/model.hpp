#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "seqrec/data.hpp"

namespace seqrec {

inline constexpr double kMaskedLogit = -std::numeric_limits<double>::infinity();

/// Relevance of every catalog item for one next position. Index 0 is the
/// padding slot: a masked logit, or zero probability.
struct ScoreVector {
  enum class Kind { kLogits, kProbabilities };

  std::vector<double> values;
  Kind kind = Kind::kLogits;

  std::int32_t item_count() const {
    return static_cast<std::int32_t>(values.size()) - 1;
  }
  double operator[](ItemId item) const { return values[item]; }
};

/// Incremental decoding state for one sequence. Models with a key/value cache
/// extend the sequence in O(length) per step; clone() forks the state so many
/// continuations can share one encoded history.
class DecodeSession {
 public:
  virtual ~DecodeSession() = default;
  /// Next-item logits given everything pushed so far.
  virtual const ScoreVector& logits() const = 0;
  virtual void push(ItemId item) = 0;
  virtual std::unique_ptr<DecodeSession> clone() const = 0;
};

/// Anything that yields a next-item distribution for a prefix. forward() is
/// const and must be safe to call concurrently.
class NextItemModel {
 public:
  virtual ~NextItemModel() = default;

  virtual std::int32_t item_count() const = 0;

  /// Logits for the position after `prefix`. Throws Error(kModel) on an empty
  /// prefix or an id outside 1..item_count.
  virtual ScoreVector forward(std::span<const ItemId> prefix) const = 0;

  /// Starts incremental decoding after `prefix`. The default implementation
  /// re-runs forward() on every push.
  virtual std::unique_ptr<DecodeSession> start(std::span<const ItemId> prefix) const;

  std::vector<ScoreVector> forward_batch(
      std::span<const std::vector<ItemId>> prefixes) const;

 protected:
  void check_prefix(std::span<const ItemId> prefix) const;
};

}  // namespace seqrec
