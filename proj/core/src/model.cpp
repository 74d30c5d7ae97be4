#include "seqrec/model.hpp"

#include <string>

#include "seqrec/error.hpp"

namespace seqrec {
namespace {

class RecomputeSession final : public DecodeSession {
 public:
  RecomputeSession(const NextItemModel& model, std::span<const ItemId> prefix)
      : model_(&model), prefix_(prefix.begin(), prefix.end()),
        logits_(model.forward(prefix_)) {}

  const ScoreVector& logits() const override { return logits_; }

  void push(ItemId item) override {
    prefix_.push_back(item);
    logits_ = model_->forward(prefix_);
  }

  std::unique_ptr<DecodeSession> clone() const override {
    return std::make_unique<RecomputeSession>(*this);
  }

 private:
  const NextItemModel* model_;
  std::vector<ItemId> prefix_;
  ScoreVector logits_;
};

}  // namespace

std::unique_ptr<DecodeSession> NextItemModel::start(std::span<const ItemId> prefix) const {
  return std::make_unique<RecomputeSession>(*this, prefix);
}

std::vector<ScoreVector> NextItemModel::forward_batch(
    std::span<const std::vector<ItemId>> prefixes) const {
  std::vector<ScoreVector> out;
  out.reserve(prefixes.size());
  for (const auto& prefix : prefixes) out.push_back(forward(prefix));
  return out;
}

void NextItemModel::check_prefix(std::span<const ItemId> prefix) const {
  if (prefix.empty()) throw Error(ErrorCategory::kModel, "empty prefix");
  const ItemId max_item = item_count();
  for (ItemId item : prefix) {
    if (item < 1 || item > max_item) {
      throw Error(ErrorCategory::kModel, "item id " + std::to_string(item) +
                                             " is out of catalog (1.." +
                                             std::to_string(max_item) + ")");
    }
  }
}

}  // namespace seqrec
