#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "seqrec/data.hpp"
#include "seqrec/transformer.hpp"

namespace seqrec {

struct TrainConfig {
  int batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int max_epochs = 200;
  /// Stop after this many consecutive epochs without a strictly better
  /// validation NDCG@eval_k.
  int patience = 5;
  int eval_k = 10;
  /// Mask history items when scoring the validation split (matches the
  /// evaluation protocol; disable for datasets that revisit items).
  bool validation_forbid_history = true;
  std::uint64_t seed = 0;
  /// Threads for validation scoring only; updates stay single-threaded.
  int workers = 1;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_ndcg = 0.0;
  bool improved = false;
};

struct TrainResult {
  Parameters params;  // best epoch
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  bool early_stopped = false;
};

/// Mean NDCG@k of the Top-K prediction strategy over validation users.
double validation_ndcg(const NextItemModel& model, const SplitDataset& data, int k,
                       bool forbid_history, int workers = 1);

/// Training sequences: each user's train portion, clipped to the most recent
/// max_seq_len items.
std::vector<std::vector<ItemId>> training_sequences(const SplitDataset& data,
                                                    int max_seq_len);

/// Adam on shifted next-item cross-entropy with early stopping. Throws
/// Error(kModel) if the loss becomes non-finite. The result depends only on
/// the inputs and train_config.seed.
TrainResult train(const SplitDataset& data, ModelConfig model_config,
                  const TrainConfig& train_config,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace seqrec
