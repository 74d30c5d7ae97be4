#include "seqrec/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "seqrec/decode.hpp"
#include "seqrec/error.hpp"
#include "seqrec/metrics.hpp"
#include "seqrec/parallel.hpp"
#include "seqrec/rng.hpp"

namespace seqrec {

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& what) {
    throw Error(ErrorCategory::kConfig, "train." + field + " " + what);
  };
  if (batch_size < 1) fail("batch_size", "must be positive");
  if (!(learning_rate > 0.0)) fail("learning_rate", "must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2", "must lie in [0, 1)");
  if (!(epsilon > 0.0)) fail("epsilon", "must be positive");
  if (max_epochs < 1) fail("max_epochs", "must be positive");
  if (patience < 1) fail("patience", "must be >= 1");
  if (eval_k < 1) fail("eval_k", "must be positive");
}

double validation_ndcg(const NextItemModel& model, const SplitDataset& data, int k,
                       bool forbid_history, int workers) {
  const auto users = data.users_in(Partition::kValidation);
  if (users.empty()) return 0.0;
  GenerationConstraints constraints;
  constraints.forbid_history = forbid_history;
  std::vector<double> scores(users.size());
  parallel_for(users.size(), workers, [&](std::size_t j) {
    const auto user = users[j];
    const auto recs = topk_prediction(model, data.train(user), k, constraints);
    scores[j] = ndcg_at_k(recs.ids(), data.holdout(user), k);
  });
  double sum = 0.0;
  for (double s : scores) sum += s;
  return sum / static_cast<double>(scores.size());
}

std::vector<std::vector<ItemId>> training_sequences(const SplitDataset& data,
                                                    int max_seq_len) {
  std::vector<std::vector<ItemId>> out;
  out.reserve(static_cast<std::size_t>(data.user_count()));
  for (std::int32_t u = 0; u < data.user_count(); ++u) {
    auto seq = data.train(u);
    if (seq.size() < 2) continue;
    const std::size_t keep = std::min(seq.size(), static_cast<std::size_t>(max_seq_len));
    out.emplace_back(seq.end() - static_cast<std::ptrdiff_t>(keep), seq.end());
  }
  return out;
}

TrainResult train(const SplitDataset& data, ModelConfig model_config,
                  const TrainConfig& train_config,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  train_config.validate();
  model_config.item_count = data.item_count();
  model_config.validate();

  const auto sequences = training_sequences(data, model_config.max_seq_len);
  if (sequences.empty()) throw Error(ErrorCategory::kData, "no training sequences");
  if (data.users_in(Partition::kValidation).empty()) {
    throw Error(ErrorCategory::kData, "validation partition is empty");
  }

  Parameters params = init_parameters(model_config, train_config.seed);
  Parameters grads(model_config);
  std::vector<float> m(params.values.size(), 0.0f);
  std::vector<float> v(params.values.size(), 0.0f);
  std::int64_t step = 0;

  TrainResult result{params, {}, 0, false};
  double best = -std::numeric_limits<double>::infinity();
  int stale = 0;

  std::vector<std::size_t> order(sequences.size());
  std::vector<std::vector<ItemId>> batch;
  for (int epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffler(derive_seed(train_config.seed, "epoch", static_cast<std::uint64_t>(epoch)));
    shuffler.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    std::int64_t batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(train_config.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(train_config.batch_size));
      std::size_t width = 0;
      for (std::size_t j = start; j < end; ++j) width = std::max(width, sequences[order[j]].size());
      batch.assign(end - start, std::vector<ItemId>(width, kPadItem));
      for (std::size_t j = start; j < end; ++j) {
        const auto& seq = sequences[order[j]];
        std::copy(seq.begin(), seq.end(), batch[j - start].end() - static_cast<std::ptrdiff_t>(seq.size()));
      }

      const DropoutSpec dropout{model_config.dropout,
                                derive_seed(train_config.seed, "dropout",
                                            static_cast<std::uint64_t>(epoch),
                                            static_cast<std::uint64_t>(batches))};
      const double loss = loss_and_gradients(params, batch, grads, &dropout);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "training diverged at epoch " << epoch << ", batch " << batches
            << " (loss = " << loss << ")";
        throw Error(ErrorCategory::kModel, msg.str());
      }
      loss_sum += loss;
      ++batches;

      ++step;
      const double b1 = train_config.beta1;
      const double b2 = train_config.beta2;
      const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step));
      const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step));
      const float lr = static_cast<float>(train_config.learning_rate);
      const float eps = static_cast<float>(train_config.epsilon);
      for (std::size_t i = 0; i < params.values.size(); ++i) {
        const float g = grads.values[i];
        m[i] = static_cast<float>(b1) * m[i] + static_cast<float>(1.0 - b1) * g;
        v[i] = static_cast<float>(b2) * v[i] + static_cast<float>(1.0 - b2) * g * g;
        const float m_hat = m[i] / static_cast<float>(correction1);
        const float v_hat = v[i] / static_cast<float>(correction2);
        params.values[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
      }
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(batches);
    {
      const Transformer model(params);
      record.validation_ndcg =
          validation_ndcg(model, data, train_config.eval_k,
                          train_config.validation_forbid_history, train_config.workers);
    }
    record.improved = record.validation_ndcg > best;
    if (record.improved) {
      best = record.validation_ndcg;
      result.params = params;
      result.best_epoch = epoch;
      stale = 0;
    } else {
      ++stale;
    }
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);
    if (stale >= train_config.patience) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

}  // namespace seqrec
