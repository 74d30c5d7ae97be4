#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seqrec/model.hpp"

namespace seqrec {

/// Decoder-only transformer hyperparameters. Blocks are pre-LayerNorm with a
/// GELU (tanh form) feed-forward of width 4 * hidden_size, learned positional
/// embeddings, and the item embedding matrix reused as the output projection.
struct ModelConfig {
  int hidden_size = 64;
  int num_blocks = 2;
  int num_heads = 1;
  double dropout = 0.1;
  int max_seq_len = 128;
  std::int32_t item_count = 0;

  /// Throws Error(kConfig) naming the offending field.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct TensorInfo {
  std::string name;
  std::vector<std::int64_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Placement of every named tensor inside one flat parameter buffer.
class ParameterLayout {
 public:
  struct Block {
    std::size_t ln1_weight, ln1_bias;
    std::size_t qkv_weight, qkv_bias;        // [3C, C], [3C]
    std::size_t attn_proj_weight, attn_proj_bias;  // [C, C], [C]
    std::size_t ln2_weight, ln2_bias;
    std::size_t fc_weight, fc_bias;          // [4C, C], [4C]
    std::size_t fc_proj_weight, fc_proj_bias;  // [C, 4C], [C]
  };

  explicit ParameterLayout(const ModelConfig& config);

  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  const TensorInfo& find(std::string_view name) const;
  std::size_t total_size() const { return total_; }

  std::size_t item_embedding = 0;      // [I+1, C]
  std::size_t position_embedding = 0;  // [L, C]
  std::size_t final_ln_weight = 0;
  std::size_t final_ln_bias = 0;
  std::vector<Block> blocks;

 private:
  std::size_t add(std::string name, std::vector<std::int64_t> shape);

  std::vector<TensorInfo> tensors_;
  std::size_t total_ = 0;
};

/// All model weights (or their gradients) in one contiguous buffer.
template <class Real>
struct ParameterSet {
  explicit ParameterSet(const ModelConfig& cfg)
      : config(cfg), layout(cfg), values(layout.total_size(), Real(0)) {}

  std::span<Real> tensor(std::string_view name) {
    const auto& info = layout.find(name);
    return std::span<Real>(values).subspan(info.offset, info.size);
  }
  std::span<const Real> tensor(std::string_view name) const {
    const auto& info = layout.find(name);
    return std::span<const Real>(values).subspan(info.offset, info.size);
  }

  template <class Other>
  ParameterSet<Other> cast() const {
    ParameterSet<Other> out(config);
    for (std::size_t i = 0; i < values.size(); ++i) out.values[i] = static_cast<Other>(values[i]);
    return out;
  }

  ModelConfig config;
  ParameterLayout layout;
  std::vector<Real> values;
};

using Parameters = ParameterSet<float>;

/// normal(0, stddev) for embeddings and linear weights, ones/zeros for
/// LayerNorm, zeros for biases and the padding embedding row.
Parameters init_parameters(const ModelConfig& config, std::uint64_t seed,
                           double stddev = 0.02);

/// Training-time dropout. Masks are drawn from a generator seeded with `seed`
/// in a fixed order, so a (batch, seed) pair always yields the same masks.
struct DropoutSpec {
  double rate = 0.0;
  std::uint64_t seed = 0;
};

/// Mean next-item cross-entropy over every non-padding target in `batch`.
/// Each row is a left-padded sequence (pad id 0) no longer than max_seq_len;
/// row r contributes targets r[t+1] for inputs r[t]. `grads` is overwritten
/// with d(loss)/d(params). Throws Error(kModel) when the batch has no targets.
template <class Real>
double loss_and_gradients(const ParameterSet<Real>& params,
                          std::span<const std::vector<ItemId>> batch,
                          ParameterSet<Real>& grads,
                          const DropoutSpec* dropout = nullptr);

/// Loss only (no dropout); same definition as loss_and_gradients.
template <class Real>
double batch_loss(const ParameterSet<Real>& params,
                  std::span<const std::vector<ItemId>> batch);

/// Logits for every position of `tokens` (row t predicts tokens[t+1]),
/// flattened as [T, I+1]. Uses the full-sequence path that training uses.
template <class Real>
std::vector<double> sequence_logits(const ParameterSet<Real>& params,
                                    std::span<const ItemId> tokens);

/// Inference wrapper. forward() and start() never apply dropout and only read
/// the parameters, so one instance can serve many threads.
class Transformer final : public NextItemModel {
 public:
  explicit Transformer(Parameters params);

  std::int32_t item_count() const override { return params_.config.item_count; }
  ScoreVector forward(std::span<const ItemId> prefix) const override;
  std::unique_ptr<DecodeSession> start(std::span<const ItemId> prefix) const override;

  const Parameters& parameters() const { return params_; }
  const ModelConfig& config() const { return params_.config; }

 private:
  Parameters params_;
};

}  // namespace seqrec
