#include "seqrec/decode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "seqrec/error.hpp"
#include "seqrec/rng.hpp"

namespace seqrec {
namespace {

void check_horizon(int k) {
  if (k < 1) throw Error(ErrorCategory::kParameter, "K must be >= 1");
}

bool is_masked(double logit) { return std::isinf(logit) && logit < 0; }

// Index of the largest unmasked logit (lowest id on ties), or 0 if none.
ItemId argmax(const ScoreVector& logits, std::span<const std::uint8_t> blocked) {
  ItemId best = kPadItem;
  double best_value = kMaskedLogit;
  for (ItemId i = 1; i <= logits.item_count(); ++i) {
    if (blocked[i] || is_masked(logits.values[i])) continue;
    if (best == kPadItem || logits.values[i] > best_value) {
      best = i;
      best_value = logits.values[i];
    }
  }
  return best;
}

// log-sum-exp over unmasked entries; -inf when everything is masked.
double log_normalizer(const ScoreVector& logits, std::span<const std::uint8_t> blocked) {
  double max_value = kMaskedLogit;
  for (ItemId i = 1; i <= logits.item_count(); ++i) {
    if (!blocked[i]) max_value = std::max(max_value, logits.values[i]);
  }
  if (is_masked(max_value)) return kMaskedLogit;
  double sum = 0.0;
  for (ItemId i = 1; i <= logits.item_count(); ++i) {
    if (!blocked[i] && !is_masked(logits.values[i])) sum += std::exp(logits.values[i] - max_value);
  }
  return max_value + std::log(sum);
}

ScoreVector masked_logits(const ScoreVector& logits, std::span<const std::uint8_t> blocked) {
  ScoreVector out = logits;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    if (blocked[i]) out.values[i] = kMaskedLogit;
  }
  return out;
}

ItemId draw(const ScoreVector& probs, Rng& rng) {
  double total = 0.0;
  for (ItemId i = 1; i <= probs.item_count(); ++i) total += probs.values[i];
  const double target = rng.uniform() * total;
  double acc = 0.0;
  ItemId last_positive = kPadItem;
  for (ItemId i = 1; i <= probs.item_count(); ++i) {
    const double p = probs.values[i];
    if (p <= 0.0) continue;
    acc += p;
    last_positive = i;
    if (target < acc) return i;
  }
  return last_positive;
}

}  // namespace

std::vector<ItemId> RecommendationList::ids() const {
  std::vector<ItemId> out;
  out.reserve(items.size());
  for (const auto& r : items) out.push_back(r.item);
  return out;
}

ScoreVector apply_temperature(const ScoreVector& logits, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorCategory::kParameter, "temperature must be positive and finite");
  }
  if (logits.kind != ScoreVector::Kind::kLogits) {
    throw Error(ErrorCategory::kParameter, "apply_temperature expects logits");
  }
  ScoreVector out;
  out.kind = ScoreVector::Kind::kProbabilities;
  out.values.assign(logits.values.size(), 0.0);
  double max_value = kMaskedLogit;
  for (std::size_t i = 1; i < logits.values.size(); ++i) {
    max_value = std::max(max_value, logits.values[i]);
  }
  if (is_masked(max_value)) return out;
  double sum = 0.0;
  for (std::size_t i = 1; i < logits.values.size(); ++i) {
    if (is_masked(logits.values[i])) continue;
    out.values[i] = std::exp((logits.values[i] - max_value) / temperature);
    sum += out.values[i];
  }
  for (std::size_t i = 1; i < out.values.size(); ++i) out.values[i] /= sum;
  return out;
}

ScoreVector topk_filter(const ScoreVector& probs, int k) {
  if (k < 1) throw Error(ErrorCategory::kParameter, "top-k must be >= 1");
  if (probs.kind != ScoreVector::Kind::kProbabilities) {
    throw Error(ErrorCategory::kParameter, "topk_filter expects probabilities");
  }
  std::vector<ItemId> candidates;
  for (ItemId i = 1; i <= probs.item_count(); ++i) {
    if (probs.values[i] > 0.0) candidates.push_back(i);
  }
  if (static_cast<std::size_t>(k) >= candidates.size()) return probs;
  std::partial_sort(candidates.begin(), candidates.begin() + k, candidates.end(),
                    [&](ItemId a, ItemId b) {
                      if (probs.values[a] != probs.values[b]) return probs.values[a] > probs.values[b];
                      return a < b;
                    });
  ScoreVector out;
  out.kind = ScoreVector::Kind::kProbabilities;
  out.values.assign(probs.values.size(), 0.0);
  double kept = 0.0;
  for (int j = 0; j < k; ++j) kept += probs.values[candidates[j]];
  for (int j = 0; j < k; ++j) out.values[candidates[j]] = probs.values[candidates[j]] / kept;
  return out;
}

RecommendationList rank_scores(std::span<const double> scores, int k,
                               std::span<const std::uint8_t> blocked) {
  check_horizon(k);
  std::vector<ItemId> candidates;
  candidates.reserve(scores.size());
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (!blocked.empty() && blocked[i]) continue;
    if (is_masked(scores[i])) continue;
    candidates.push_back(static_cast<ItemId>(i));
  }
  const std::size_t take = std::min(candidates.size(), static_cast<std::size_t>(k));
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                    candidates.end(), [&](ItemId a, ItemId b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  RecommendationList list;
  list.truncated = take < static_cast<std::size_t>(k);
  list.items.reserve(take);
  for (std::size_t j = 0; j < take; ++j) list.items.push_back({candidates[j], scores[candidates[j]]});
  return list;
}

RecommendationList positional_list(const GeneratedSequence& sequence) {
  RecommendationList list;
  list.truncated = sequence.truncated;
  for (std::size_t j = 0; j < sequence.items.size(); ++j) {
    list.items.push_back({sequence.items[j], 1.0 / static_cast<double>(j + 1)});
  }
  return list;
}

std::vector<std::uint8_t> history_mask(std::int32_t item_count,
                                       std::span<const ItemId> history,
                                       const GenerationConstraints& constraints) {
  std::vector<std::uint8_t> blocked(static_cast<std::size_t>(item_count) + 1, 0);
  blocked[kPadItem] = 1;
  if (constraints.forbid_history) {
    for (ItemId item : history) {
      if (item >= 1 && item <= item_count) blocked[item] = 1;
    }
  }
  return blocked;
}

RecommendationList topk_prediction(const NextItemModel& model, std::span<const ItemId> history,
                                   int k, const GenerationConstraints& constraints) {
  check_horizon(k);
  const ScoreVector logits = model.forward(history);
  const auto blocked = history_mask(model.item_count(), history, constraints);
  return rank_scores(logits.values, k, blocked);
}

GeneratedSequence greedy_decode(const NextItemModel& model, std::span<const ItemId> history,
                                int k, const GenerationConstraints& constraints) {
  check_horizon(k);
  auto session = model.start(history);
  auto blocked = history_mask(model.item_count(), history, constraints);
  GeneratedSequence out;
  for (int step = 0; step < k; ++step) {
    const ScoreVector& logits = session->logits();
    const ItemId next = argmax(logits, blocked);
    if (next == kPadItem) {
      out.truncated = true;
      break;
    }
    out.step_log_probs.push_back(logits.values[next] - log_normalizer(logits, blocked));
    out.items.push_back(next);
    if (constraints.forbid_repeats) blocked[next] = 1;
    if (step + 1 < k) session->push(next);
  }
  return out;
}

GeneratedSequence beam_search(const NextItemModel& model, std::span<const ItemId> history,
                              int k, int beam_width, const GenerationConstraints& constraints) {
  check_horizon(k);
  if (beam_width < 1) throw Error(ErrorCategory::kParameter, "beam width must be >= 1");

  struct Beam {
    std::vector<ItemId> items;
    std::vector<double> log_probs;
    double score = 0.0;
    std::unique_ptr<DecodeSession> session;
  };
  struct Candidate {
    double score;
    std::size_t parent;
    ItemId item;
    double log_prob;
  };

  const auto base = history_mask(model.item_count(), history, constraints);
  std::vector<Beam> beams(1);
  beams[0].session = model.start(history);
  bool capped = false;
  bool truncated = false;

  for (int step = 0; step < k; ++step) {
    std::vector<Candidate> candidates;
    std::vector<std::uint8_t> blocked;
    for (std::size_t b = 0; b < beams.size(); ++b) {
      blocked = base;
      if (constraints.forbid_repeats) {
        for (ItemId item : beams[b].items) blocked[item] = 1;
      }
      const ScoreVector& logits = beams[b].session->logits();
      const double norm = log_normalizer(logits, blocked);
      if (is_masked(norm)) continue;
      for (ItemId i = 1; i <= logits.item_count(); ++i) {
        if (blocked[i] || is_masked(logits.values[i])) continue;
        const double lp = logits.values[i] - norm;
        candidates.push_back({beams[b].score + lp, b, i, lp});
      }
    }
    if (candidates.empty()) {
      truncated = true;
      break;
    }
    if (static_cast<std::size_t>(beam_width) > candidates.size()) capped = true;
    const std::size_t keep = std::min(candidates.size(), static_cast<std::size_t>(beam_width));
    auto better = [&](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      const auto& pa = beams[a.parent].items;
      const auto& pb = beams[b.parent].items;
      if (pa != pb) return std::lexicographical_compare(pa.begin(), pa.end(), pb.begin(), pb.end());
      return a.item < b.item;
    };
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), better);

    std::vector<Beam> next(keep);
    for (std::size_t j = 0; j < keep; ++j) {
      const Candidate& c = candidates[j];
      const Beam& parent = beams[c.parent];
      next[j].items = parent.items;
      next[j].items.push_back(c.item);
      next[j].log_probs = parent.log_probs;
      next[j].log_probs.push_back(c.log_prob);
      next[j].score = c.score;
      if (step + 1 < k) {
        next[j].session = parent.session->clone();
        next[j].session->push(c.item);
      }
    }
    beams = std::move(next);
  }

  GeneratedSequence out;
  out.items = std::move(beams[0].items);
  out.step_log_probs = std::move(beams[0].log_probs);
  out.truncated = truncated;
  out.beam_capped = capped;
  return out;
}

GeneratedSequence temperature_sample(const DecodeSession& root,
                                     std::span<const std::uint8_t> history_blocked, int k,
                                     const SamplingOptions& options,
                                     const GenerationConstraints& constraints) {
  check_horizon(k);
  if (!(options.temperature > 0.0)) {
    throw Error(ErrorCategory::kParameter, "temperature must be positive");
  }
  if (options.topk < 0) throw Error(ErrorCategory::kParameter, "top-k must be >= 0");

  auto session = root.clone();
  std::vector<std::uint8_t> blocked(history_blocked.begin(), history_blocked.end());
  Rng rng(options.seed);
  GeneratedSequence out;
  const bool argmax_mode = options.temperature <= kArgmaxTemperature;

  for (int step = 0; step < k; ++step) {
    const ScoreVector& logits = session->logits();
    const ScoreVector masked = masked_logits(logits, blocked);
    const double norm = log_normalizer(logits, blocked);
    if (is_masked(norm)) {
      throw Error(ErrorCategory::kModel, "every item is masked at generation step " +
                                             std::to_string(step + 1));
    }
    ScoreVector probs = apply_temperature(masked, options.temperature);
    ItemId next;
    if (argmax_mode) {
      next = argmax(logits, blocked);
    } else {
      if (options.topk > 0) probs = topk_filter(probs, options.topk);
      next = draw(probs, rng);
    }
    if (options.record_scores) {
      out.step_scores.push_back(options.record_temperature
                                    ? apply_temperature(masked, *options.record_temperature)
                                    : std::move(probs));
    }
    out.step_log_probs.push_back(logits.values[next] - norm);
    out.items.push_back(next);
    if (constraints.forbid_repeats) blocked[next] = 1;
    if (step + 1 < k) session->push(next);
  }
  return out;
}

GeneratedSequence temperature_sample(const NextItemModel& model,
                                     std::span<const ItemId> history, int k,
                                     const SamplingOptions& options,
                                     const GenerationConstraints& constraints) {
  const auto session = model.start(history);
  const auto blocked = history_mask(model.item_count(), history, constraints);
  return temperature_sample(*session, blocked, k, options, constraints);
}

}  // namespace seqrec
