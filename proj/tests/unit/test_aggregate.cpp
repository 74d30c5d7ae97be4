#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "seqrec/aggregate.hpp"
#include "seqrec/error.hpp"
#include "test_support.hpp"

namespace seqrec {
namespace {

using testing::HashModel;
using testing::TableModel;

GeneratedSequence seq(std::vector<ItemId> items) {
  GeneratedSequence g;
  g.items = std::move(items);
  return g;
}

ScoreVector probs(std::vector<double> v) {
  ScoreVector s;
  s.kind = ScoreVector::Kind::kProbabilities;
  s.values = std::move(v);
  return s;
}

TEST(Rra, ReciprocalRanksOfOneSequence) {
  const auto r = rra_single(seq({2, 4, 1}), 5);
  EXPECT_EQ(r, (RelevanceAccumulator{0.0, 1.0 / 3.0, 1.0, 0.0, 0.5, 0.0}));
  EXPECT_EQ(rra_single(seq({}), 3), RelevanceAccumulator(4, 0.0));
  EXPECT_EQ(rra_single(seq({3}), 3), (RelevanceAccumulator{0.0, 0.0, 0.0, 1.0}));
}

TEST(Rra, SwappedPairsTieAndBreakByItemId) {
  const auto r = tree_sum({rra_single(seq({3, 2}), 4), rra_single(seq({2, 3}), 4)});
  EXPECT_EQ(r[2], 1.5);
  EXPECT_EQ(r[3], 1.5);
  const auto list = rank_scores(r, 2);
  EXPECT_EQ(list.ids(), (std::vector<ItemId>{2, 3}));
}

TEST(Rra, DuplicateItemsViolateTheContract) {
  try {
    rra_single(seq({1, 2, 1}), 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::kContract);
  }
}

TEST(Ra, SumsStepDistributions) {
  const std::vector<ScoreVector> one{probs({0.0, 0.2, 0.5, 0.3})};
  EXPECT_EQ(ra_single(one, 3), one[0].values);
  const std::vector<ScoreVector> two{probs({0.0, 0.25, 0.25, 0.25, 0.25}),
                                     probs({0.0, 0.25, 0.25, 0.25, 0.25})};
  EXPECT_EQ(ra_single(two, 4), (RelevanceAccumulator{0.0, 0.5, 0.5, 0.5, 0.5}));
}

TEST(Ra, RejectsNonProbabilities) {
  ScoreVector l;
  l.kind = ScoreVector::Kind::kLogits;
  l.values = {0.0, 1.0, 2.0};
  const std::vector<ScoreVector> bad{l};
  EXPECT_THROW(ra_single(bad, 2), Error);
  const std::vector<ScoreVector> unnormalized{probs({0.0, 0.7, 0.7})};
  EXPECT_THROW(ra_single(unnormalized, 2), Error);
}

// Six-state chain; the model's logits are log M[last], so P_{T=1} is M.
std::vector<std::vector<double>> chain() {
  return {{},
          {0, 0.05, 0.40, 0.25, 0.10, 0.15, 0.05},
          {0, 0.30, 0.05, 0.10, 0.35, 0.10, 0.10},
          {0, 0.10, 0.20, 0.05, 0.15, 0.40, 0.10},
          {0, 0.25, 0.10, 0.30, 0.05, 0.05, 0.25},
          {0, 0.15, 0.15, 0.20, 0.20, 0.10, 0.20},
          {0, 0.35, 0.25, 0.05, 0.05, 0.20, 0.10}};
}

TableModel chain_model() {
  auto rows = chain();
  for (auto& row : rows) {
    for (double& x : row) x = std::log(x);
  }
  return TableModel(rows);
}

// Exact expected RA accumulator: sum over steps of the marginal next-item
// distribution, with history items removed and each row renormalized.
std::vector<double> ra_oracle(ItemId start, int steps) {
  const auto m = chain();
  auto step = [&](ItemId from) {
    std::vector<double> q(7, 0.0);
    double z = 0.0;
    for (int i = 1; i <= 6; ++i) {
      if (i != start) z += m[from][i];
    }
    for (int i = 1; i <= 6; ++i) q[i] = i == start ? 0.0 : m[from][i] / z;
    return q;
  };
  std::vector<double> state(7, 0.0);
  state[start] = 1.0;
  std::vector<double> total(7, 0.0);
  for (int k = 0; k < steps; ++k) {
    std::vector<double> next(7, 0.0);
    for (int j = 1; j <= 6; ++j) {
      if (state[j] == 0.0) continue;
      const auto q = step(j);
      for (int i = 1; i <= 6; ++i) next[i] += state[j] * q[i];
    }
    for (int i = 1; i <= 6; ++i) total[i] += next[i];
    state = next;
  }
  return total;
}

TEST(Ra, TwoStepOracleIsFirstStepPlusPropagation) {
  // Unmasked form of the DP: p1 + p1 M, checked against the step helper.
  const auto m = chain();
  const auto oracle = ra_oracle(3, 2);
  std::vector<double> p1(7, 0.0);
  for (int i = 1; i <= 6; ++i) p1[i] = i == 3 ? 0.0 : m[3][i] / (1.0 - m[3][3]);
  double mass = 0.0;
  for (int i = 1; i <= 6; ++i) mass += oracle[i];
  EXPECT_NEAR(mass, 2.0, 1e-12);
  EXPECT_GT(oracle[5], p1[5]);
}

TEST(Ra, MonteCarloMatchesExactMarginals) {
  const auto model = chain_model();
  const std::vector<ItemId> history{3};
  AggregationConfig c;
  c.strategy = AggregationStrategy::kRelevance;
  c.num_sequences = 10000;
  c.horizon = 3;
  c.temperature = 1.0;
  c.seed = 2024;
  const auto r = aggregate_scores(model, history, c);
  const auto oracle = ra_oracle(3, 3);
  for (int i = 1; i <= 6; ++i) {
    EXPECT_NEAR(r[i] / c.num_sequences, oracle[i], 0.01) << "item " << i;
  }
  EXPECT_EQ(r[3], 0.0);
  const auto list = aggregate_recommend(model, history, c);
  EXPECT_EQ(list.ids(), rank_scores(oracle, 3, history_mask(6, history, {})).ids());
}

TEST(Aggregate, SequenceSeedsAreIndependentOfEachOther) {
  // Additivity: the aggregate equals the sum of sequences generated one at a
  // time from their per-sequence seeds.
  const HashModel model(20, 5, 1.0);
  const std::vector<ItemId> history{4, 11};
  for (auto strategy : {AggregationStrategy::kReciprocalRank, AggregationStrategy::kRelevance}) {
    AggregationConfig c;
    c.strategy = strategy;
    c.num_sequences = 12;
    c.temperature = 0.8;
    c.seed = 99;
    const auto whole = aggregate_scores(model, history, c);
    const bool rra = strategy == AggregationStrategy::kReciprocalRank;
    const GenerationConstraints constraints{true, rra};
    RelevanceAccumulator manual(21, 0.0);
    for (int s = 0; s < c.num_sequences; ++s) {
      SamplingOptions o;
      o.temperature = c.temperature;
      o.topk = rra ? c.topk : 0;
      o.seed = derive_seed(c.seed, "sequence", static_cast<std::uint64_t>(s));
      o.record_scores = !rra;
      const auto g = temperature_sample(model, history, c.horizon, o, constraints);
      const auto part = rra ? rra_single(g, 20) : ra_single(g.step_scores, 20);
      for (int i = 0; i <= 20; ++i) manual[i] += part[i];
    }
    for (int i = 0; i <= 20; ++i) EXPECT_NEAR(whole[i], manual[i], 1e-12);
  }
}

TEST(Aggregate, PermutationOfSequencesKeepsTheList) {
  const HashModel model(15, 8);
  const std::vector<ItemId> history{1};
  std::vector<RelevanceAccumulator> parts;
  for (std::uint64_t s = 0; s < 9; ++s) {
    parts.push_back(rra_single(
        temperature_sample(model, history, 5, SamplingOptions{1.0, 10, s}), 15));
  }
  const auto base = tree_sum(parts);
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    rng.shuffle(parts.begin(), parts.end());
    const auto shuffled = tree_sum(parts);
    for (int i = 0; i <= 15; ++i) EXPECT_NEAR(shuffled[i], base[i], 1e-12);
    EXPECT_EQ(rank_scores(shuffled, 5).ids(), rank_scores(base, 5).ids());
  }
}

TEST(Aggregate, ScalingEveryPartKeepsTheList) {
  const HashModel model(15, 2);
  const std::vector<ItemId> history{6};
  std::vector<RelevanceAccumulator> parts;
  std::vector<RelevanceAccumulator> scaled;
  for (std::uint64_t s = 0; s < 7; ++s) {
    auto p = rra_single(temperature_sample(model, history, 5, SamplingOptions{1.0, 10, s}), 15);
    parts.push_back(p);
    for (double& x : p) x *= 3.5;
    scaled.push_back(p);
  }
  EXPECT_EQ(rank_scores(tree_sum(parts), 5).ids(), rank_scores(tree_sum(scaled), 5).ids());
}

TEST(Aggregate, BoundsAndHistoryExclusion) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const HashModel model(25, seed);
    const std::vector<ItemId> history{2, 9, 17};
    AggregationConfig c;
    c.num_sequences = 20;
    c.seed = seed;
    c.strategy = AggregationStrategy::kReciprocalRank;
    const auto rra = aggregate_scores(model, history, c);
    for (double x : rra) {
      EXPECT_GE(x, 0.0);
      EXPECT_LE(x, c.num_sequences);
    }
    c.strategy = AggregationStrategy::kRelevance;
    const auto ra = aggregate_scores(model, history, c);
    EXPECT_NEAR(std::accumulate(ra.begin(), ra.end(), 0.0), 20.0 * 10.0, 1e-4);
    for (ItemId h : history) EXPECT_EQ(ra[h], 0.0);
    for (auto strategy : {AggregationStrategy::kReciprocalRank, AggregationStrategy::kRelevance}) {
      c.strategy = strategy;
      const auto ids = aggregate_recommend(model, history, c).ids();
      EXPECT_EQ(ids.size(), 10u);
      for (ItemId h : history) EXPECT_EQ(std::count(ids.begin(), ids.end(), h), 0);
    }
  }
}

TEST(Aggregate, OneColdSequenceIsGreedy) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const HashModel model(12, seed);
    const std::vector<ItemId> history{3, 7};
    AggregationConfig c;
    c.num_sequences = 1;
    c.temperature = 1e-4;
    c.seed = seed;
    EXPECT_EQ(aggregate_recommend(model, history, c).ids(),
              positional_list(greedy_decode(model, history, 10)).ids());
  }
}

TEST(Aggregate, WorkerCountDoesNotChangeScores) {
  const HashModel model(40, 1);
  const std::vector<ItemId> history{1, 2, 3};
  for (auto strategy : {AggregationStrategy::kReciprocalRank, AggregationStrategy::kRelevance}) {
    AggregationConfig c;
    c.strategy = strategy;
    c.num_sequences = 30;
    c.seed = 17;
    const auto one = aggregate_scores(model, history, c, 1);
    EXPECT_EQ(one, aggregate_scores(model, history, c, 4));
    EXPECT_EQ(one, aggregate_scores(model, history, c, 3));
  }
}

TEST(Aggregate, ConfigValidation) {
  AggregationConfig c;
  c.num_sequences = 0;
  EXPECT_THROW(c.validate(), Error);
  c.num_sequences = 1;
  c.temperature = 0.0;
  EXPECT_THROW(c.validate(), Error);
}

}  // namespace
}  // namespace seqrec
