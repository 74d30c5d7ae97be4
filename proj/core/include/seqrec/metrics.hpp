#pragma once

#include <span>
#include <vector>

#include "seqrec/data.hpp"

namespace seqrec {

// Binary-relevance ranking metrics over the first K recommendations.
// Ground truth is treated as a set (duplicates collapse). An empty ground
// truth scores 0; score_ranking() reports it via `empty_ground_truth`.

/// DCG = sum_{j<=K} [rec_j in gt] / log2(j + 1); IDCG uses min(K, |gt|) hits.
double ndcg_at_k(std::span<const ItemId> recs, std::span<const ItemId> ground_truth, int k);

/// |recs[1..K] ∩ gt| / |gt|
double recall_at_k(std::span<const ItemId> recs, std::span<const ItemId> ground_truth, int k);

/// Average precision truncated at K, normalized by min(|gt|, K).
double map_at_k(std::span<const ItemId> recs, std::span<const ItemId> ground_truth, int k);

/// Entry p is 1 when ground_truth[p] (kept in interaction order, duplicates
/// included) appears among the first K recommendations.
std::vector<double> hitrate_by_position(std::span<const ItemId> recs,
                                        std::span<const ItemId> ground_truth, int k);

struct RankingScores {
  double ndcg = 0.0;
  double recall = 0.0;
  double map = 0.0;
  bool empty_ground_truth = false;
};

RankingScores score_ranking(std::span<const ItemId> recs,
                            std::span<const ItemId> ground_truth, int k);

struct TTestResult {
  double t = 0.0;
  double p_value = 1.0;
  std::int64_t degrees_of_freedom = 0;
  /// Zero variance of the differences; t and p are set to 0 and 1.
  bool degenerate = false;
};

/// Two-sided paired t-test on a[i] - b[i]. Requires equal lengths >= 2.
TTestResult paired_ttest(std::span<const double> a, std::span<const double> b);

/// Student t CDF, evaluated through the regularized incomplete beta function
/// (Lentz continued fraction, relative accuracy ~1e-12).
double student_t_cdf(double t, double degrees_of_freedom);

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);

}  // namespace seqrec
