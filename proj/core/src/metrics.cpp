#include "seqrec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "seqrec/error.hpp"

namespace seqrec {
namespace {

void check_k(int k) {
  if (k < 1) throw Error(ErrorCategory::kParameter, "K must be >= 1");
}

std::vector<ItemId> distinct(std::span<const ItemId> items) {
  std::vector<ItemId> out(items.begin(), items.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

bool contains(const std::vector<ItemId>& sorted, ItemId item) {
  return std::binary_search(sorted.begin(), sorted.end(), item);
}

std::span<const ItemId> head(std::span<const ItemId> recs, int k) {
  return recs.first(std::min(recs.size(), static_cast<std::size_t>(k)));
}

}  // namespace

double ndcg_at_k(std::span<const ItemId> recs, std::span<const ItemId> ground_truth, int k) {
  check_k(k);
  const auto gt = distinct(ground_truth);
  if (gt.empty()) return 0.0;
  const auto top = head(recs, k);
  double dcg = 0.0;
  for (std::size_t j = 0; j < top.size(); ++j) {
    if (contains(gt, top[j])) dcg += 1.0 / std::log2(static_cast<double>(j) + 2.0);
  }
  double idcg = 0.0;
  const std::size_t ideal = std::min(gt.size(), static_cast<std::size_t>(k));
  for (std::size_t j = 0; j < ideal; ++j) idcg += 1.0 / std::log2(static_cast<double>(j) + 2.0);
  return dcg / idcg;
}

double recall_at_k(std::span<const ItemId> recs, std::span<const ItemId> ground_truth, int k) {
  check_k(k);
  const auto gt = distinct(ground_truth);
  if (gt.empty()) return 0.0;
  const auto top = distinct(head(recs, k));
  std::size_t hits = 0;
  for (ItemId item : top) hits += contains(gt, item) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(gt.size());
}

double map_at_k(std::span<const ItemId> recs, std::span<const ItemId> ground_truth, int k) {
  check_k(k);
  const auto gt = distinct(ground_truth);
  if (gt.empty()) return 0.0;
  const auto top = head(recs, k);
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t j = 0; j < top.size(); ++j) {
    if (contains(gt, top[j])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(j + 1);
    }
  }
  return sum / static_cast<double>(std::min(gt.size(), static_cast<std::size_t>(k)));
}

std::vector<double> hitrate_by_position(std::span<const ItemId> recs,
                                        std::span<const ItemId> ground_truth, int k) {
  check_k(k);
  const auto top = distinct(head(recs, k));
  std::vector<double> out(ground_truth.size(), 0.0);
  for (std::size_t p = 0; p < ground_truth.size(); ++p) {
    out[p] = contains(top, ground_truth[p]) ? 1.0 : 0.0;
  }
  return out;
}

RankingScores score_ranking(std::span<const ItemId> recs, std::span<const ItemId> ground_truth,
                            int k) {
  RankingScores s;
  s.empty_ground_truth = ground_truth.empty();
  s.ndcg = ndcg_at_k(recs, ground_truth, k);
  s.recall = recall_at_k(recs, ground_truth, k);
  s.map = map_at_k(recs, ground_truth, k);
  return s;
}

// Continued fraction for the incomplete beta function (modified Lentz).
double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - incomplete_beta(b, a, 1.0 - x);

  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-15;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double f = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
    d = 1.0 + num * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + num / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    f *= d * c;
    num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
    d = 1.0 + num * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + num / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    f *= delta;
    if (std::abs(delta - 1.0) < kEps) break;
  }
  return std::exp(log_front) * f / a;
}

double student_t_cdf(double t, double degrees_of_freedom) {
  if (!(degrees_of_freedom > 0.0)) {
    throw Error(ErrorCategory::kParameter, "degrees of freedom must be positive");
  }
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double x = degrees_of_freedom / (degrees_of_freedom + t * t);
  const double tail = 0.5 * incomplete_beta(degrees_of_freedom / 2.0, 0.5, x);
  return t >= 0 ? 1.0 - tail : tail;
}

TTestResult paired_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCategory::kParameter, "paired samples differ in length");
  if (a.size() < 2) throw Error(ErrorCategory::kParameter, "paired t-test needs >= 2 pairs");
  const auto n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = (a[i] - b[i]) - mean;
    ss += d * d;
  }
  TTestResult r;
  r.degrees_of_freedom = static_cast<std::int64_t>(a.size()) - 1;
  const double variance = ss / (n - 1.0);
  if (!(variance > 0.0)) {
    r.degenerate = true;
    return r;
  }
  r.t = mean / std::sqrt(variance / n);
  const double df = static_cast<double>(r.degrees_of_freedom);
  r.p_value = std::min(1.0, 2.0 * student_t_cdf(-std::abs(r.t), df));
  return r;
}

}  // namespace seqrec
