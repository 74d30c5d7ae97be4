#include "seqrec/evaluation.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "seqrec/aggregate.hpp"
#include "seqrec/error.hpp"
#include "seqrec/parallel.hpp"
#include "seqrec/rng.hpp"

namespace seqrec {

namespace {

using nlohmann::json;

constexpr std::string_view kKindNames[] = {"topk_prediction", "greedy", "beam",
                                           "temperature",     "rra",    "ra"};

[[noreturn]] void config_error(const std::string& field, const std::string& what) {
  throw Error(ErrorCategory::kConfig, "strategy." + field + " " + what);
}

std::string format_number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", x);
  return buf;
}

json ttest_to_json(const TTestResult& r) {
  return json{{"t", r.t},
              {"p_value", r.p_value},
              {"degrees_of_freedom", r.degrees_of_freedom},
              {"degenerate", r.degenerate}};
}

TTestResult ttest_from_json(const json& j) {
  TTestResult r;
  r.t = j.at("t").get<double>();
  r.p_value = j.at("p_value").get<double>();
  r.degrees_of_freedom = j.at("degrees_of_freedom").get<std::int64_t>();
  r.degenerate = j.at("degenerate").get<bool>();
  return r;
}

double mean_in_order(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double sum = 0.0;
  for (double x : xs) sum += x;
  return sum / static_cast<double>(xs.size());
}

}  // namespace

std::string_view to_string(StrategyKind kind) {
  return kKindNames[static_cast<int>(kind)];
}

StrategyKind strategy_kind_from_string(std::string_view name) {
  for (int i = 0; i < 6; ++i) {
    if (kKindNames[i] == name) return static_cast<StrategyKind>(i);
  }
  throw Error(ErrorCategory::kConfig, "strategy.name: unknown strategy '" +
                                          std::string(name) + "'");
}

std::string StrategyDescriptor::name() const {
  if (!label.empty()) return label;
  std::string out(to_string(kind));
  switch (kind) {
    case StrategyKind::kTopkPrediction:
    case StrategyKind::kGreedy:
      break;
    case StrategyKind::kBeam:
      out += "(B=" + std::to_string(beam_width) + ")";
      break;
    case StrategyKind::kTemperature:
      out += "(T=" + format_number(temperature) + ",topk=" + std::to_string(topk) + ")";
      break;
    case StrategyKind::kRra:
      out += "(S=" + std::to_string(num_sequences) + ",T=" + format_number(temperature) +
             ",topk=" + std::to_string(topk) + ")";
      break;
    case StrategyKind::kRa:
      out += "(S=" + std::to_string(num_sequences) + ",T=" + format_number(temperature) + ")";
      break;
  }
  return out;
}

bool StrategyDescriptor::stochastic() const {
  return (kind == StrategyKind::kTemperature || kind == StrategyKind::kRra ||
          kind == StrategyKind::kRa) &&
         temperature > kArgmaxTemperature;
}

void StrategyDescriptor::validate() const {
  if (k < 1) config_error("K", "must be >= 1");
  if (beam_width < 1) config_error("B", "must be >= 1");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) config_error("T", "must be positive");
  if (topk < 0) config_error("topk", "must be >= 0");
  if (num_sequences < 1) config_error("S", "must be >= 1");
  if (kind == StrategyKind::kRra && !constraints.forbid_repeats) {
    config_error("forbid_repeats", "must stay true for rra");
  }
}

json to_json(const StrategyDescriptor& d) {
  json j{{"name", to_string(d.kind)}, {"K", d.k}};
  switch (d.kind) {
    case StrategyKind::kTopkPrediction:
    case StrategyKind::kGreedy:
      break;
    case StrategyKind::kBeam:
      j["B"] = d.beam_width;
      break;
    case StrategyKind::kTemperature:
      j["T"] = d.temperature;
      j["topk"] = d.topk;
      break;
    case StrategyKind::kRra:
      j["S"] = d.num_sequences;
      j["T"] = d.temperature;
      j["topk"] = d.topk;
      break;
    case StrategyKind::kRa:
      j["S"] = d.num_sequences;
      j["T"] = d.temperature;
      j["ra_temperature_scores"] = d.ra_temperature_scores;
      break;
  }
  if (d.seed) j["seed"] = *d.seed;
  j["forbid_history"] = d.constraints.forbid_history;
  if (d.kind != StrategyKind::kTopkPrediction && d.kind != StrategyKind::kRa) {
    j["forbid_repeats"] = d.constraints.forbid_repeats;
  }
  if (!d.label.empty()) j["label"] = d.label;
  return j;
}

StrategyDescriptor strategy_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCategory::kConfig, "strategy must be an object");
  if (!j.contains("name")) config_error("name", "is required");
  StrategyDescriptor d;
  try {
    d.kind = strategy_kind_from_string(j.at("name").get<std::string>());
    if (d.kind == StrategyKind::kRa) d.constraints.forbid_repeats = false;
    for (const auto& [key, value] : j.items()) {
      if (key == "name") continue;
      if (key == "K") d.k = value.get<int>();
      else if (key == "B") d.beam_width = value.get<int>();
      else if (key == "T") d.temperature = value.get<double>();
      else if (key == "topk") d.topk = value.get<int>();
      else if (key == "S") d.num_sequences = value.get<int>();
      else if (key == "seed") d.seed = value.get<std::uint64_t>();
      else if (key == "forbid_history") d.constraints.forbid_history = value.get<bool>();
      else if (key == "forbid_repeats") d.constraints.forbid_repeats = value.get<bool>();
      else if (key == "ra_temperature_scores") d.ra_temperature_scores = value.get<bool>();
      else if (key == "label") d.label = value.get<std::string>();
      else config_error(key, "is not a known strategy field");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::kConfig, std::string("strategy: ") + e.what());
  }
  if (d.kind == StrategyKind::kRa && d.constraints.forbid_repeats) {
    config_error("forbid_repeats", "is not supported for ra");
  }
  d.validate();
  return d;
}

RecommendationList recommend(const NextItemModel& model, std::span<const ItemId> history,
                             const StrategyDescriptor& d, std::uint64_t seed,
                             int inner_workers) {
  switch (d.kind) {
    case StrategyKind::kTopkPrediction:
      return topk_prediction(model, history, d.k, d.constraints);
    case StrategyKind::kGreedy: {
      const auto seq = greedy_decode(model, history, d.k, d.constraints);
      return positional_list(seq);
    }
    case StrategyKind::kBeam: {
      const auto seq = beam_search(model, history, d.k, d.beam_width, d.constraints);
      return positional_list(seq);
    }
    case StrategyKind::kTemperature: {
      SamplingOptions options;
      options.temperature = d.temperature;
      options.topk = d.topk;
      options.seed = seed;
      return positional_list(temperature_sample(model, history, d.k, options, d.constraints));
    }
    case StrategyKind::kRra:
    case StrategyKind::kRa: {
      AggregationConfig config;
      config.strategy = d.kind == StrategyKind::kRra ? AggregationStrategy::kReciprocalRank
                                                     : AggregationStrategy::kRelevance;
      config.num_sequences = d.num_sequences;
      config.horizon = d.k;
      config.temperature = d.temperature;
      config.topk = d.topk;
      config.seed = seed;
      config.relevance_at_sampling_temperature = d.ra_temperature_scores;
      return aggregate_recommend(model, history, config, inner_workers);
    }
  }
  throw Error(ErrorCategory::kContract, "unknown strategy kind");
}

const StrategyReport& EvalReport::find(std::string_view name) const {
  for (const auto& s : strategies) {
    if (s.descriptor.name() == name) return s;
  }
  throw Error(ErrorCategory::kContract, "no strategy named '" + std::string(name) + "' in report");
}

EvalReport evaluate(const NextItemModel& model, const SplitDataset& data,
                    Partition partition, std::span<const StrategyDescriptor> strategies,
                    const EvaluationOptions& options) {
  if (strategies.empty()) throw Error(ErrorCategory::kConfig, "strategies: list is empty");
  for (const auto& s : strategies) s.validate();

  EvalReport report;
  report.split = std::string(to_string(partition));
  report.k = strategies.front().k;
  report.n_holdout = data.n_holdout();
  report.users = data.users_in(partition);
  if (options.max_users && report.users.size() > *options.max_users) {
    report.users.resize(*options.max_users);
  }
  if (report.users.empty()) {
    throw Error(ErrorCategory::kData, "partition '" + report.split + "' has no users");
  }
  const std::size_t n = report.users.size();

  for (const auto& descriptor : strategies) {
    const std::uint64_t base_seed =
        descriptor.seed ? *descriptor.seed : derive_seed(options.seed, "sampling");
    StrategyReport sr;
    sr.descriptor = descriptor;
    sr.user_ndcg.resize(n);
    sr.user_recall.resize(n);
    sr.user_map.resize(n);
    std::vector<std::vector<double>> hits(n);
    std::vector<std::uint8_t> empty(n), truncated(n);
    std::vector<double> seconds(n);

    const auto start = std::chrono::steady_clock::now();
    parallel_for(n, options.workers, [&](std::size_t j) {
      const auto user = report.users[j];
      const auto t0 = std::chrono::steady_clock::now();
      const auto seed = derive_seed(base_seed, "user", static_cast<std::uint64_t>(user));
      const auto recs = recommend(model, data.train(user), descriptor, seed);
      seconds[j] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const auto ids = recs.ids();
      const auto gt = data.holdout(user);
      const auto scores = score_ranking(ids, gt, descriptor.k);
      sr.user_ndcg[j] = scores.ndcg;
      sr.user_recall[j] = scores.recall;
      sr.user_map[j] = scores.map;
      hits[j] = hitrate_by_position(ids, gt, descriptor.k);
      empty[j] = scores.empty_ground_truth;
      truncated[j] = recs.truncated;
    });
    sr.total_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    sr.mean_user_seconds = mean_in_order(seconds);

    sr.ndcg = mean_in_order(sr.user_ndcg);
    sr.recall = mean_in_order(sr.user_recall);
    sr.map = mean_in_order(sr.user_map);
    std::size_t positions = 0;
    for (const auto& h : hits) positions = std::max(positions, h.size());
    sr.hitrate_by_position.assign(positions, 0.0);
    for (std::size_t p = 0; p < positions; ++p) {
      double sum = 0.0;
      std::size_t count = 0;
      for (const auto& h : hits) {
        if (p < h.size()) {
          sum += h[p];
          ++count;
        }
      }
      sr.hitrate_by_position[p] = count ? sum / static_cast<double>(count) : 0.0;
    }
    for (std::size_t j = 0; j < n; ++j) {
      sr.empty_ground_truth_users += empty[j];
      sr.truncated_lists += truncated[j];
    }
    report.strategies.push_back(std::move(sr));
  }

  if (n >= 2) {
    const auto& base = report.strategies.front();
    for (std::size_t s = 1; s < report.strategies.size(); ++s) {
      auto& sr = report.strategies[s];
      sr.vs_baseline = StrategyReport::Significance{
          paired_ttest(sr.user_ndcg, base.user_ndcg),
          paired_ttest(sr.user_recall, base.user_recall),
          paired_ttest(sr.user_map, base.user_map)};
    }
  }
  return report;
}

json report_to_json(const EvalReport& report) {
  json strategies = json::array();
  for (const auto& s : report.strategies) {
    json js{{"name", s.descriptor.name()},
            {"strategy", to_json(s.descriptor)},
            {"ndcg", s.ndcg},
            {"recall", s.recall},
            {"map", s.map},
            {"hitrate_by_position", s.hitrate_by_position},
            {"empty_ground_truth_users", s.empty_ground_truth_users},
            {"truncated_lists", s.truncated_lists},
            {"per_user", {{"ndcg", s.user_ndcg}, {"recall", s.user_recall}, {"map", s.user_map}}}};
    if (s.vs_baseline) {
      js["vs_baseline"] = {{"ndcg", ttest_to_json(s.vs_baseline->ndcg)},
                           {"recall", ttest_to_json(s.vs_baseline->recall)},
                           {"map", ttest_to_json(s.vs_baseline->map)}};
    }
    strategies.push_back(std::move(js));
  }
  return json{{"split", report.split},
              {"K", report.k},
              {"n_holdout", report.n_holdout},
              {"baseline", report.strategies.empty() ? std::string()
                                                     : report.strategies.front().descriptor.name()},
              {"users", report.users},
              {"strategies", std::move(strategies)}};
}

EvalReport report_from_json(const json& j) {
  EvalReport report;
  try {
    report.split = j.at("split").get<std::string>();
    report.k = j.at("K").get<int>();
    report.n_holdout = j.at("n_holdout").get<int>();
    report.users = j.at("users").get<std::vector<std::int32_t>>();
    for (const auto& js : j.at("strategies")) {
      StrategyReport s;
      s.descriptor = strategy_from_json(js.at("strategy"));
      s.ndcg = js.at("ndcg").get<double>();
      s.recall = js.at("recall").get<double>();
      s.map = js.at("map").get<double>();
      s.hitrate_by_position = js.at("hitrate_by_position").get<std::vector<double>>();
      s.empty_ground_truth_users = js.at("empty_ground_truth_users").get<std::int64_t>();
      s.truncated_lists = js.at("truncated_lists").get<std::int64_t>();
      const auto& per_user = js.at("per_user");
      s.user_ndcg = per_user.at("ndcg").get<std::vector<double>>();
      s.user_recall = per_user.at("recall").get<std::vector<double>>();
      s.user_map = per_user.at("map").get<std::vector<double>>();
      if (js.contains("vs_baseline")) {
        const auto& sig = js.at("vs_baseline");
        s.vs_baseline = StrategyReport::Significance{ttest_from_json(sig.at("ndcg")),
                                                     ttest_from_json(sig.at("recall")),
                                                     ttest_from_json(sig.at("map"))};
      }
      report.strategies.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::kConfig, std::string("report: ") + e.what());
  }
  return report;
}

std::string report_dump(const EvalReport& report) {
  return report_to_json(report).dump(2) + "\n";
}

std::string metrics_table(const EvalReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "strategy,metric,value,t_vs_baseline,p_vs_baseline\n";
  for (const auto& s : report.strategies) {
    const auto name = s.descriptor.name();
    auto row = [&](const char* metric, double value, const TTestResult* t) {
      out << '"' << name << "\"," << metric << "@" << report.k << ',' << value << ',';
      if (t) out << t->t << ',' << t->p_value;
      else out << ',';
      out << '\n';
    };
    const auto* sig = s.vs_baseline ? &*s.vs_baseline : nullptr;
    row("ndcg", s.ndcg, sig ? &sig->ndcg : nullptr);
    row("recall", s.recall, sig ? &sig->recall : nullptr);
    row("map", s.map, sig ? &sig->map : nullptr);
  }
  return out.str();
}

std::string hitrate_table(const EvalReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "strategy,position,hitrate\n";
  for (const auto& s : report.strategies) {
    for (std::size_t p = 0; p < s.hitrate_by_position.size(); ++p) {
      out << '"' << s.descriptor.name() << "\"," << p + 1 << ',' << s.hitrate_by_position[p]
          << '\n';
    }
  }
  return out.str();
}

json timing_json(const EvalReport& report) {
  json out = json::array();
  for (const auto& s : report.strategies) {
    out.push_back({{"name", s.descriptor.name()},
                   {"total_seconds", s.total_seconds},
                   {"mean_user_seconds", s.mean_user_seconds},
                   {"users", report.users.size()}});
  }
  return out;
}

}  // namespace seqrec
