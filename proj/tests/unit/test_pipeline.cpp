#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "seqrec/baselines.hpp"
#include "seqrec/commands.hpp"
#include "seqrec/error.hpp"
#include "seqrec/synthetic.hpp"
#include "test_support.hpp"

namespace seqrec {
namespace {

using nlohmann::json;
using testing::HashModel;
using testing::slurp;
using testing::TempDir;

json base_config(const std::filesystem::path& root) {
  return json{
      {"seed", 3},
      {"output_dir", (root / "out").string()},
      {"dataset",
       {{"path", (root / "events.csv").string()},
        {"format", {{"user", "user"}, {"item", "item"}, {"timestamp", "ts"}}},
        {"min_user_len", 15},
        {"min_item_count", 2}}},
      {"model",
       {{"kind", "gpt"}, {"hidden_size", 16}, {"num_blocks", 1}, {"num_heads", 1},
        {"max_seq_len", 32}}},
      {"train", {{"max_epochs", 2}, {"batch_size", 16}}},
      {"evaluation", {{"split", "test"}}},
      {"strategies",
       json::array({{{"name", "topk_prediction"}},
                    {{"name", "greedy"}},
                    {{"name", "beam"}, {"B", 1}},
                    {{"name", "rra"}, {"S", 4}, {"T", 0.5}},
                    {{"name", "ra"}, {"S", 4}, {"T", 1.2}}})},
      {"sweeps",
       json::array({{{"name", "grid"},
                     {"strategy", {{"name", "temperature"}}},
                     {"grid", {{"T", {0.2, 0.5}}, {"topk", {10, 50}}}}}})},
      {"timing", {{"S", {1, 2}}, {"max_users", 3}}}};
}

class Pipeline : public ::testing::Test {
 protected:
  void SetUp() override {
    MarkovMixtureSpec spec;
    spec.users = 60;
    spec.item_count = 40;
    spec.min_length = 20;
    spec.max_length = 30;
    spec.seed = 4;
    write_events_csv(dir_ / "events.csv", markov_mixture_sequences(spec));
  }

  RunConfig config(const std::function<void(json&)>& edit = {}) {
    json j = base_config(dir_.path());
    if (edit) edit(j);
    return run_config_from_json(j);
  }

  TempDir dir_{"pipeline"};
  std::ostringstream log_;
};

TEST_F(Pipeline, PreprocessTwiceIsANoOp) {
  const auto c = config();
  const auto first = cmd_preprocess(c, log_);
  EXPECT_FALSE(first.unchanged);
  ASSERT_TRUE(std::filesystem::exists(first.bundle / "metadata.json"));
  const auto bytes = slurp(first.bundle / "metadata.json");
  const auto items = slurp(first.bundle / "items.bin");
  EXPECT_FALSE(items.empty());
  const auto second = cmd_preprocess(c, log_);
  EXPECT_TRUE(second.unchanged);
  EXPECT_EQ(slurp(second.bundle / "metadata.json"), bytes);
  EXPECT_EQ(slurp(second.bundle / "items.bin"), items);
  EXPECT_EQ(first.stats.users, 60);
}

TEST_F(Pipeline, TrainRerunIsByteIdentical) {
  const auto c = config();
  cmd_preprocess(c, log_);
  cmd_train(c, log_);
  const auto ckpt = slurp(c.checkpoint_path());
  const auto history = slurp(c.output_dir / "train_history.json");
  cmd_train(c, log_);
  EXPECT_EQ(slurp(c.checkpoint_path()), ckpt);
  EXPECT_EQ(slurp(c.output_dir / "train_history.json"), history);
}

TEST_F(Pipeline, EvaluationIsIdenticalAcrossWorkerCounts) {
  auto c = config();
  cmd_preprocess(c, log_);
  cmd_train(c, log_);
  const auto one = cmd_evaluate(c, log_);
  const auto report = slurp(c.output_dir / "eval_test" / "report.json");
  const auto metrics = slurp(c.output_dir / "eval_test" / "metrics.csv");
  c.workers = 4;
  cmd_evaluate(c, log_);
  EXPECT_EQ(slurp(c.output_dir / "eval_test" / "report.json"), report);
  EXPECT_EQ(slurp(c.output_dir / "eval_test" / "metrics.csv"), metrics);
  EXPECT_FALSE(slurp(c.output_dir / "eval_test" / "hitrate.csv").empty());

  // Width-one beam is greedy, user for user.
  const auto& greedy = one.find("greedy");
  const auto& beam = one.find("beam(B=1)");
  EXPECT_EQ(greedy.user_ndcg, beam.user_ndcg);
  EXPECT_EQ(greedy.hitrate_by_position, beam.hitrate_by_position);
  EXPECT_FALSE(one.strategies[0].vs_baseline.has_value());
  EXPECT_TRUE(greedy.vs_baseline.has_value());
}

TEST_F(Pipeline, ReportRoundTripsToTheSameBytes) {
  auto c = config();
  cmd_preprocess(c, log_);
  const auto data = load_split(c);
  const HashModel model(data.item_count(), 1);
  const auto report = evaluate(model, data, Partition::kValidation, c.strategies, {});
  const auto text = report_dump(report);
  EXPECT_EQ(report_dump(report_from_json(json::parse(text))), text);
  EXPECT_EQ(json::parse(text).dump().find("seconds"), std::string::npos);
}

TEST_F(Pipeline, MarkovTopkMatchesBruteForceMetrics) {
  auto c = config([](json& j) {
    j["model"] = {{"kind", "markov"}};
    j["strategies"] = json::array({{{"name", "topk_prediction"}}});
  });
  cmd_preprocess(c, log_);
  const auto data = load_split(c);
  const auto model = load_model(c, data);
  const auto report = evaluate(*model, data, Partition::kTest, c.strategies, {});

  // Independent recount: add-one smoothed transitions over every train part.
  const int items = data.item_count();
  std::map<std::pair<ItemId, ItemId>, int> counts;
  std::map<ItemId, int> totals;
  for (std::int32_t u = 0; u < data.user_count(); ++u) {
    const auto t = data.train(u);
    for (std::size_t i = 1; i < t.size(); ++i) {
      ++counts[{t[i - 1], t[i]}];
      ++totals[t[i - 1]];
    }
  }
  double ndcg_sum = 0.0;
  int users = 0;
  for (std::int32_t u : data.users_in(Partition::kTest)) {
    const auto t = data.train(u);
    const std::set<ItemId> seen(t.begin(), t.end());
    std::vector<std::pair<double, ItemId>> scored;
    for (ItemId i = 1; i <= items; ++i) {
      if (seen.count(i)) continue;
      const double p = (counts[{t.back(), i}] + 1.0) / (totals[t.back()] + items);
      scored.push_back({-p, i});
    }
    std::sort(scored.begin(), scored.end());
    const auto gt = data.holdout(u);
    const std::set<ItemId> truth(gt.begin(), gt.end());
    double dcg = 0.0, idcg = 0.0;
    for (int j = 0; j < 10; ++j) {
      if (truth.count(scored[j].second)) dcg += 1.0 / std::log2(j + 2.0);
      if (j < static_cast<int>(truth.size())) idcg += 1.0 / std::log2(j + 2.0);
    }
    ndcg_sum += dcg / idcg;
    ++users;
  }
  EXPECT_NEAR(report.strategies[0].ndcg, ndcg_sum / users, 1e-12);
}

TEST_F(Pipeline, ColdSingleSequenceRraMatchesGreedyRow) {
  auto c = config([](json& j) {
    j["model"] = {{"kind", "markov"}};
    j["strategies"] = json::array(
        {{{"name", "greedy"}}, {{"name", "rra"}, {"S", 1}, {"T", 1e-4}}});
  });
  cmd_preprocess(c, log_);
  const auto data = load_split(c);
  const auto report = evaluate(*load_model(c, data), data, Partition::kTest, c.strategies, {});
  EXPECT_EQ(report.strategies[0].user_ndcg, report.strategies[1].user_ndcg);
  EXPECT_EQ(report.strategies[0].user_map, report.strategies[1].user_map);
}

TEST_F(Pipeline, SweepGridProducesEveryPoint) {
  auto c = config([](json& j) { j["model"] = {{"kind", "popularity"}}; });
  cmd_preprocess(c, log_);
  const auto sweep = cmd_sweep(c, log_);
  ASSERT_EQ(sweep.points.size(), 4u);
  std::set<std::string> names;
  for (const auto& p : sweep.points) {
    EXPECT_TRUE(std::filesystem::exists(p.report));
    names.insert(p.strategy.name());
  }
  EXPECT_EQ(names.size(), 4u);
  EXPECT_TRUE(std::filesystem::exists(c.output_dir / "sweep_test" / "sweep.csv"));
}

TEST_F(Pipeline, OnePointSweepEqualsEvaluate) {
  auto c = config([](json& j) {
    j["model"] = {{"kind", "markov"}};
    j["strategies"] = json::array({{{"name", "temperature"}, {"T", 0.7}}});
    j["sweeps"] = json::array(
        {{{"name", "one"}, {"strategy", {{"name", "temperature"}}}, {"grid", {{"T", {0.7}}}}}});
  });
  cmd_preprocess(c, log_);
  const auto eval = cmd_evaluate(c, log_);
  const auto sweep = cmd_sweep(c, log_);
  ASSERT_EQ(sweep.points.size(), 1u);
  EXPECT_EQ(sweep.points[0].ndcg, eval.strategies[0].ndcg);
  const auto point = report_from_json(json::parse(slurp(sweep.points[0].report)));
  EXPECT_EQ(point.strategies[0].user_ndcg, eval.strategies[0].user_ndcg);
}

TEST_F(Pipeline, TimingHasOneRowPerSequenceCount) {
  auto c = config([](json& j) { j["model"] = {{"kind", "popularity"}}; });
  cmd_preprocess(c, log_);
  const auto rows = cmd_timing(c, log_);
  // greedy once, rra and ra for each S.
  EXPECT_EQ(rows.size(), 5u);
  EXPECT_TRUE(std::filesystem::exists(c.output_dir / "timing" / "timing.csv"));
}

std::string config_error(const json& j) {
  try {
    run_config_from_json(j);
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::kConfig);
    return e.what();
  }
  return "";
}

TEST(Config, ErrorsNameTheField) {
  const TempDir dir("config");
  json j = base_config(dir.path());
  j["model"]["hidden_size"] = -4;
  EXPECT_NE(config_error(j).find("model.hidden_size"), std::string::npos);
  j = base_config(dir.path());
  j["train"]["learnig_rate"] = 1e-3;
  EXPECT_NE(config_error(j).find("learnig_rate"), std::string::npos);
  j = base_config(dir.path());
  j["strategies"][3]["T"] = 0.0;
  EXPECT_NE(config_error(j).find("T"), std::string::npos);
  j = base_config(dir.path());
  j["evaluation"]["split"] = "train";
  EXPECT_NE(config_error(j).find("split"), std::string::npos);
}

TEST(Config, DefaultsAndRelativePaths) {
  const TempDir dir("config_defaults");
  {
    std::ofstream out(dir / "run.json");
    out << R"({"dataset": {"path": "data/events.csv"}, "output_dir": "runs/../out"})";
  }
  const auto c = load_run_config(dir / "run.json");
  EXPECT_EQ(c.dataset.path, dir.path() / "data" / "events.csv");
  EXPECT_EQ(c.output_dir, dir.path() / "out");
  EXPECT_EQ(c.model.hidden_size, 64);
  EXPECT_EQ(c.model.num_blocks, 2);
  EXPECT_EQ(c.model.num_heads, 1);
  EXPECT_EQ(c.train.batch_size, 64);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 1e-3);
  EXPECT_EQ(c.dataset.n_holdout, 10);
  ASSERT_EQ(c.strategies.size(), 1u);
  EXPECT_EQ(c.strategies[0].kind, StrategyKind::kTopkPrediction);
  EXPECT_EQ(run_config_from_json(to_json(c)).output_dir, c.output_dir);
}

TEST(Config, SweepPointsVaryTheFirstAxisSlowest) {
  const TempDir dir("config_sweep");
  const auto c = run_config_from_json(base_config(dir.path()));
  const auto points = c.sweeps.at(0).points();
  ASSERT_EQ(points.size(), 4u);
  EXPECT_DOUBLE_EQ(points[0].temperature, 0.2);
  EXPECT_EQ(points[0].topk, 10);
  EXPECT_DOUBLE_EQ(points[1].temperature, 0.2);
  EXPECT_EQ(points[1].topk, 50);
  EXPECT_DOUBLE_EQ(points[3].temperature, 0.5);
}

TEST(Strategy, DescriptorRoundTripsAndValidates) {
  for (const char* text :
       {R"({"name":"beam","B":3})", R"({"name":"rra","S":30,"T":0.5})",
        R"({"name":"ra","S":30,"T":1.2,"seed":5})", R"({"name":"temperature","T":1.0})"}) {
    const auto d = strategy_from_json(json::parse(text));
    EXPECT_EQ(to_json(strategy_from_json(to_json(d))), to_json(d)) << text;
  }
  EXPECT_THROW(strategy_from_json(json::parse(R"({"name":"ra","forbid_repeats":true})")), Error);
  EXPECT_THROW(strategy_from_json(json::parse(R"({"name":"beam","B":0})")), Error);
  EXPECT_EQ(strategy_from_json(json::parse(R"({"name":"rra","S":30,"T":0.5})")).name(),
            "rra(S=30,T=0.5,topk=10)");
}

#ifdef SEQREC_CLI_PATH
TEST(Cli, ErrorsAreOneLineWithACategory) {
  const TempDir dir("cli");
  {
    std::ofstream out(dir / "bad.json");
    out << R"({"model": {"num_heads": 0}})";
  }
  const std::string cmd = std::string(SEQREC_CLI_PATH) + " train --config " +
                          (dir / "bad.json").string() + " 2> " + (dir / "err.txt").string();
  const int status = std::system(cmd.c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 2);
  const auto err = slurp(dir / "err.txt");
  EXPECT_EQ(err.rfind("error: config: ", 0), 0u) << err;
  EXPECT_EQ(std::count(err.begin(), err.end(), '\n'), 1);
}
#endif

}  // namespace
}  // namespace seqrec
