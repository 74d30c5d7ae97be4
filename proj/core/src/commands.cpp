#include "seqrec/commands.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "seqrec/baselines.hpp"
#include "seqrec/checkpoint.hpp"
#include "seqrec/error.hpp"

namespace seqrec {

namespace {

using nlohmann::json;

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCategory::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCategory::kIo, "failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

BundleInfo bundle_info(const RunConfig& config) {
  BundleInfo info;
  info.options = config.dataset.preprocess;
  info.n_holdout = config.dataset.n_holdout;
  info.val_fraction = config.dataset.val_fraction;
  info.seed = config.seed;
  info.source = config.dataset.path.filename().string();
  return info;
}

void write_report(const std::filesystem::path& dir, const EvalReport& report) {
  write_text(dir / "report.json", report_dump(report));
  write_text(dir / "metrics.csv", metrics_table(report));
  write_text(dir / "hitrate.csv", hitrate_table(report));
  write_text(dir / "timing.json", timing_json(report).dump(2) + "\n");
}

EvaluationOptions eval_options(const RunConfig& config) {
  EvaluationOptions options;
  options.seed = config.seed;
  options.workers = config.workers;
  options.max_users = config.max_eval_users;
  return options;
}

std::string fixed(double x, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << x;
  return s.str();
}

void print_report(const EvalReport& report, std::ostream& log) {
  log << "split " << report.split << ", " << report.users.size() << " users\n";
  std::size_t width = 8;
  for (const auto& s : report.strategies) width = std::max(width, s.descriptor.name().size());
  log << std::left << std::setw(static_cast<int>(width)) << "strategy" << std::right
      << "  NDCG@" << report.k << "  Recall@" << report.k << "  MAP@" << report.k << "  p(NDCG)\n";
  for (const auto& s : report.strategies) {
    log << std::left << std::setw(static_cast<int>(width)) << s.descriptor.name() << std::right
        << "  " << std::setw(7) << fixed(s.ndcg, 4) << "  " << std::setw(9) << fixed(s.recall, 4)
        << "  " << std::setw(6) << fixed(s.map, 4) << "  "
        << (s.vs_baseline ? fixed(s.vs_baseline->ndcg.p_value, 4) : std::string("-")) << '\n';
  }
}

}  // namespace

std::string stats_table(const DatasetStats& stats, const std::string& name) {
  char density[32];
  std::snprintf(density, sizeof density, "%.2f%%", stats.density * 100.0);
  std::ostringstream out;
  out << std::left << std::setw(16) << "Dataset" << std::right << std::setw(10) << "Users"
      << std::setw(10) << "Items" << std::setw(14) << "Interactions" << std::setw(12)
      << "Avg. length" << std::setw(10) << "Density" << '\n';
  out << std::left << std::setw(16) << name << std::right << std::setw(10) << stats.users
      << std::setw(10) << stats.items << std::setw(14) << stats.interactions << std::setw(12)
      << fixed(stats.avg_length, 1) << std::setw(10) << density << '\n';
  return out.str();
}

PreprocessResult cmd_preprocess(const RunConfig& config, std::ostream& log) {
  if (config.dataset.path.empty()) {
    throw Error(ErrorCategory::kConfig, "dataset.path is required for preprocess");
  }
  if (!std::filesystem::exists(config.dataset.path)) {
    throw Error(ErrorCategory::kIo, "dataset file not found: " + config.dataset.path.string());
  }
  const auto events = ingest(config.dataset.path, config.dataset.format);
  const auto log_data = preprocess(events, config.dataset.preprocess);

  PreprocessResult result;
  result.stats = log_data.stats();
  result.bundle = config.bundle_dir();
  const BundleInfo info = bundle_info(config);
  const std::string metadata = bundle_metadata(log_data, info);
  const bool complete = std::filesystem::exists(result.bundle / "offsets.bin") &&
                        std::filesystem::exists(result.bundle / "items.bin") &&
                        std::filesystem::exists(result.bundle / "users.txt") &&
                        std::filesystem::exists(result.bundle / "items.txt");
  if (complete && read_text(result.bundle / "metadata.json") == metadata) {
    const auto existing = read_bundle(result.bundle);
    result.unchanged = existing.offsets() == log_data.offsets() &&
                       existing.items() == log_data.items() &&
                       existing.catalog().item_names() == log_data.catalog().item_names() &&
                       existing.catalog().user_names() == log_data.catalog().user_names();
  }
  if (!result.unchanged) write_bundle(result.bundle, log_data, info);

  log << stats_table(result.stats, info.source);
  log << (result.unchanged ? "bundle up to date: " : "wrote bundle: ") << result.bundle.string()
      << '\n';
  return result;
}

SplitDataset load_split(const RunConfig& config) {
  return split(read_bundle(config.bundle_dir()), config.dataset.n_holdout,
               config.dataset.val_fraction, config.seed);
}

std::optional<TrainResult> cmd_train(const RunConfig& config, std::ostream& log) {
  if (config.model_kind != ModelKind::kGpt) {
    log << "model.kind '" << to_string(config.model_kind) << "' has no training stage\n";
    return std::nullopt;
  }
  const SplitDataset data = load_split(config);
  TrainConfig tcfg = config.train;
  tcfg.seed = config.stage_seed("train");
  tcfg.workers = config.workers;

  TrainResult result = train(data, config.model, tcfg, [&](const EpochRecord& r) {
    log << "epoch " << std::setw(3) << r.epoch << "  loss " << fixed(r.train_loss, 4)
        << "  val NDCG@" << tcfg.eval_k << " " << fixed(r.validation_ndcg, 4)
        << (r.improved ? "  *" : "") << '\n';
  });

  json epochs = json::array();
  std::ostringstream csv;
  csv.precision(17);
  csv << "epoch,train_loss,validation_ndcg,improved\n";
  for (const auto& r : result.history) {
    epochs.push_back({{"epoch", r.epoch},
                      {"train_loss", r.train_loss},
                      {"validation_ndcg", r.validation_ndcg},
                      {"improved", r.improved}});
    csv << r.epoch << ',' << r.train_loss << ',' << r.validation_ndcg << ',' << r.improved
        << '\n';
  }
  const json history{{"best_epoch", result.best_epoch},
                     {"early_stopped", result.early_stopped},
                     {"metric", "validation NDCG@" + std::to_string(tcfg.eval_k)},
                     {"epochs", epochs}};
  write_text(config.output_dir / "train_history.json", history.dump(2) + "\n");
  write_text(config.output_dir / "train_history.csv", csv.str());

  const json extra{{"seed", config.seed},
                   {"train", to_json(config.train)},
                   {"best_epoch", result.best_epoch},
                   {"epochs_run", result.history.size()}};
  std::filesystem::create_directories(config.checkpoint_path().parent_path());
  save_checkpoint(config.checkpoint_path(), result.params, extra);
  log << "best epoch " << result.best_epoch << ", checkpoint " << config.checkpoint_path().string()
      << '\n';
  return result;
}

std::unique_ptr<NextItemModel> load_model(const RunConfig& config, const SplitDataset& data) {
  if (config.model_kind == ModelKind::kGpt) {
    const auto path = config.checkpoint_path();
    if (!std::filesystem::exists(path)) {
      throw Error(ErrorCategory::kIo, "checkpoint not found: " + path.string());
    }
    auto loaded = load_checkpoint(path);
    if (loaded.params.config.item_count != data.item_count()) {
      throw Error(ErrorCategory::kCheckpoint,
                  "checkpoint catalog has " + std::to_string(loaded.params.config.item_count) +
                      " items, dataset has " + std::to_string(data.item_count()));
    }
    return std::make_unique<Transformer>(std::move(loaded.params));
  }
  std::vector<std::vector<ItemId>> sequences;
  sequences.reserve(static_cast<std::size_t>(data.user_count()));
  for (std::int32_t u = 0; u < data.user_count(); ++u) {
    const auto seq = data.train(u);
    sequences.emplace_back(seq.begin(), seq.end());
  }
  if (config.model_kind == ModelKind::kMarkov) {
    return std::make_unique<MarkovModel>(sequences, data.item_count());
  }
  return std::make_unique<PopularityModel>(sequences, data.item_count());
}

EvalReport cmd_evaluate(const RunConfig& config, std::ostream& log) {
  const SplitDataset data = load_split(config);
  const auto model = load_model(config, data);
  const EvalReport report =
      evaluate(*model, data, config.split, config.strategies, eval_options(config));
  const auto dir = config.output_dir / ("eval_" + std::string(to_string(config.split)));
  write_report(dir, report);
  print_report(report, log);
  log << "wrote " << (dir / "report.json").string() << '\n';
  return report;
}

SweepResult cmd_sweep(const RunConfig& config, std::ostream& log) {
  if (config.sweeps.empty()) throw Error(ErrorCategory::kConfig, "sweeps: no sweep configured");
  const SplitDataset data = load_split(config);
  const auto model = load_model(config, data);
  const auto root = config.output_dir / ("sweep_" + std::string(to_string(config.split)));

  SweepResult result;
  std::ostringstream csv;
  csv.precision(17);
  csv << "sweep,point,strategy,K,B,T,topk,S,ndcg,recall,map\n";
  json listing = json::array();
  for (const auto& sweep : config.sweeps) {
    const auto points = sweep.points();
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto& strategy = points[i];
      const std::vector<StrategyDescriptor> one{strategy};
      const EvalReport report = evaluate(*model, data, config.split, one, eval_options(config));
      char name[32];
      std::snprintf(name, sizeof name, "point_%03zu", i);
      const auto dir = root / sweep.name / name;
      write_report(dir, report);

      const auto& sr = report.strategies.front();
      SweepPoint point{sweep.name, i, strategy, dir / "report.json", sr.ndcg, sr.recall, sr.map};
      csv << sweep.name << ',' << i << ",\"" << strategy.name() << "\"," << strategy.k << ','
          << strategy.beam_width << ',' << strategy.temperature << ',' << strategy.topk << ','
          << strategy.num_sequences << ',' << sr.ndcg << ',' << sr.recall << ',' << sr.map << '\n';
      listing.push_back({{"sweep", sweep.name},
                         {"point", i},
                         {"strategy", to_json(strategy)},
                         {"report", std::filesystem::relative(point.report, root).generic_string()},
                         {"ndcg", sr.ndcg},
                         {"recall", sr.recall},
                         {"map", sr.map}});
      log << sweep.name << " " << strategy.name() << "  NDCG@" << strategy.k << " "
          << fixed(sr.ndcg, 4) << '\n';
      result.points.push_back(std::move(point));
    }
  }
  write_text(root / "sweep.csv", csv.str());
  write_text(root / "sweep.json", json{{"points", listing}}.dump(2) + "\n");
  return result;
}

std::vector<TimingRow> cmd_timing(const RunConfig& config, std::ostream& log) {
  const SplitDataset data = load_split(config);
  const auto model = load_model(config, data);
  EvaluationOptions options = eval_options(config);
  options.workers = 1;
  options.max_users = config.timing.max_users;

  std::vector<TimingRow> rows;
  auto run = [&](StrategyDescriptor strategy, int s) {
    if (s > 0) strategy.num_sequences = s;
    strategy.label.clear();
    const std::vector<StrategyDescriptor> one{strategy};
    const auto report = evaluate(*model, data, config.split, one, options);
    const auto& sr = report.strategies.front();
    rows.push_back({strategy.name(), s, report.users.size(), sr.mean_user_seconds,
                    sr.total_seconds});
    log << std::left << std::setw(28) << rows.back().strategy << std::right << "  "
        << fixed(sr.mean_user_seconds * 1e3, 3) << " ms/user\n";
  };
  for (const auto& strategy : config.timing.strategies) {
    const bool multi = strategy.kind == StrategyKind::kRra || strategy.kind == StrategyKind::kRa;
    if (!multi) {
      run(strategy, 0);
      continue;
    }
    for (int s : config.timing.num_sequences) run(strategy, s);
  }

  std::ostringstream csv;
  csv.precision(9);
  csv << "strategy,S,users,mean_user_seconds,total_seconds\n";
  for (const auto& r : rows) {
    csv << '"' << r.strategy << "\"," << r.num_sequences << ',' << r.users << ','
        << r.mean_user_seconds << ',' << r.total_seconds << '\n';
  }
  write_text(config.output_dir / "timing" / "timing.csv", csv.str());
  return rows;
}

}  // namespace seqrec
