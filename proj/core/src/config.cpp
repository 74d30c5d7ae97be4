#include "seqrec/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "seqrec/error.hpp"
#include "seqrec/rng.hpp"

namespace seqrec {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& field, const std::string& what) {
  throw Error(ErrorCategory::kConfig, field + " " + what);
}

// Reads the members of one JSON object, remembering which keys were used so
// that leftovers can be reported as unknown fields.
class Section {
 public:
  Section(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) fail(prefix_.empty() ? "config" : prefix_, "must be an object");
  }

  template <class T>
  void read(const char* key, T& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(field(key), "has the wrong type");
    }
  }

  template <class T>
  void read(const char* key, std::optional<T>& out) {
    used_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    T value{};
    read(key, value);
    out = value;
  }

  const json* child(const char* key) {
    used_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string field(const std::string& key) const {
    return prefix_.empty() ? key : prefix_ + "." + key;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) fail(field(key), "is not a known field");
    }
  }

 private:
  const json& j_;
  std::string prefix_;
  std::set<std::string> used_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) return (base / path).lexically_normal();
  return path;
}

FormatSpec format_from_json(const json& j) {
  FormatSpec f;
  Section s(j, "dataset.format");
  std::string delimiter(1, f.delimiter);
  s.read("delimiter", delimiter);
  if (delimiter == "\\t" || delimiter == "tab") delimiter = "\t";
  if (delimiter.size() != 1) fail("dataset.format.delimiter", "must be a single character");
  f.delimiter = delimiter[0];
  s.read("header", f.header);
  s.read("user", f.user_column);
  s.read("item", f.item_column);
  s.read("timestamp", f.time_column);
  s.finish();
  return f;
}

json format_to_json(const FormatSpec& f) {
  return {{"delimiter", f.delimiter == '\t' ? std::string("\\t") : std::string(1, f.delimiter)},
          {"header", f.header},
          {"user", f.user_column},
          {"item", f.item_column},
          {"timestamp", f.time_column}};
}

void apply_parameter(StrategyDescriptor& d, const std::string& parameter, double value) {
  auto as_int = [&](const char* name) {
    const auto v = static_cast<int>(value);
    if (static_cast<double>(v) != value) fail("sweep." + std::string(name), "values must be integers");
    return v;
  };
  if (parameter == "T") d.temperature = value;
  else if (parameter == "topk") d.topk = as_int("topk");
  else if (parameter == "S") d.num_sequences = as_int("S");
  else if (parameter == "B") d.beam_width = as_int("B");
  else if (parameter == "K") d.k = as_int("K");
  else fail("sweep.grid." + parameter, "is not a sweepable parameter (T, topk, S, B, K)");
}

}  // namespace

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kGpt: return "gpt";
    case ModelKind::kMarkov: return "markov";
    case ModelKind::kPopularity: return "popularity";
  }
  return "?";
}

std::vector<StrategyDescriptor> SweepSpec::points() const {
  std::vector<StrategyDescriptor> out;
  std::vector<std::size_t> index(axes.size(), 0);
  if (axes.empty()) return {base};
  for (const auto& axis : axes) {
    if (axis.values.empty()) return {};
  }
  while (true) {
    StrategyDescriptor d = base;
    d.label.clear();
    for (std::size_t a = 0; a < axes.size(); ++a) {
      apply_parameter(d, axes[a].parameter, axes[a].values[index[a]]);
    }
    out.push_back(d);
    std::size_t a = axes.size();
    while (a > 0) {
      --a;
      if (++index[a] < axes[a].values.size()) break;
      index[a] = 0;
      if (a == 0) return out;
    }
  }
}

std::filesystem::path RunConfig::bundle_dir() const {
  return dataset.bundle_dir ? *dataset.bundle_dir : output_dir / "dataset";
}

std::filesystem::path RunConfig::checkpoint_path() const {
  return checkpoint ? *checkpoint : output_dir / "model.ckpt";
}

std::uint64_t RunConfig::stage_seed(std::string_view stage) const {
  return derive_seed(seed, stage);
}

void RunConfig::validate() const {
  if (workers < 1) fail("workers", "must be >= 1");
  if (dataset.preprocess.min_user_len < 1) fail("dataset.min_user_len", "must be >= 1");
  if (dataset.preprocess.min_item_count < 1) fail("dataset.min_item_count", "must be >= 1");
  if (dataset.n_holdout < 1) fail("dataset.n_holdout", "must be >= 1");
  if (!(dataset.val_fraction >= 0.0 && dataset.val_fraction <= 1.0)) {
    fail("dataset.val_fraction", "must lie in [0, 1]");
  }
  ModelConfig probe = model;
  probe.item_count = 1;
  probe.validate();
  train.validate();
  for (const auto& s : strategies) s.validate();
  std::set<std::string> names;
  for (const auto& s : strategies) {
    if (!names.insert(s.name()).second) fail("strategies", "contains '" + s.name() + "' twice");
  }
  std::set<std::string> sweep_names;
  for (const auto& sweep : sweeps) {
    if (!sweep_names.insert(sweep.name).second) fail("sweeps", "repeat the name '" + sweep.name + "'");
    for (const auto& axis : sweep.axes) {
      if (axis.values.empty()) fail("sweeps." + sweep.name + ".grid." + axis.parameter, "is empty");
      std::set<double> seen(axis.values.begin(), axis.values.end());
      if (seen.size() != axis.values.size()) {
        fail("sweeps." + sweep.name + ".grid." + axis.parameter, "has duplicate values");
      }
    }
    for (const auto& point : sweep.points()) point.validate();
  }
  for (int s : timing.num_sequences) {
    if (s < 1) fail("timing.S", "values must be >= 1");
  }
  if (max_eval_users && *max_eval_users == 0) fail("evaluation.max_users", "must be positive");
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  Section s(j, "train");
  s.read("batch_size", c.batch_size);
  s.read("learning_rate", c.learning_rate);
  s.read("beta1", c.beta1);
  s.read("beta2", c.beta2);
  s.read("epsilon", c.epsilon);
  s.read("max_epochs", c.max_epochs);
  s.read("patience", c.patience);
  s.read("eval_k", c.eval_k);
  s.read("validation_forbid_history", c.validation_forbid_history);
  s.finish();
  c.validate();
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"eval_k", c.eval_k},
          {"validation_forbid_history", c.validation_forbid_history}};
}

RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  RunConfig c;
  Section root(j, "");
  root.read("seed", c.seed);
  root.read("workers", c.workers);
  std::string output_dir = c.output_dir.string();
  root.read("output_dir", output_dir);
  c.output_dir = resolve(base_dir, output_dir);

  if (const json* d = root.child("dataset")) {
    Section s(*d, "dataset");
    std::string path;
    s.read("path", path);
    if (!path.empty()) c.dataset.path = resolve(base_dir, path);
    if (const json* f = s.child("format")) c.dataset.format = format_from_json(*f);
    s.read("min_user_len", c.dataset.preprocess.min_user_len);
    s.read("min_item_count", c.dataset.preprocess.min_item_count);
    std::string mode = "fixpoint";
    s.read("filter_mode", mode);
    if (mode == "fixpoint") c.dataset.preprocess.filter_mode = FilterMode::kFixpoint;
    else if (mode == "one_pass") c.dataset.preprocess.filter_mode = FilterMode::kOnePass;
    else fail("dataset.filter_mode", "must be 'fixpoint' or 'one_pass'");
    s.read("deduplicate", c.dataset.preprocess.deduplicate);
    s.read("n_holdout", c.dataset.n_holdout);
    s.read("val_fraction", c.dataset.val_fraction);
    std::optional<std::string> bundle;
    s.read("bundle_dir", bundle);
    if (bundle) c.dataset.bundle_dir = resolve(base_dir, *bundle);
    s.finish();
  }

  if (const json* m = root.child("model")) {
    Section s(*m, "model");
    std::string kind = "gpt";
    s.read("kind", kind);
    if (kind == "gpt") c.model_kind = ModelKind::kGpt;
    else if (kind == "markov") c.model_kind = ModelKind::kMarkov;
    else if (kind == "popularity") c.model_kind = ModelKind::kPopularity;
    else fail("model.kind", "must be 'gpt', 'markov' or 'popularity'");
    s.read("hidden_size", c.model.hidden_size);
    s.read("num_blocks", c.model.num_blocks);
    s.read("num_heads", c.model.num_heads);
    s.read("dropout", c.model.dropout);
    s.read("max_seq_len", c.model.max_seq_len);
    s.finish();
  }

  if (const json* t = root.child("train")) c.train = train_config_from_json(*t, c.train);

  std::optional<std::string> checkpoint;
  root.read("checkpoint", checkpoint);
  if (checkpoint) c.checkpoint = resolve(base_dir, *checkpoint);

  if (const json* e = root.child("evaluation")) {
    Section s(*e, "evaluation");
    std::string split_name(to_string(c.split));
    s.read("split", split_name);
    try {
      c.split = partition_from_string(split_name);
    } catch (const Error&) {
      fail("evaluation.split", "must be 'validation' or 'test'");
    }
    s.read("max_users", c.max_eval_users);
    s.finish();
  }

  if (const json* list = root.child("strategies")) {
    if (!list->is_array()) fail("strategies", "must be an array");
    for (const auto& item : *list) c.strategies.push_back(strategy_from_json(item));
  } else {
    c.strategies.push_back(StrategyDescriptor{});
  }

  if (const json* list = root.child("sweeps")) {
    if (!list->is_array()) fail("sweeps", "must be an array");
    for (const auto& item : *list) {
      Section s(item, "sweeps[]");
      SweepSpec sweep;
      s.read("name", sweep.name);
      if (sweep.name.empty()) fail("sweeps[].name", "is required");
      const json* base = s.child("strategy");
      if (!base) fail("sweeps." + sweep.name + ".strategy", "is required");
      sweep.base = strategy_from_json(*base);
      const json* grid = s.child("grid");
      if (!grid || !grid->is_object()) fail("sweeps." + sweep.name + ".grid", "must be an object");
      for (const auto& [param, values] : grid->items()) {
        SweepAxis axis{param, {}};
        try {
          axis.values = values.get<std::vector<double>>();
        } catch (const json::exception&) {
          fail("sweeps." + sweep.name + ".grid." + param, "must be an array of numbers");
        }
        sweep.axes.push_back(std::move(axis));
      }
      s.finish();
      c.sweeps.push_back(std::move(sweep));
    }
  }

  if (const json* t = root.child("timing")) {
    Section s(*t, "timing");
    if (const json* list = s.child("strategies")) {
      if (!list->is_array()) fail("timing.strategies", "must be an array");
      for (const auto& item : *list) c.timing.strategies.push_back(strategy_from_json(item));
    }
    s.read("S", c.timing.num_sequences);
    s.read("max_users", c.timing.max_users);
    s.finish();
  }
  if (c.timing.strategies.empty()) {
    StrategyDescriptor greedy;
    greedy.kind = StrategyKind::kGreedy;
    StrategyDescriptor rra;
    rra.kind = StrategyKind::kRra;
    StrategyDescriptor ra;
    ra.kind = StrategyKind::kRa;
    ra.constraints.forbid_repeats = false;
    c.timing.strategies = {greedy, rra, ra};
  }

  root.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::kIo, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::kConfig, "config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

json to_json(const RunConfig& c) {
  json strategies = json::array();
  for (const auto& s : c.strategies) strategies.push_back(to_json(s));
  json sweeps = json::array();
  for (const auto& sweep : c.sweeps) {
    json grid = json::object();
    for (const auto& axis : sweep.axes) grid[axis.parameter] = axis.values;
    sweeps.push_back({{"name", sweep.name}, {"strategy", to_json(sweep.base)}, {"grid", grid}});
  }
  json timing_strategies = json::array();
  for (const auto& s : c.timing.strategies) timing_strategies.push_back(to_json(s));

  json dataset{{"path", c.dataset.path.string()},
               {"format", format_to_json(c.dataset.format)},
               {"min_user_len", c.dataset.preprocess.min_user_len},
               {"min_item_count", c.dataset.preprocess.min_item_count},
               {"filter_mode", c.dataset.preprocess.filter_mode == FilterMode::kFixpoint
                                   ? "fixpoint"
                                   : "one_pass"},
               {"deduplicate", c.dataset.preprocess.deduplicate},
               {"n_holdout", c.dataset.n_holdout},
               {"val_fraction", c.dataset.val_fraction}};
  if (c.dataset.bundle_dir) dataset["bundle_dir"] = c.dataset.bundle_dir->string();

  json out{{"seed", c.seed},
           {"workers", c.workers},
           {"output_dir", c.output_dir.string()},
           {"dataset", dataset},
           {"model",
            {{"kind", to_string(c.model_kind)},
             {"hidden_size", c.model.hidden_size},
             {"num_blocks", c.model.num_blocks},
             {"num_heads", c.model.num_heads},
             {"dropout", c.model.dropout},
             {"max_seq_len", c.model.max_seq_len}}},
           {"train", to_json(c.train)},
           {"evaluation", {{"split", to_string(c.split)}}},
           {"strategies", strategies},
           {"sweeps", sweeps},
           {"timing",
            {{"strategies", timing_strategies},
             {"S", c.timing.num_sequences},
             {"max_users", c.timing.max_users}}}};
  if (c.checkpoint) out["checkpoint"] = c.checkpoint->string();
  if (c.max_eval_users) out["evaluation"]["max_users"] = *c.max_eval_users;
  return out;
}

}  // namespace seqrec
