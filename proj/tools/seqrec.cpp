// seqrec: command-line runner for preprocessing, training, evaluation, sweeps
// and timing of generative sequential recommenders.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "seqrec/commands.hpp"
#include "seqrec/error.hpp"
#include "seqrec/synthetic.hpp"

namespace {

int exit_code(seqrec::ErrorCategory category) {
  switch (category) {
    case seqrec::ErrorCategory::kConfig: return 2;
    case seqrec::ErrorCategory::kIo: return 3;
    case seqrec::ErrorCategory::kIngest: return 4;
    case seqrec::ErrorCategory::kData: return 5;
    case seqrec::ErrorCategory::kModel: return 6;
    case seqrec::ErrorCategory::kParameter: return 7;
    case seqrec::ErrorCategory::kCheckpoint: return 8;
    case seqrec::ErrorCategory::kContract: return 9;
  }
  return 1;
}

void report_error(std::string_view category, std::string message) {
  for (char& c : message) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::cerr << "error: " << category << ": " << message << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generative sequential recommendation experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> split_name;
  std::optional<std::string> checkpoint;

  auto add_run_flags = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Run config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", out_dir, "Output directory (overrides output_dir)");
    cmd->add_option("--seed", seed, "Top-level seed (overrides seed)");
    cmd->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
  };
  auto add_eval_flags = [&](CLI::App* cmd) {
    cmd->add_option("--split", split_name, "Evaluation split")
        ->check(CLI::IsMember({"validation", "test"}));
    cmd->add_option("--checkpoint", checkpoint, "Checkpoint (overrides checkpoint)");
  };

  auto* preprocess = app.add_subcommand("preprocess", "Filter raw events and write a dataset bundle");
  add_run_flags(preprocess);
  auto* train = app.add_subcommand("train", "Train the model with early stopping");
  add_run_flags(train);
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate every configured strategy");
  add_run_flags(evaluate);
  add_eval_flags(evaluate);
  auto* sweep = app.add_subcommand("sweep", "Evaluate every point of the configured grids");
  add_run_flags(sweep);
  add_eval_flags(sweep);
  auto* timing = app.add_subcommand("timing", "Measure per-user generation latency");
  add_run_flags(timing);
  add_eval_flags(timing);

  auto* synth = app.add_subcommand("synth", "Write a synthetic interaction file");
  std::string synth_kind = "mixture";
  std::string synth_out;
  seqrec::MarkovMixtureSpec mixture;
  int cycle_items = 20;
  int cycle_length = 40;
  std::uint64_t synth_seed = 0;
  synth->add_option("--kind", synth_kind, "cycle or mixture")->check(CLI::IsMember({"cycle", "mixture"}));
  synth->add_option("--out", synth_out, "CSV file to write")->required();
  synth->add_option("--users", mixture.users, "Number of users");
  synth->add_option("--items", mixture.item_count, "Catalog size (mixture)");
  synth->add_option("--behaviors", mixture.behaviors, "Hidden behaviors (mixture)");
  synth->add_option("--min-length", mixture.min_length, "Shortest sequence (mixture)");
  synth->add_option("--max-length", mixture.max_length, "Longest sequence (mixture)");
  synth->add_option("--noise", mixture.noise, "Uniform jump probability (mixture)");
  synth->add_option("--cycle-items", cycle_items, "Catalog size (cycle)");
  synth->add_option("--cycle-length", cycle_length, "Sequence length (cycle)");
  synth->add_option("--seed", synth_seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return 64;
  }

  try {
    if (synth->parsed()) {
      mixture.seed = synth_seed;
      const auto sequences =
          synth_kind == "cycle"
              ? seqrec::cycle_sequences(mixture.users, cycle_items, cycle_length, synth_seed)
              : seqrec::markov_mixture_sequences(mixture);
      seqrec::write_events_csv(synth_out, sequences);
      std::cout << "wrote " << sequences.size() << " users to " << synth_out << '\n';
      return 0;
    }

    seqrec::RunConfig config = seqrec::load_run_config(config_path);
    if (out_dir) config.output_dir = *out_dir;
    if (seed) config.seed = *seed;
    if (workers) config.workers = *workers;
    if (split_name) config.split = seqrec::partition_from_string(*split_name);
    if (checkpoint) config.checkpoint = *checkpoint;
    config.validate();

    if (preprocess->parsed()) seqrec::cmd_preprocess(config, std::cout);
    else if (train->parsed()) seqrec::cmd_train(config, std::cout);
    else if (evaluate->parsed()) seqrec::cmd_evaluate(config, std::cout);
    else if (sweep->parsed()) seqrec::cmd_sweep(config, std::cout);
    else if (timing->parsed()) seqrec::cmd_timing(config, std::cout);
  } catch (const seqrec::Error& e) {
    report_error(seqrec::to_string(e.category()), e.what());
    return exit_code(e.category());
  } catch (const std::filesystem::filesystem_error& e) {
    report_error("io", e.what());
    return 3;
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return 1;
  }
  return 0;
}
