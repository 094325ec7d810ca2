// Command-line front end: train, eval, sweep, export, make-split.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "adagcd/adagcd.hpp"

namespace {

using namespace adagcd;

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Config: return 2;
    case ErrorCategory::Numeric: return 3;
    case ErrorCategory::Io: return 4;
    case ErrorCategory::Shape: return 5;
    case ErrorCategory::Contract: return 6;
  }
  return 1;
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
};

int run_train(const TrainArgs& a) {
  const PipelineConfig cfg = load_config(a.config, a.overrides);
  const TrainResult r = train(cfg, [](const StepMetrics& e) { std::cout << e.record("epoch").line() << std::endl; });
  if (r.report) std::cout << r.report->to_record();
  if (!cfg.output.checkpoint.empty()) std::cout << "checkpoint=" << cfg.output.checkpoint << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string split;
  std::string embeddings;
  std::size_t k = 0;
  std::string assignments;
  std::string log;
};

int run_eval(const EvalArgs& a) {
  ClusterReport report;
  std::size_t k = a.k;
  if (!a.embeddings.empty()) {
    if (!a.checkpoint.empty()) throw ConfigError("eval: give either --checkpoint or --embeddings, not both");
    const EmbeddingTable t = read_embeddings(a.embeddings);
    if (k == 0) k = t.split.all_classes().size();
    report = evaluate_embeddings(t.embeddings, t.ids, t.split, k, t.seed);
  } else {
    if (a.checkpoint.empty()) throw ConfigError("eval: --checkpoint or --embeddings is required");
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const auto model = restore_model(ck);
    DataBundle data = a.split.empty() ? load_data(ck.config) : load_dataset(ck.config);
    if (!a.split.empty()) {
      data.split = read_split(a.split);
      for (const auto& [id, c] : data.split.classes) data.locate(id);
    }
    if (k == 0) k = default_k(ck.config, data.split);
    report = evaluate(*model, data, k);
  }
  std::cout << "k=" << k << "\n" << report.to_record();
  if (!a.assignments.empty()) write_assignments_csv(report, a.assignments);
  if (!a.log.empty()) append_line(a.log, report_record(report, k).line());
  return 0;
}

struct SweepArgs {
  std::string config;
  std::string grid;
  std::vector<std::string> overrides;
  std::string out;
};

int run_sweep(const SweepArgs& a) {
  const PipelineConfig cfg = load_config(a.config, a.overrides);
  const auto rows = sweep(cfg, read_grid(a.grid), [](const SweepRow& r) {
    std::cerr << "done: " << label(r.overrides) << " acc_all=" << r.report.acc_all << "\n";
  });
  const std::string table = format_sweep_table(rows);
  std::cout << table;
  if (!a.out.empty()) {
    std::ofstream out(a.out);
    if (!out) throw IoError("cannot write " + a.out);
    out << table;
  }
  return 0;
}

struct ExportArgs {
  std::string checkpoint;
  std::string out;
  std::string split;
};

int run_export(const ExportArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const auto model = restore_model(ck);
  DataBundle data = a.split.empty() ? load_data(ck.config) : load_dataset(ck.config);
  if (!a.split.empty()) {
    data.split = read_split(a.split);
    for (const auto& [id, c] : data.split.classes) data.locate(id);
  }
  export_embeddings(*model, data, a.out);
  std::cout << "rows=" << data.split.size() << " columns=" << model->fusion().output_dim() << "\n";
  return 0;
}

struct SplitArgs {
  std::string index;
  std::string known;
  double frac = 0.5;
  std::uint64_t seed = 0;
  std::string out;
};

int run_make_split(const SplitArgs& a) {
  const DatasetIndex index =
      std::filesystem::is_directory(a.index) ? scan_image_folder(a.index) : read_index_csv(a.index);
  std::vector<std::string> warnings;
  const SplitSpec split = build_split(index.labeled_instances(), KnownClassSpec::parse(a.known), a.frac, a.seed, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  if (a.out.empty())
    std::cout << serialize_split(split);
  else
    write_split(split, a.out);
  std::cerr << "labeled=" << split.labeled_ids.size() << " unlabeled=" << split.unlabeled_ids.size() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive slot attention for generalized category discovery"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("--config", train_args.config, "Config file (key=value lines)")->required();
  train_cmd->add_option("--set", train_args.overrides, "Override, key=value (repeatable)");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Cluster and score a checkpoint or exported embeddings");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint file");
  eval_cmd->add_option("--split", eval_args.split, "Split file (default: the checkpoint's own split)");
  eval_cmd->add_option("--embeddings", eval_args.embeddings, "Exported embedding CSV instead of a checkpoint");
  eval_cmd->add_option("--k", eval_args.k, "Number of clusters (default: class count)");
  eval_cmd->add_option("--assignments", eval_args.assignments, "Write instance_id,cluster_id CSV here");
  eval_cmd->add_option("--log", eval_args.log, "Append the report record to this metrics log");

  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train and evaluate every grid point");
  sweep_cmd->add_option("--config", sweep_args.config, "Base config file")->required();
  sweep_cmd->add_option("--grid", sweep_args.grid, "Grid file, one line of overrides per point")->required();
  sweep_cmd->add_option("--set", sweep_args.overrides, "Override applied to every point");
  sweep_cmd->add_option("--out", sweep_args.out, "Also write the table here");

  ExportArgs export_args;
  auto* export_cmd = app.add_subcommand("export", "Write g_all embeddings as CSV");
  export_cmd->add_option("--checkpoint", export_args.checkpoint, "Checkpoint file")->required();
  export_cmd->add_option("--out", export_args.out, "Output CSV")->required();
  export_cmd->add_option("--split", export_args.split, "Split file (default: the checkpoint's own split)");

  SplitArgs split_args;
  auto* split_cmd = app.add_subcommand("make-split", "Build a labeled/unlabeled split from a dataset index");
  split_cmd->add_option("--index", split_args.index, "Index CSV or class-per-directory image root")->required();
  split_cmd->add_option("--known", split_args.known, "Known classes: fraction (0.5) or list (0,1,2)")->required();
  split_cmd->add_option("--frac", split_args.frac, "Labeled fraction of each known class");
  split_cmd->add_option("--seed", split_args.seed, "Seed");
  split_cmd->add_option("--out", split_args.out, "Output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train_cmd) return run_train(train_args);
    if (*eval_cmd) return run_eval(eval_args);
    if (*sweep_cmd) return run_sweep(sweep_args);
    if (*export_cmd) return run_export(export_args);
    if (*split_cmd) return run_make_split(split_args);
  } catch (const adagcd::Error& e) {
    std::cerr << "error[" << adagcd::to_string(e.category()) << "]: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
