// mater - multi-level speech emotion pipeline CLI.

#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mater/errors.hpp"
#include "mater/pipeline.hpp"

namespace {

struct CommonOpts {
  std::string config;
  std::string manifest;
  std::string cache_dir;
  std::string checkpoint;
  std::string predictions;
  std::string history;
  std::optional<unsigned long long> seed;
  std::optional<int> epochs;
  std::optional<int> workers;
};

// Config file first, then flags override.
mater::RunConfig resolve(const CommonOpts& o) {
  mater::RunConfig cfg;
  if (!o.config.empty()) cfg = mater::load_run_config(o.config);
  if (!o.manifest.empty()) cfg.manifest = o.manifest;
  if (!o.cache_dir.empty()) cfg.cache_dir = o.cache_dir;
  if (!o.checkpoint.empty()) cfg.checkpoint = o.checkpoint;
  if (!o.predictions.empty()) cfg.predictions = o.predictions;
  if (!o.history.empty()) cfg.history = o.history;
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.workers) cfg.workers = *o.workers;
  return cfg;
}

void add_common(CLI::App* sub, CommonOpts& o) {
  sub->add_option("-c,--config", o.config, "JSON run configuration");
  sub->add_option("--manifest", o.manifest, "JSONL sample manifest");
  sub->add_option("--cache-dir", o.cache_dir, "feature cache directory");
  sub->add_option("--checkpoint", o.checkpoint, "model checkpoint path");
  sub->add_option("--predictions", o.predictions, "predictions CSV path");
  sub->add_option("--seed", o.seed, "training seed override");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mater: multi-level acoustic/text emotion recognition"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string strategy = "uncertainty";
  std::string out_path;
  std::string report_path;
  std::string task_name = "categorical";
  std::vector<std::string> inputs;
  mater::SplitSpec split;

  auto* extract = app.add_subcommand("extract", "Extract word/utterance features");
  add_common(extract, opts);
  extract->add_option("--workers", opts.workers, "parallel extraction threads");

  auto* train = app.add_subcommand("train", "Train a model");
  add_common(train, opts);
  train->add_option("--epochs", opts.epochs, "epoch count override");
  train->add_option("--history", opts.history, "per-epoch loss CSV");

  auto* predict = app.add_subcommand("predict", "Run inference");
  add_common(predict, opts);

  auto* ensemble = app.add_subcommand("ensemble", "Combine prediction files");
  ensemble->add_option("inputs", inputs, "prediction CSVs")->required();
  ensemble->add_option("-o,--output", out_path, "output CSV")->required();
  ensemble->add_option("--strategy", strategy, "uncertainty|averaging|majority")
      ->check(CLI::IsMember({"uncertainty", "averaging", "majority"}));

  auto* evaluate = app.add_subcommand("evaluate", "Score predictions");
  evaluate->add_option("--predictions", opts.predictions, "predictions CSV")
      ->required();
  evaluate->add_option("--manifest", opts.manifest, "gold manifest")->required();
  evaluate->add_option("--task", task_name, "categorical|attributes")
      ->check(CLI::IsMember({"categorical", "attributes"}));
  evaluate->add_option("--report", report_path, "JSON report path (- = stdout)");

  auto* make_splits = app.add_subcommand("make-splits",
                                         "Build balanced evaluation sets");
  make_splits->add_option("--manifest", opts.manifest, "gold manifest")
      ->required();
  make_splits->add_option("-o,--output", out_path, "splits JSON")->required();
  make_splits->add_option("--sets", split.n_sets, "number of sets");
  make_splits->add_option("--per-class", split.per_class, "samples per class");
  make_splits->add_option("--seed", split.seed, "shuffle seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (extract->parsed()) return mater::cmd_extract(resolve(opts), std::cerr);
    if (train->parsed()) return mater::cmd_train(resolve(opts), std::cerr);
    if (predict->parsed()) return mater::cmd_predict(resolve(opts), std::cerr);
    if (ensemble->parsed()) {
      auto s = mater::EnsembleStrategy::uncertainty;
      if (strategy == "averaging") s = mater::EnsembleStrategy::averaging;
      if (strategy == "majority") s = mater::EnsembleStrategy::majority;
      return mater::cmd_ensemble(inputs, s, out_path, std::cerr);
    }
    if (evaluate->parsed()) {
      const auto task = task_name == "attributes" ? mater::Task::attributes
                                                  : mater::Task::categorical;
      return mater::cmd_evaluate(opts.predictions, opts.manifest, task,
                                 report_path, std::cerr);
    }
    if (make_splits->parsed()) {
      return mater::cmd_make_splits(opts.manifest, split, out_path, std::cerr);
    }
  } catch (const mater::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return mater::kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return mater::kExitRuntime;
  }
  return mater::kExitOk;
}
