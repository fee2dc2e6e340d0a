#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "mater/dataio.hpp"
#include "mater/train.hpp"

namespace mater {

// Exit codes shared by every subcommand.
constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct RunConfig {
  Task task = Task::categorical;
  // Feature-level ablation flags; disabled levels feed zero slots.
  bool use_word = true;
  bool use_utterance = true;
  std::vector<std::string> embedding_names;

  ModelDims dims;
  TrainConfig train;
  int sentiment_dim = kDefaultSentimentDim;

  std::string manifest;
  std::string cache_dir;
  std::string checkpoint;
  std::string predictions;
  std::string history;
  std::string syntax_sidecar;
  std::string sentiment_sidecar;
  int workers = 1;
};

// JSON config file; missing keys keep their defaults.
RunConfig load_run_config(const std::string& path);

// Feature extraction: one <id>.word.mlev and <id>.utt.mlev per sample.
// Failing samples are reported and skipped; nonzero exit on any failure.
int cmd_extract(const RunConfig& cfg, std::ostream& log);

int cmd_train(const RunConfig& cfg, std::ostream& log);

int cmd_predict(const RunConfig& cfg, std::ostream& log);

enum class EnsembleStrategy { uncertainty, averaging, majority };

int cmd_ensemble(const std::vector<std::string>& prediction_files,
                 EnsembleStrategy strategy, const std::string& out_path,
                 std::ostream& log);

int cmd_evaluate(const std::string& predictions_path,
                 const std::string& manifest_path, Task task,
                 const std::string& report_path, std::ostream& log);

int cmd_make_splits(const std::string& manifest_path, const SplitSpec& spec,
                    const std::string& out_path, std::ostream& log);

}  // namespace mater
