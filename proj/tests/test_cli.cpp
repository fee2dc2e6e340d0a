#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "mater/dataio.hpp"
#include "mater/errors.hpp"
#include "mater/pipeline.hpp"

using namespace mater;
using namespace mater::test;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Eight one-word samples, one per category, with distinct pitch.
void make_corpus(const TempDir& tmp, bool with_audio = true) {
  std::ofstream manifest(tmp.file("manifest.jsonl"));
  const auto& order = category_order();
  for (int c = 0; c < 8; ++c) {
    const std::string id = "s" + std::to_string(c);
    if (with_audio) {
      write_wav(tmp.file(id + ".wav"), sine(100.0 + 30.0 * c, 1.0, 16000, 0.6));
    }
    manifest << R"({"id":")" << id << R"(","wav":")" << id << R"(.wav",)"
             << R"("transcript":"hello world",)"
             << R"("words":[{"token":"hello","start":0.1,"end":0.5},)"
             << R"({"token":"world","start":0.5,"end":0.9}],)"
             << R"("label":")" << order[c] << R"("})" << "\n";
  }
}

RunConfig base_config(const TempDir& tmp) {
  RunConfig cfg;
  cfg.manifest = tmp.file("manifest.jsonl");
  cfg.cache_dir = tmp.file("cache");
  cfg.checkpoint = tmp.file("model.mtrp");
  cfg.predictions = tmp.file("preds.csv");
  cfg.sentiment_dim = 16;
  cfg.dims.lstm_hidden = 8;
  cfg.dims.utt_hidden = 8;
  cfg.dims.ple_bins = 4;
  cfg.dims.pool_attn = 4;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 4;
  cfg.train.learning_rate = 1e-3;
  return cfg;
}

}  // namespace

TEST_CASE("extract / train / predict / evaluate round-trip") {
  TempDir tmp("cli");
  make_corpus(tmp);
  RunConfig cfg = base_config(tmp);
  std::ostringstream log;

  REQUIRE(cmd_extract(cfg, log) == kExitOk);
  for (int c = 0; c < 8; ++c) {
    const std::string id = "s" + std::to_string(c);
    CHECK(std::filesystem::exists(tmp.file("cache/" + id + ".word.mlev")));
    CHECK(std::filesystem::exists(tmp.file("cache/" + id + ".utt.mlev")));
  }
  Eigen::MatrixXf word = read_matrix(tmp.file("cache/s0.word.mlev"));
  CHECK(word.rows() == 2);
  CHECK(word.cols() == kWordDim);
  Eigen::MatrixXf utt = read_matrix(tmp.file("cache/s0.utt.mlev"));
  CHECK(utt.cols() == 16 + kRhythmDim);

  // Re-running produces a byte-identical cache.
  const std::string before = slurp(tmp.file("cache/s0.word.mlev"));
  REQUIRE(cmd_extract(cfg, log) == kExitOk);
  CHECK(slurp(tmp.file("cache/s0.word.mlev")) == before);

  REQUIRE(cmd_train(cfg, log) == kExitOk);
  CHECK(std::filesystem::exists(cfg.checkpoint));

  REQUIRE(cmd_predict(cfg, log) == kExitOk);
  ProbMatrix preds = read_predictions(cfg.predictions);
  REQUIRE(preds.probs.rows() == 8);
  for (int j = 0; j < 8; ++j) {
    CHECK(preds.probs.row(j).sum() == doctest::Approx(1.0).epsilon(1e-6));
  }

  std::ostringstream report;
  REQUIRE(cmd_evaluate(cfg.predictions, cfg.manifest, Task::categorical, "-",
                       report) == kExitOk);
  CHECK(report.str().find("macro_f1") != std::string::npos);
}

TEST_CASE("train checkpoint is deterministic per seed") {
  TempDir tmp("cli");
  make_corpus(tmp);
  RunConfig cfg = base_config(tmp);
  std::ostringstream log;
  REQUIRE(cmd_extract(cfg, log) == kExitOk);
  cfg.history = tmp.file("hist.csv");
  REQUIRE(cmd_train(cfg, log) == kExitOk);
  const std::string first = slurp(cfg.checkpoint);
  REQUIRE(cmd_train(cfg, log) == kExitOk);
  CHECK(slurp(cfg.checkpoint) == first);

  // History has a header plus one row per epoch.
  std::istringstream hist(slurp(cfg.history));
  std::string line;
  int rows = 0;
  std::getline(hist, line);
  CHECK(line == "epoch,loss,metric");
  while (std::getline(hist, line)) ++rows;
  CHECK(rows == cfg.train.epochs);
}

TEST_CASE("missing wav fails the run but processes the other samples") {
  TempDir tmp("cli");
  make_corpus(tmp);
  std::filesystem::remove(tmp.file("s3.wav"));
  RunConfig cfg = base_config(tmp);
  std::ostringstream log;
  CHECK(cmd_extract(cfg, log) == kExitRuntime);
  CHECK(std::filesystem::exists(tmp.file("cache/s0.word.mlev")));
  CHECK(!std::filesystem::exists(tmp.file("cache/s3.word.mlev")));
  CHECK(log.str().find("s3") != std::string::npos);
}

TEST_CASE("train without cache names the extract subcommand") {
  TempDir tmp("cli");
  make_corpus(tmp, false);
  RunConfig cfg = base_config(tmp);
  std::ostringstream log;
  CHECK(cmd_train(cfg, log) == kExitValidation);
  CHECK(log.str().find("extract") != std::string::npos);
}

TEST_CASE("worker count does not change extraction output") {
  TempDir tmp("cli");
  make_corpus(tmp);
  RunConfig cfg = base_config(tmp);
  std::ostringstream log;
  REQUIRE(cmd_extract(cfg, log) == kExitOk);
  std::map<std::string, std::string> serial;
  for (const auto& e : std::filesystem::directory_iterator(tmp.file("cache"))) {
    serial[e.path().filename().string()] = slurp(e.path().string());
  }
  std::filesystem::remove_all(tmp.file("cache"));
  cfg.workers = 4;
  REQUIRE(cmd_extract(cfg, log) == kExitOk);
  for (const auto& [name, bytes] : serial) {
    CHECK(slurp(tmp.file("cache/" + name)) == bytes);
  }
}

TEST_CASE("cmd_ensemble strategies and id checks") {
  TempDir tmp("cli");
  ProbMatrix m;
  m.probs.resize(2, 8);
  m.probs.setConstant(0.05);
  m.probs(0, 0) = 0.65;
  m.probs(1, 6) = 0.65;
  m.sample_ids = {"a", "b"};
  write_predictions(tmp.file("m1.csv"), m);
  write_predictions(tmp.file("m2.csv"), m);
  std::ostringstream log;
  REQUIRE(cmd_ensemble({tmp.file("m1.csv"), tmp.file("m2.csv")},
                       EnsembleStrategy::uncertainty, tmp.file("out.csv"),
                       log) == kExitOk);
  ProbMatrix out = read_predictions(tmp.file("out.csv"));
  CHECK(out.pred_labels == std::vector<int>{0, 6});

  // Single input with uncertainty reduces to that model's rank argmin.
  REQUIRE(cmd_ensemble({tmp.file("m1.csv")}, EnsembleStrategy::uncertainty,
                       tmp.file("single.csv"), log) == kExitOk);
  CHECK(read_predictions(tmp.file("single.csv")).pred_labels ==
        std::vector<int>{0, 6});

  for (auto strat : {EnsembleStrategy::averaging, EnsembleStrategy::majority}) {
    REQUIRE(cmd_ensemble({tmp.file("m1.csv"), tmp.file("m2.csv")}, strat,
                         tmp.file("out2.csv"), log) == kExitOk);
    CHECK(read_predictions(tmp.file("out2.csv")).pred_labels ==
          std::vector<int>{0, 6});
  }

  ProbMatrix other = m;
  other.sample_ids = {"a", "zzz"};
  write_predictions(tmp.file("m3.csv"), other);
  CHECK(cmd_ensemble({tmp.file("m1.csv"), tmp.file("m3.csv")},
                     EnsembleStrategy::uncertainty, tmp.file("bad.csv"),
                     log) == kExitValidation);
}

TEST_CASE("cmd_evaluate on perfect predictions") {
  TempDir tmp("cli");
  make_corpus(tmp, false);
  ProbMatrix perfect;
  perfect.probs = Eigen::MatrixXd::Constant(8, 8, 0.02);
  for (int c = 0; c < 8; ++c) {
    perfect.probs(c, c) = 0.86;
    perfect.sample_ids.push_back("s" + std::to_string(c));
  }
  write_predictions(tmp.file("p.csv"), perfect);
  std::ostringstream log;
  REQUIRE(cmd_evaluate(tmp.file("p.csv"), tmp.file("manifest.jsonl"),
                       Task::categorical, tmp.file("rep.json"), log) == kExitOk);
  const std::string rep = slurp(tmp.file("rep.json"));
  CHECK(rep.find("\"macro_f1\": 100") != std::string::npos);
  CHECK(rep.find("\"accuracy\": 100") != std::string::npos);
}

TEST_CASE("cmd_make_splits writes deterministic id sets") {
  TempDir tmp("cli");
  std::ofstream manifest(tmp.file("manifest.jsonl"));
  const auto& order = category_order();
  for (int c = 0; c < 8; ++c) {
    for (int k = 0; k < 6; ++k) {
      manifest << R"({"id":")" << order[c] << k << R"(","wav":"x.wav","label":")"
               << order[c] << R"("})" << "\n";
    }
  }
  manifest.close();
  SplitSpec spec{2, 3, 5};
  std::ostringstream log;
  REQUIRE(cmd_make_splits(tmp.file("manifest.jsonl"), spec,
                          tmp.file("splits.json"), log) == kExitOk);
  const std::string first = slurp(tmp.file("splits.json"));
  CHECK(first.find("\"sets\"") != std::string::npos);
  REQUIRE(cmd_make_splits(tmp.file("manifest.jsonl"), spec,
                          tmp.file("splits2.json"), log) == kExitOk);
  CHECK(slurp(tmp.file("splits2.json")) == first);

  SplitSpec starving{1, 7, 0};
  CHECK(cmd_make_splits(tmp.file("manifest.jsonl"), starving,
                        tmp.file("bad.json"), log) == kExitValidation);
}

TEST_CASE("load_run_config parses JSON and validates") {
  TempDir tmp("cli");
  {
    std::ofstream out(tmp.file("cfg.json"));
    out << R"({"task":"attributes","use_word":false,"sentiment_dim":32,)"
        << R"("dims":{"lstm_hidden":8,"embedding_mode":"pool"},)"
        << R"("train":{"epochs":7,"learning_rate":0.01,"seed":42},)"
        << R"("manifest":"m.jsonl","workers":3})";
  }
  RunConfig cfg = load_run_config(tmp.file("cfg.json"));
  CHECK(cfg.task == Task::attributes);
  CHECK(!cfg.use_word);
  CHECK(cfg.sentiment_dim == 32);
  CHECK(cfg.dims.lstm_hidden == 8);
  CHECK(cfg.dims.emb_mode == EmbeddingMode::pool);
  CHECK(cfg.train.epochs == 7);
  CHECK(cfg.train.seed == 42);
  CHECK(cfg.train.loss == LossKind::ccc);  // forced for attributes
  CHECK(cfg.workers == 3);

  {
    std::ofstream out(tmp.file("bad.json"));
    out << R"({"use_word":false,"use_utterance":false})";
  }
  CHECK_THROWS_AS(load_run_config(tmp.file("bad.json")), ValidationError);
  {
    std::ofstream out(tmp.file("task.json"));
    out << R"({"task":"nope"})";
  }
  CHECK_THROWS_AS(load_run_config(tmp.file("task.json")), ValidationError);
}
