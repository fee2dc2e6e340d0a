#include "mater/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <ostream>
#include <thread>

#include "mater/errors.hpp"
#include "mater/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mater {
namespace {

int run_guarded(std::ostream& log, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ValidationError& e) {
    log << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

FeatureConfig feature_config(const RunConfig& cfg) {
  FeatureConfig fc;
  fc.sentiment.dim = cfg.sentiment_dim;
  if (!cfg.syntax_sidecar.empty()) {
    fc.syntax_sidecar = load_syntax_sidecar(cfg.syntax_sidecar);
  }
  if (!cfg.sentiment_sidecar.empty()) {
    fc.sentiment_sidecar = load_sentiment_sidecar(cfg.sentiment_sidecar);
  }
  return fc;
}

std::string word_cache_path(const RunConfig& cfg, const std::string& id) {
  return (fs::path(cfg.cache_dir) / (id + ".word.mlev")).string();
}

std::string utt_cache_path(const RunConfig& cfg, const std::string& id) {
  return (fs::path(cfg.cache_dir) / (id + ".utt.mlev")).string();
}

// Loads one sample's cached features plus manifest-referenced embeddings,
// honoring the ablation flags.
FeatureBundle load_cached_bundle(const RunConfig& cfg, const Sample& sample) {
  FeatureBundle b;
  if (cfg.use_word) {
    const std::string path = word_cache_path(cfg, sample.id);
    if (!fs::exists(path)) {
      throw ValidationError("missing cached features for sample '" + sample.id +
                            "'; run the extract subcommand first");
    }
    b.word_seq = read_matrix(path).cast<double>();
  }
  if (cfg.use_utterance) {
    const std::string path = utt_cache_path(cfg, sample.id);
    if (!fs::exists(path)) {
      throw ValidationError("missing cached features for sample '" + sample.id +
                            "'; run the extract subcommand first");
    }
    const Mat m = read_matrix(path).cast<double>();
    b.utterance = m.row(0).transpose();
  }
  for (const std::string& name : cfg.embedding_names) {
    auto it = sample.embeddings.find(name);
    if (it != sample.embeddings.end()) {
      b.embeddings[name] = read_matrix(it->second).cast<double>();
    }
  }
  return b;
}

ModelDims resolve_dims(const RunConfig& cfg,
                       const std::vector<FeatureBundle>& bundles) {
  ModelDims dims = cfg.dims;
  dims.task = cfg.task;
  dims.utt_in = cfg.sentiment_dim + kRhythmDim;
  for (const auto& b : bundles) {
    for (const auto& [name, m] : b.embeddings) {
      dims.source_dims[name] = int(m.cols());
    }
  }
  return dims;
}

Vec target_of(const Sample& s, Task task) {
  if (task == Task::categorical) {
    if (!s.votes.empty()) return soft_targets(s.votes);
    if (s.label) {
      Vec t = Vec::Zero(kNumCategories);
      t[category_index(*s.label)] = 1.0;
      return t;
    }
    throw ValidationError("sample '" + s.id + "' has no label or votes");
  }
  if (!s.attributes) {
    throw ValidationError("sample '" + s.id + "' has no attribute ratings");
  }
  Vec t(3);
  t << s.attributes->valence, s.attributes->arousal, s.attributes->dominance;
  return t;
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot open config: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + path + ": " + e.what());
  }
  RunConfig cfg;
  const std::string task = j.value("task", std::string("categorical"));
  if (task == "categorical") {
    cfg.task = Task::categorical;
  } else if (task == "attributes") {
    cfg.task = Task::attributes;
  } else {
    throw ValidationError("config: unknown task '" + task + "'");
  }
  cfg.use_word = j.value("use_word", true);
  cfg.use_utterance = j.value("use_utterance", true);
  if (j.contains("embeddings")) {
    cfg.embedding_names = j["embeddings"].get<std::vector<std::string>>();
  }
  cfg.sentiment_dim = j.value("sentiment_dim", kDefaultSentimentDim);

  if (j.contains("dims")) {
    const auto& d = j["dims"];
    cfg.dims.lstm_hidden = d.value("lstm_hidden", cfg.dims.lstm_hidden);
    cfg.dims.utt_hidden = d.value("utt_hidden", cfg.dims.utt_hidden);
    cfg.dims.ple_bins = d.value("ple_bins", cfg.dims.ple_bins);
    cfg.dims.latent_rows = d.value("latent_rows", cfg.dims.latent_rows);
    cfg.dims.model_dim = d.value("model_dim", cfg.dims.model_dim);
    cfg.dims.ffn_hidden = d.value("ffn_hidden", cfg.dims.ffn_hidden);
    cfg.dims.pool_attn = d.value("pool_attn", cfg.dims.pool_attn);
    if (d.value("embedding_mode", std::string("perceiver")) == "pool") {
      cfg.dims.emb_mode = EmbeddingMode::pool;
    }
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.seed = t.value("seed", cfg.train.seed);
    const std::string loss = t.value("loss", std::string("weighted_ce"));
    if (loss == "weighted_ce") {
      cfg.train.loss = LossKind::weighted_ce;
    } else if (loss == "soft_ce") {
      cfg.train.loss = LossKind::soft_ce;
    } else if (loss == "ccc") {
      cfg.train.loss = LossKind::ccc;
    } else {
      throw ValidationError("config: unknown loss '" + loss + "'");
    }
  }
  if (cfg.task == Task::attributes) cfg.train.loss = LossKind::ccc;

  cfg.manifest = j.value("manifest", std::string{});
  cfg.cache_dir = j.value("cache_dir", std::string{});
  cfg.checkpoint = j.value("checkpoint", std::string{});
  cfg.predictions = j.value("predictions", std::string{});
  cfg.history = j.value("history", std::string{});
  cfg.syntax_sidecar = j.value("syntax_sidecar", std::string{});
  cfg.sentiment_sidecar = j.value("sentiment_sidecar", std::string{});
  cfg.workers = j.value("workers", 1);

  if (!cfg.use_word && !cfg.use_utterance && cfg.embedding_names.empty()) {
    throw ValidationError("config: at least one feature level must be enabled");
  }
  return cfg;
}

int cmd_extract(const RunConfig& cfg, std::ostream& log) {
  return run_guarded(log, [&]() {
    if (cfg.manifest.empty() || cfg.cache_dir.empty()) {
      throw ValidationError("extract: manifest and cache_dir are required");
    }
    const std::vector<Sample> samples = load_manifest(cfg.manifest);
    fs::create_directories(cfg.cache_dir);
    const FeatureConfig fc = feature_config(cfg);

    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::vector<std::string> errors;
    auto worker = [&]() {
      for (std::size_t i = next.fetch_add(1); i < samples.size();
           i = next.fetch_add(1)) {
        Sample s = samples[i];
        s.embeddings.clear();  // extraction never touches embedding files
        try {
          const FeatureBundle b = build_bundle(s, fc);
          write_matrix(word_cache_path(cfg, s.id), b.word_seq.cast<float>());
          Mat utt(1, b.utterance.size());
          utt.row(0) = b.utterance.transpose();
          write_matrix(utt_cache_path(cfg, s.id), utt.cast<float>());
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(err_mutex);
          errors.push_back("sample '" + s.id + "': " + e.what());
        }
      }
    };

    const int n_workers = std::max(1, cfg.workers);
    std::vector<std::thread> threads;
    for (int t = 1; t < n_workers; ++t) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();

    std::sort(errors.begin(), errors.end());
    for (const auto& e : errors) log << "error: " << e << "\n";
    log << "extracted " << (samples.size() - errors.size()) << "/"
        << samples.size() << " samples\n";
    return errors.empty() ? kExitOk : kExitRuntime;
  });
}

int cmd_train(const RunConfig& cfg, std::ostream& log) {
  return run_guarded(log, [&]() {
    if (cfg.manifest.empty() || cfg.checkpoint.empty()) {
      throw ValidationError("train: manifest and checkpoint are required");
    }
    const std::vector<Sample> samples = load_manifest(cfg.manifest);
    if (samples.empty()) throw ValidationError("train: empty manifest");

    std::vector<TrainExample> dataset;
    dataset.reserve(samples.size());
    for (const Sample& s : samples) {
      TrainExample ex;
      ex.bundle = load_cached_bundle(cfg, s);
      ex.target = target_of(s, cfg.task);
      dataset.push_back(std::move(ex));
    }

    std::vector<FeatureBundle> bundles;
    for (const auto& ex : dataset) bundles.push_back(ex.bundle);
    const ModelDims dims = resolve_dims(cfg, bundles);

    const TrainResult result = train(dataset, dims, cfg.train);
    save_checkpoint(cfg.checkpoint, result.params);

    if (!cfg.history.empty()) {
      std::ofstream hist(cfg.history);
      if (!hist) throw RuntimeFailure("cannot write history: " + cfg.history);
      hist << "epoch,loss,metric\n";
      char buf[96];
      for (const auto& e : result.history) {
        std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g\n", e.epoch, e.loss,
                      e.metric);
        hist << buf;
      }
    }
    log << "trained " << result.history.size() << " epochs, final loss "
        << result.history.back().loss << "\n";
    return kExitOk;
  });
}

int cmd_predict(const RunConfig& cfg, std::ostream& log) {
  return run_guarded(log, [&]() {
    if (cfg.manifest.empty() || cfg.checkpoint.empty() ||
        cfg.predictions.empty()) {
      throw ValidationError(
          "predict: manifest, checkpoint, and predictions are required");
    }
    const ModelParams params = load_checkpoint(cfg.checkpoint);
    const std::vector<Sample> samples = load_manifest(cfg.manifest);

    std::vector<FeatureBundle> bundles;
    std::vector<std::string> ids;
    for (const Sample& s : samples) {
      bundles.push_back(load_cached_bundle(cfg, s));
      ids.push_back(s.id);
    }
    if (params.dims.task == Task::categorical) {
      ProbMatrix preds = predict_categorical(bundles, params);
      preds.sample_ids = ids;
      write_predictions(cfg.predictions, preds);
    } else {
      AttributePredictions preds;
      preds.values = predict_attributes(bundles, params);
      preds.sample_ids = ids;
      write_attribute_predictions(cfg.predictions, preds);
    }
    log << "wrote " << bundles.size() << " predictions\n";
    return kExitOk;
  });
}

int cmd_ensemble(const std::vector<std::string>& prediction_files,
                 EnsembleStrategy strategy, const std::string& out_path,
                 std::ostream& log) {
  return run_guarded(log, [&]() {
    if (prediction_files.empty()) {
      throw ValidationError("ensemble: no prediction files given");
    }
    std::vector<ProbMatrix> models;
    for (const auto& path : prediction_files) {
      models.push_back(read_predictions(path));
      models.back().model_id = path;
      if (models.back().sample_ids != models.front().sample_ids) {
        throw ValidationError("ensemble: sample id mismatch between '" +
                              prediction_files.front() + "' and '" + path + "'");
      }
    }
    std::vector<int> labels;
    switch (strategy) {
      case EnsembleStrategy::uncertainty:
        labels = uncertainty_ensemble(models).labels;
        break;
      case EnsembleStrategy::averaging:
        labels = averaging_ensemble(models);
        break;
      case EnsembleStrategy::majority:
        labels = majority_ensemble(models);
        break;
    }
    ProbMatrix mean = models.front();
    for (std::size_t i = 1; i < models.size(); ++i) mean.probs += models[i].probs;
    mean.probs /= double(models.size());
    write_predictions(out_path, mean, &labels);
    log << "ensembled " << models.size() << " models over "
        << labels.size() << " samples\n";
    return kExitOk;
  });
}

int cmd_evaluate(const std::string& predictions_path,
                 const std::string& manifest_path, Task task,
                 const std::string& report_path, std::ostream& log) {
  return run_guarded(log, [&]() {
    const std::vector<Sample> samples = load_manifest(manifest_path);
    std::map<std::string, const Sample*> by_id;
    for (const auto& s : samples) by_id[s.id] = &s;

    std::string json_text;
    if (task == Task::categorical) {
      const ProbMatrix preds = read_predictions(predictions_path);
      std::vector<int> pred_labels, gold_labels;
      for (std::size_t i = 0; i < preds.sample_ids.size(); ++i) {
        auto it = by_id.find(preds.sample_ids[i]);
        if (it == by_id.end() || !it->second->label) {
          throw ValidationError("evaluate: no gold label for sample '" +
                                preds.sample_ids[i] + "'");
        }
        pred_labels.push_back(preds.pred_labels[i]);
        gold_labels.push_back(category_index(*it->second->label));
      }
      json_text = report_to_json(classification_report(pred_labels, gold_labels));
    } else {
      const AttributePredictions preds =
          read_attribute_predictions(predictions_path);
      Eigen::MatrixXd golds(preds.values.rows(), 3);
      for (Eigen::Index i = 0; i < preds.values.rows(); ++i) {
        auto it = by_id.find(preds.sample_ids[std::size_t(i)]);
        if (it == by_id.end() || !it->second->attributes) {
          throw ValidationError("evaluate: no gold attributes for sample '" +
                                preds.sample_ids[std::size_t(i)] + "'");
        }
        golds(i, 0) = it->second->attributes->valence;
        golds(i, 1) = it->second->attributes->arousal;
        golds(i, 2) = it->second->attributes->dominance;
      }
      json_text = ccc_report_to_json(ccc_eval(preds.values, golds));
    }

    if (report_path.empty() || report_path == "-") {
      log << json_text << "\n";
    } else {
      std::ofstream out(report_path);
      if (!out) throw RuntimeFailure("cannot write report: " + report_path);
      out << json_text << "\n";
    }
    return kExitOk;
  });
}

int cmd_make_splits(const std::string& manifest_path, const SplitSpec& spec,
                    const std::string& out_path, std::ostream& log) {
  return run_guarded(log, [&]() {
    const std::vector<Sample> samples = load_manifest(manifest_path);
    const auto sets = balanced_splits(samples, spec);

    json j;
    j["n_sets"] = spec.n_sets;
    j["per_class"] = spec.per_class;
    j["seed"] = spec.seed;
    json jsets = json::array();
    for (const auto& set : sets) {
      json ids = json::array();
      for (int idx : set) ids.push_back(samples[std::size_t(idx)].id);
      jsets.push_back(ids);
    }
    j["sets"] = jsets;

    std::ofstream out(out_path);
    if (!out) throw RuntimeFailure("cannot write splits: " + out_path);
    out << j.dump(2) << "\n";
    log << "wrote " << sets.size() << " sets of " << sets.front().size()
        << " samples\n";
    return kExitOk;
  });
}

}  // namespace mater
