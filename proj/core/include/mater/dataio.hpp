#pragma once

#include <Eigen/Core>
#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mater/ensemble.hpp"
#include "mater/features.hpp"

namespace mater {

struct Attributes {
  double valence = 0.0;
  double arousal = 0.0;
  double dominance = 0.0;
};

struct Sample {
  std::string id;
  std::string wav;  // resolved relative to the manifest directory
  std::string transcript;
  std::vector<WordAlignment> words;
  std::map<std::string, int> votes;       // category name -> count
  std::optional<std::string> label;       // one of A C D F H N S U
  std::optional<Attributes> attributes;   // each in [1, 7]
  std::map<std::string, std::string> embeddings;  // name -> matrix path
};

// JSON Lines, one sample per line. Paths are resolved against the
// manifest's directory. Errors carry 1-based line numbers.
std::vector<Sample> load_manifest(const std::string& path);
void save_manifest(const std::string& path, const std::vector<Sample>& samples);

// Binary matrix container: "MLEV" magic, u32 version, u32 rows, u32 cols,
// then row-major 32-bit floats, all little-endian.
Eigen::MatrixXf read_matrix(const std::string& path);
void write_matrix(const std::string& path, const Eigen::MatrixXf& m);

// Task 1 predictions CSV: id,p_A,...,p_U,pred. Rows are re-validated
// against the simplex (tolerance 1e-6) on read. The pred column defaults
// to the per-row argmax unless explicit labels are supplied (ensembles).
void write_predictions(const std::string& path, const ProbMatrix& preds,
                       const std::vector<int>* labels = nullptr);
ProbMatrix read_predictions(const std::string& path);

// Task 2 predictions CSV: id,valence,arousal,dominance.
struct AttributePredictions {
  Eigen::MatrixXd values;  // m x 3
  std::vector<std::string> sample_ids;
};
void write_attribute_predictions(const std::string& path,
                                 const AttributePredictions& preds);
AttributePredictions read_attribute_predictions(const std::string& path);

// Annotator votes -> simplex target. Votes outside the 8 categories
// (e.g. "Other") are dropped; throws when nothing usable remains.
Eigen::VectorXd soft_targets(const std::map<std::string, int>& votes);

struct SplitSpec {
  int n_sets = 5;
  int per_class = 326;
  unsigned long long seed = 0;
};

// Balanced in-house evaluation sets: each set draws per_class samples per
// category via a seeded shuffle, independently per set (sets may overlap
// with each other, never within themselves). Indices returned sorted.
std::vector<std::vector<int>> balanced_splits(const std::vector<Sample>& samples,
                                              const SplitSpec& spec);

// Sidecar files: JSON Lines {"id": ..., "vectors": [[...], ...]} for
// syntax (one 20-vector per word) and {"id": ..., "vector": [...]} for
// sentiment.
std::map<std::string, std::vector<Eigen::VectorXd>> load_syntax_sidecar(
    const std::string& path);
std::map<std::string, Eigen::VectorXd> load_sentiment_sidecar(
    const std::string& path);

}  // namespace mater
