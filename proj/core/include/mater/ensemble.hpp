#pragma once

#include <Eigen/Core>
#include <array>
#include <string>
#include <vector>

namespace mater {

constexpr int kNumCategories = 8;

// Canonical category order: Angry, Contempt, Disgust, Fear, Happy,
// Neutral, Sad, Surprise.
const std::array<std::string, kNumCategories>& category_order();

int category_index(const std::string& name);  // -1 when unknown

// Per-model predicted probabilities, one row per sample.
struct ProbMatrix {
  Eigen::MatrixXd probs;  // m x 8
  std::string model_id;
  std::vector<std::string> sample_ids;  // optional, used by the CLI for joins
  std::vector<int> pred_labels;         // optional, from the CSV pred column
};

// Real-valued ranks per category column, 1 = most confident
// (highest probability); ties get the average of the tied positions.
struct RankMatrix {
  Eigen::MatrixXd ranks;  // m x 8
};

struct EnsemblePrediction {
  std::vector<int> labels;          // category index per sample
  Eigen::MatrixXd avg_uncertainty;  // m x 8 mean ranks
};

RankMatrix rank_probs(const ProbMatrix& probs);

// Rank-based ensemble: average each model's per-category ranks, then take
// the per-sample argmin. Rank ties break by higher mean probability, then
// canonical category order.
EnsemblePrediction uncertainty_ensemble(const std::vector<ProbMatrix>& models);

// argmax of the mean probability matrix; ties by canonical order.
std::vector<int> averaging_ensemble(const std::vector<ProbMatrix>& models);

// Plurality over per-model argmax votes; vote ties break by highest mean
// probability among the tied categories, then canonical order.
std::vector<int> majority_ensemble(const std::vector<ProbMatrix>& models);

}  // namespace mater
