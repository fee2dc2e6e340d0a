#pragma once

#include <string>
#include <vector>

#include "mater/ensemble.hpp"
#include "mater/nn.hpp"

namespace mater {

struct TrainExample {
  FeatureBundle bundle;
  Vec target;  // 8-dim soft target (categorical) or 3 attributes
};

enum class LossKind { weighted_ce, soft_ce, ccc };

struct TrainConfig {
  int epochs = 50;
  double learning_rate = 1e-5;
  int batch_size = 128;
  unsigned long long seed = 0;
  LossKind loss = LossKind::weighted_ce;
  // Adam moments.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double metric = 0.0;  // training accuracy (Task 1) or mean CCC (Task 2)
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochStats> history;
};

// Inverse-frequency class weights w_c = N / (8 N_c); classes with no mass
// in the targets get weight 1.
Vec class_weights(const std::vector<TrainExample>& dataset);

// Full training loop: init from seed, fit PLE edges on the dataset,
// Adam updates, deterministic per (dataset order, config, seed).
// Throws RuntimeFailure on a non-finite loss.
TrainResult train(const std::vector<TrainExample>& dataset,
                  const ModelDims& dims, const TrainConfig& cfg);

// Softmax probabilities for Task 1; raw m x 3 outputs clamped to [1, 7]
// for Task 2.
ProbMatrix predict_categorical(const std::vector<FeatureBundle>& bundles,
                               const ModelParams& params);
Mat predict_attributes(const std::vector<FeatureBundle>& bundles,
                       const ModelParams& params);

// Checkpoint: "MTRP" magic, u32 version, u32 entry count, then per tensor
// u32 name length + name + u32 rank + u32 dims + row-major f64 data,
// little-endian throughout. Includes model dims and PLE edges.
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

}  // namespace mater
