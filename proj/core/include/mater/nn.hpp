#pragma once

#include <Eigen/Core>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mater/features.hpp"

namespace mater {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

enum class Task { categorical, attributes };

enum class EmbeddingMode {
  perceiver,  // project sources to model_dim, fuse via latent attention
  pool        // attentive statistics pooling per source, concatenated
};

struct ModelDims {
  int word_in = kWordDim;
  int lstm_hidden = 128;
  int utt_in = kDefaultSentimentDim + kRhythmDim;
  int ple_bins = 8;
  int utt_hidden = 128;
  int latent_rows = 64;
  int model_dim = 768;
  int ffn_hidden = 0;  // 0 = 2 * model_dim
  int pool_attn = 32;
  std::map<std::string, int> source_dims;  // embedding name -> column count
  Task task = Task::categorical;

  EmbeddingMode emb_mode = EmbeddingMode::perceiver;

  int out_dim() const { return task == Task::categorical ? 8 : 3; }
  int ffn_dim() const { return ffn_hidden > 0 ? ffn_hidden : 2 * model_dim; }
  int emb_out_dim() const;
  int head_in_dim() const {
    return emb_out_dim() + lstm_hidden + utt_hidden;
  }
};

// Named parameter tree. `tensors` are trainable; `buffers` (PLE bin
// edges) are fitted once and frozen.
struct ModelParams {
  ModelDims dims;
  std::map<std::string, Mat> tensors;
  std::map<std::string, Mat> buffers;

  Mat& at(const std::string& name);
  const Mat& at(const std::string& name) const;
};

using ParamGrads = std::map<std::string, Mat>;

// Allocates all tensors with scaled-uniform init, deterministic per seed.
// PLE edges start unfitted (NaN) and must be set via fit_ple_edges.
ModelParams init_params(const ModelDims& dims, unsigned long long seed);

ParamGrads zero_grads(const ModelParams& params);

Vec flatten_params(const ModelParams& params);
void unflatten_params(const Vec& flat, ModelParams& params);
Vec flatten_grads(const ModelParams& params, const ParamGrads& grads);

// Per-feature quantile bin edges over the training utterance vectors.
void fit_ple_edges(ModelParams& params, const std::vector<Vec>& utterances);

// ---- building blocks (row-vector convention, batch on rows) ----

Mat softmax_rows(const Mat& logits);

// Pre-affine output has row mean 0 and unit variance.
Mat layer_norm_rows(const Mat& x, const Vec& gamma, const Vec& beta);

// Single-head attention: queries from Z (L x D), keys/values from X.
Mat cross_attention(const Mat& z, const Mat& x, const Mat& wq, const Mat& wk,
                    const Mat& wv, const Mat& wo);

// ---- spec-level operations ----

// Final top-layer hidden state of the 2-layer LSTM; zero vector for an
// empty sequence.
Vec lstm_encode(const Mat& word_seq, const ModelParams& params);

// Piecewise-linear embedding of each scalar followed by a linear map.
Vec ple_encode(const Vec& utterance, const ModelParams& params);

// Raw PLE activations (one block of ple_bins values per input scalar),
// each in [0, 1] and monotone in x.
Vec ple_activations(const Vec& utterance, const Mat& edges, int bins);

// [attention-weighted mean || attention-weighted std], std floored at 1e-6.
Vec attentive_stat_pool(const Mat& frames, const Mat& w, const Vec& b,
                        const Vec& v);

// Latent cross-attention fusion; the block runs twice with shared
// weights, output is the latent-row mean.
Vec perceiver_fuse(const std::map<std::string, Mat>& embeddings,
                   const ModelParams& params);

struct ForwardCache;  // opaque; defined in nn.cpp

// Full network: 8 logits (categorical) or 3 raw attribute outputs.
// Missing feature levels contribute zero-valued slots to the head.
Vec model_forward(const FeatureBundle& bundle, const ModelParams& params,
                  std::shared_ptr<ForwardCache>* cache = nullptr);

// Accumulates d(loss)/d(params) into grads given d(loss)/d(output).
void model_backward(const FeatureBundle& bundle, const ModelParams& params,
                    const ForwardCache& cache, const Vec& d_out,
                    ParamGrads& grads);

// ---- losses ----

// -sum_c w_c q_c log softmax(logits)_c. Targets must lie on the simplex.
double weighted_ce(const Vec& logits, const Vec& target, const Vec& weights,
                   Vec* d_logits = nullptr);

// Concordance correlation with population moments. A fully degenerate
// denominator (both sequences the same constant) returns 1.
double ccc(const Vec& x, const Vec& y);

// 1 - mean CCC over columns; gradient is with respect to pred.
double ccc_loss(const Mat& pred, const Mat& target, Mat* d_pred = nullptr);

}  // namespace mater
