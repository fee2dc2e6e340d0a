#include "mater/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "mater/errors.hpp"

namespace mater {
namespace {

struct AdamState {
  ParamGrads m, v;
  long long t = 0;
};

void adam_step(ModelParams& params, const ParamGrads& grads, AdamState& state,
               const TrainConfig& cfg) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  for (auto& [name, p] : params.tensors) {
    const Mat& g = grads.at(name);
    Mat& m = state.m.at(name);
    Mat& v = state.v.at(name);
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const Mat mhat = m / bc1;
    const Mat vhat = v / bc2;
    p.array() -= cfg.learning_rate * mhat.array() /
                 (vhat.array().sqrt() + cfg.adam_eps);
  }
}

}  // namespace

Vec class_weights(const std::vector<TrainExample>& dataset) {
  Vec counts = Vec::Zero(kNumCategories);
  for (const auto& ex : dataset) counts += ex.target;
  const double total = counts.sum();
  Vec w = Vec::Ones(kNumCategories);
  for (int c = 0; c < kNumCategories; ++c) {
    if (counts[c] > 0.0) w[c] = total / (kNumCategories * counts[c]);
  }
  return w;
}

TrainResult train(const std::vector<TrainExample>& dataset,
                  const ModelDims& dims, const TrainConfig& cfg) {
  if (dataset.empty()) throw ValidationError("train: empty dataset");
  if (cfg.epochs <= 0 || cfg.batch_size <= 0 || cfg.learning_rate < 0.0) {
    throw ValidationError("train: epochs and batch size must be positive");
  }
  const bool regression = dims.task == Task::attributes;
  if (regression && cfg.loss != LossKind::ccc) {
    throw ValidationError("train: attribute task requires the ccc loss");
  }

  TrainResult result;
  result.params = init_params(dims, cfg.seed);
  {
    std::vector<Vec> utts;
    for (const auto& ex : dataset) {
      if (ex.bundle.utterance.size() > 0) utts.push_back(ex.bundle.utterance);
    }
    if (!utts.empty()) fit_ple_edges(result.params, utts);
    else result.params.buffers.at("ple.edges").setZero();
  }

  const Vec weights =
      cfg.loss == LossKind::weighted_ce ? class_weights(dataset)
                                        : Vec::Ones(kNumCategories);

  AdamState adam;
  adam.m = zero_grads(result.params);
  adam.v = zero_grads(result.params);

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t n_batches = 0;

    std::vector<std::pair<std::size_t, std::size_t>> batches;
    for (std::size_t start = 0; start < order.size();
         start += std::size_t(cfg.batch_size)) {
      batches.emplace_back(start, std::min(order.size() - start,
                                           std::size_t(cfg.batch_size)));
    }
    // CCC is a batch statistic; a trailing singleton folds into the
    // previous batch instead of forming its own.
    if (regression && batches.size() > 1 && batches.back().second == 1) {
      batches.pop_back();
      batches.back().second += 1;
    }

    for (const auto& [start, count] : batches) {
      ParamGrads grads = zero_grads(result.params);
      double batch_loss = 0.0;

      if (!regression) {
        for (std::size_t k = 0; k < count; ++k) {
          const TrainExample& ex = dataset[order[start + k]];
          std::shared_ptr<ForwardCache> cache;
          const Vec logits = model_forward(ex.bundle, result.params, &cache);
          Vec d_logits;
          batch_loss += weighted_ce(logits, ex.target, weights, &d_logits);
          d_logits /= double(count);
          model_backward(ex.bundle, result.params, *cache, d_logits, grads);
        }
        batch_loss /= double(count);
      } else {
        Mat preds(count, 3), targets(count, 3);
        std::vector<std::shared_ptr<ForwardCache>> caches(count);
        for (std::size_t k = 0; k < count; ++k) {
          const TrainExample& ex = dataset[order[start + k]];
          preds.row(k) =
              model_forward(ex.bundle, result.params, &caches[k]).transpose();
          targets.row(k) = ex.target.transpose();
        }
        Mat d_preds;
        batch_loss = ccc_loss(preds, targets, &d_preds);
        for (std::size_t k = 0; k < count; ++k) {
          model_backward(dataset[order[start + k]].bundle, result.params,
                         *caches[k], d_preds.row(k).transpose(), grads);
        }
      }

      if (!std::isfinite(batch_loss)) {
        throw RuntimeFailure("train: non-finite loss at epoch " +
                             std::to_string(epoch + 1));
      }
      epoch_loss += batch_loss;
      ++n_batches;
      adam_step(result.params, grads, adam, cfg);
    }

    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.loss = epoch_loss / double(std::max<std::size_t>(n_batches, 1));

    // Metric over the whole training set with the post-update parameters.
    if (!regression) {
      int correct = 0;
      for (const auto& ex : dataset) {
        const Vec logits = model_forward(ex.bundle, result.params);
        Eigen::Index pred, gold;
        logits.maxCoeff(&pred);
        ex.target.maxCoeff(&gold);
        if (pred == gold) ++correct;
      }
      stats.metric = double(correct) / double(dataset.size());
    } else {
      Mat preds(dataset.size(), 3), targets(dataset.size(), 3);
      for (std::size_t i = 0; i < dataset.size(); ++i) {
        preds.row(i) = model_forward(dataset[i].bundle, result.params).transpose();
        targets.row(i) = dataset[i].target.transpose();
      }
      double acc = 0.0;
      for (int j = 0; j < 3; ++j) acc += ccc(preds.col(j), targets.col(j));
      stats.metric = acc / 3.0;
    }
    result.history.push_back(stats);
  }
  return result;
}

ProbMatrix predict_categorical(const std::vector<FeatureBundle>& bundles,
                               const ModelParams& params) {
  ProbMatrix out;
  out.probs.resize(Eigen::Index(bundles.size()), kNumCategories);
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    const Vec logits = model_forward(bundles[i], params);
    out.probs.row(Eigen::Index(i)) = softmax_rows(logits.transpose());
  }
  return out;
}

Mat predict_attributes(const std::vector<FeatureBundle>& bundles,
                       const ModelParams& params) {
  Mat out(Eigen::Index(bundles.size()), 3);
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    out.row(Eigen::Index(i)) = model_forward(bundles[i], params)
                                   .transpose()
                                   .cwiseMax(1.0)
                                   .cwiseMin(7.0);
  }
  return out;
}

namespace {

constexpr uint32_t kCheckpointVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
  uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16),
                  uint8_t(v >> 24)};
  out.write(reinterpret_cast<char*>(b), 4);
}

uint32_t get_u32(std::istream& in, const std::string& path) {
  uint8_t b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw ValidationError("truncated checkpoint: " + path);
  }
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
         uint32_t(b[3]) << 24;
}

void put_f64(std::ostream& out, double v) {
  uint64_t u;
  std::memcpy(&u, &v, 8);
  uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = uint8_t(u >> (8 * i));
  out.write(reinterpret_cast<char*>(b), 8);
}

double get_f64(std::istream& in, const std::string& path) {
  uint8_t b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) {
    throw ValidationError("truncated checkpoint: " + path);
  }
  uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= uint64_t(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

void write_entry(std::ostream& out, const std::string& name, const Mat& m) {
  put_u32(out, uint32_t(name.size()));
  out.write(name.data(), std::streamsize(name.size()));
  put_u32(out, 2);
  put_u32(out, uint32_t(m.rows()));
  put_u32(out, uint32_t(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) put_f64(out, m(i, j));
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write checkpoint: " + path);
  out.write("MTRP", 4);
  put_u32(out, kCheckpointVersion);

  const ModelDims& d = params.dims;
  Mat core(1, 11);
  core << d.word_in, d.lstm_hidden, d.utt_in, d.ple_bins, d.utt_hidden,
      d.latent_rows, d.model_dim, d.ffn_hidden, d.pool_attn,
      double(int(d.task)), double(int(d.emb_mode));

  uint32_t entries = uint32_t(params.tensors.size() + params.buffers.size()) +
                     1 + uint32_t(d.source_dims.size());
  put_u32(out, entries);
  write_entry(out, "__dims__", core);
  for (const auto& [name, dim] : d.source_dims) {
    write_entry(out, "__source__" + name, Mat::Constant(1, 1, double(dim)));
  }
  for (const auto& [name, m] : params.buffers) write_entry(out, name, m);
  for (const auto& [name, m] : params.tensors) write_entry(out, name, m);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open checkpoint: " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "MTRP", 4) != 0) {
    throw ValidationError("bad checkpoint magic: " + path);
  }
  const uint32_t version = get_u32(in, path);
  if (version != kCheckpointVersion) {
    throw ValidationError("unsupported checkpoint version: " + path);
  }
  const uint32_t entries = get_u32(in, path);

  std::map<std::string, Mat> table;
  for (uint32_t e = 0; e < entries; ++e) {
    const uint32_t name_len = get_u32(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) {
      throw ValidationError("truncated checkpoint: " + path);
    }
    const uint32_t rank = get_u32(in, path);
    if (rank != 2) throw ValidationError("unsupported tensor rank: " + path);
    const uint32_t rows = get_u32(in, path);
    const uint32_t cols = get_u32(in, path);
    Mat m(rows, cols);
    for (uint32_t i = 0; i < rows; ++i) {
      for (uint32_t j = 0; j < cols; ++j) m(i, j) = get_f64(in, path);
    }
    table[name] = std::move(m);
  }

  auto dims_it = table.find("__dims__");
  if (dims_it == table.end()) {
    throw ValidationError("checkpoint missing model dims: " + path);
  }
  const Mat& core = dims_it->second;
  ModelDims d;
  d.word_in = int(core(0, 0));
  d.lstm_hidden = int(core(0, 1));
  d.utt_in = int(core(0, 2));
  d.ple_bins = int(core(0, 3));
  d.utt_hidden = int(core(0, 4));
  d.latent_rows = int(core(0, 5));
  d.model_dim = int(core(0, 6));
  d.ffn_hidden = int(core(0, 7));
  d.pool_attn = int(core(0, 8));
  d.task = Task(int(core(0, 9)));
  d.emb_mode = EmbeddingMode(int(core(0, 10)));
  for (const auto& [name, m] : table) {
    if (name.starts_with("__source__")) {
      d.source_dims[name.substr(10)] = int(m(0, 0));
    }
  }

  ModelParams p = init_params(d, 0);
  for (auto& [name, m] : p.tensors) {
    auto it = table.find(name);
    if (it == table.end()) {
      throw ValidationError("checkpoint missing tensor '" + name + "': " + path);
    }
    if (it->second.rows() != m.rows() || it->second.cols() != m.cols()) {
      throw ValidationError("checkpoint tensor shape mismatch for '" + name +
                            "': " + path);
    }
    m = it->second;
  }
  for (auto& [name, m] : p.buffers) {
    auto it = table.find(name);
    if (it != table.end()) m = it->second;
  }
  return p;
}

}  // namespace mater
