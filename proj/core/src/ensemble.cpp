#include "mater/ensemble.hpp"

#include <algorithm>
#include <numeric>

#include "mater/errors.hpp"

namespace mater {

const std::array<std::string, kNumCategories>& category_order() {
  static const std::array<std::string, kNumCategories> order = {
      "A", "C", "D", "F", "H", "N", "S", "U"};
  return order;
}

int category_index(const std::string& name) {
  const auto& order = category_order();
  for (int i = 0; i < kNumCategories; ++i) {
    if (order[i] == name) return i;
  }
  return -1;
}

RankMatrix rank_probs(const ProbMatrix& probs) {
  const Eigen::Index m = probs.probs.rows();
  if (m < 1 || probs.probs.cols() != kNumCategories) {
    throw ValidationError("rank_probs: need an m x 8 matrix with m >= 1");
  }
  RankMatrix out;
  out.ranks.resize(m, kNumCategories);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(m));
  for (int c = 0; c < kNumCategories; ++c) {
    std::iota(idx.begin(), idx.end(), 0);
    // Descending probability: rank 1 = most confident.
    std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
      return probs.probs(a, c) > probs.probs(b, c);
    });
    std::size_t pos = 0;
    while (pos < idx.size()) {
      std::size_t tie_end = pos;
      while (tie_end + 1 < idx.size() &&
             probs.probs(idx[tie_end + 1], c) == probs.probs(idx[pos], c)) {
        ++tie_end;
      }
      // Ties share the average of the positions they occupy (1-based).
      const double avg = double(pos + tie_end + 2) / 2.0;
      for (std::size_t k = pos; k <= tie_end; ++k) {
        out.ranks(idx[k], c) = avg;
      }
      pos = tie_end + 1;
    }
  }
  return out;
}

namespace {

Eigen::MatrixXd mean_probs(const std::vector<ProbMatrix>& models) {
  Eigen::MatrixXd mean = models[0].probs;
  for (std::size_t i = 1; i < models.size(); ++i) mean += models[i].probs;
  return mean / double(models.size());
}

void check_models(const std::vector<ProbMatrix>& models) {
  if (models.empty()) throw ValidationError("ensemble: no models supplied");
  for (const auto& model : models) {
    if (model.probs.rows() != models[0].probs.rows() ||
        model.probs.cols() != kNumCategories) {
      throw ValidationError("ensemble: model shape mismatch");
    }
  }
}

}  // namespace

EnsemblePrediction uncertainty_ensemble(const std::vector<ProbMatrix>& models) {
  check_models(models);
  const Eigen::Index m = models[0].probs.rows();
  const double n = double(models.size());

  EnsemblePrediction out;
  out.avg_uncertainty = Eigen::MatrixXd::Zero(m, kNumCategories);
  for (const auto& model : models) {
    out.avg_uncertainty += rank_probs(model).ranks;
  }
  out.avg_uncertainty /= n;

  const Eigen::MatrixXd mean = mean_probs(models);
  out.labels.resize(std::size_t(m));
  for (Eigen::Index j = 0; j < m; ++j) {
    int best = 0;
    for (int c = 1; c < kNumCategories; ++c) {
      const double u = out.avg_uncertainty(j, c);
      const double ub = out.avg_uncertainty(j, best);
      if (u < ub || (u == ub && mean(j, c) > mean(j, best))) best = c;
    }
    out.labels[std::size_t(j)] = best;
  }
  return out;
}

std::vector<int> averaging_ensemble(const std::vector<ProbMatrix>& models) {
  check_models(models);
  const Eigen::MatrixXd mean = mean_probs(models);
  std::vector<int> labels(std::size_t(mean.rows()));
  for (Eigen::Index j = 0; j < mean.rows(); ++j) {
    int best = 0;
    for (int c = 1; c < kNumCategories; ++c) {
      if (mean(j, c) > mean(j, best)) best = c;
    }
    labels[std::size_t(j)] = best;
  }
  return labels;
}

std::vector<int> majority_ensemble(const std::vector<ProbMatrix>& models) {
  check_models(models);
  const Eigen::Index m = models[0].probs.rows();
  const Eigen::MatrixXd mean = mean_probs(models);
  std::vector<int> labels(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) {
    std::array<int, kNumCategories> votes{};
    for (const auto& model : models) {
      int best = 0;
      for (int c = 1; c < kNumCategories; ++c) {
        if (model.probs(j, c) > model.probs(j, best)) best = c;
      }
      ++votes[std::size_t(best)];
    }
    int best = 0;
    for (int c = 1; c < kNumCategories; ++c) {
      if (votes[c] > votes[best] ||
          (votes[c] == votes[best] && votes[c] > 0 &&
           mean(j, c) > mean(j, best))) {
        best = c;
      }
    }
    labels[std::size_t(j)] = best;
  }
  return labels;
}

}  // namespace mater
