#include "mater/metrics.hpp"

#include <nlohmann/json.hpp>
#include <set>

#include "mater/ensemble.hpp"
#include "mater/errors.hpp"
#include "mater/nn.hpp"

namespace mater {
namespace {

void check_lengths(const std::vector<int>& preds, const std::vector<int>& golds) {
  if (preds.size() != golds.size()) {
    throw ValidationError("metrics: prediction/gold length mismatch");
  }
  if (preds.empty()) throw ValidationError("metrics: empty input");
}

}  // namespace

ClassificationReport classification_report(const std::vector<int>& preds,
                                           const std::vector<int>& golds) {
  check_lengths(preds, golds);
  std::set<int> classes(golds.begin(), golds.end());

  ClassificationReport report;
  int correct = 0;
  double f1_sum = 0.0;
  for (int c : classes) {
    int tp = 0, fp = 0, fn = 0, support = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (golds[i] == c) ++support;
      if (preds[i] == c && golds[i] == c) ++tp;
      if (preds[i] == c && golds[i] != c) ++fp;
      if (preds[i] != c && golds[i] == c) ++fn;
    }
    ClassStats stats;
    stats.support = support;
    stats.precision = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
    stats.recall = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
    stats.f1 = stats.precision + stats.recall > 0.0
                   ? 2.0 * stats.precision * stats.recall /
                         (stats.precision + stats.recall)
                   : 0.0;
    f1_sum += stats.f1;
    const std::string name = c >= 0 && c < kNumCategories
                                 ? category_order()[std::size_t(c)]
                                 : std::to_string(c);
    report.per_class[name] = stats;
  }
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] == golds[i]) ++correct;
  }
  report.macro_f1 = 100.0 * f1_sum / double(classes.size());
  report.accuracy = 100.0 * double(correct) / double(preds.size());
  return report;
}

double macro_f1(const std::vector<int>& preds, const std::vector<int>& golds) {
  return classification_report(preds, golds).macro_f1;
}

double accuracy(const std::vector<int>& preds, const std::vector<int>& golds) {
  return classification_report(preds, golds).accuracy;
}

std::string report_to_json(const ClassificationReport& report) {
  nlohmann::json j;
  j["per_class"] = nlohmann::json::object();
  for (const auto& [name, stats] : report.per_class) {
    j["per_class"][name] = {{"precision", stats.precision},
                            {"recall", stats.recall},
                            {"f1", stats.f1},
                            {"support", stats.support}};
  }
  j["macro_f1"] = report.macro_f1;
  j["accuracy"] = report.accuracy;
  return j.dump(2);
}

CccReport ccc_eval(const Eigen::MatrixXd& preds, const Eigen::MatrixXd& golds) {
  if (preds.rows() != golds.rows() || preds.cols() != 3 || golds.cols() != 3) {
    throw ValidationError("ccc_eval: need matching m x 3 matrices");
  }
  if (preds.rows() < 2) throw ValidationError("ccc_eval: need at least 2 rows");
  CccReport r;
  r.valence = ccc(preds.col(0), golds.col(0));
  r.arousal = ccc(preds.col(1), golds.col(1));
  r.dominance = ccc(preds.col(2), golds.col(2));
  r.mean = (r.valence + r.arousal + r.dominance) / 3.0;
  return r;
}

std::string ccc_report_to_json(const CccReport& report) {
  nlohmann::json j = {{"valence", report.valence},
                      {"arousal", report.arousal},
                      {"dominance", report.dominance},
                      {"mean", report.mean}};
  return j.dump(2);
}

}  // namespace mater
