#pragma once

#include <Eigen/Core>
#include <array>
#include <map>
#include <string>
#include <vector>

namespace mater {

struct ClassStats {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int support = 0;
};

struct ClassificationReport {
  std::map<std::string, ClassStats> per_class;  // gold-present classes only
  double macro_f1 = 0.0;   // percent
  double accuracy = 0.0;   // percent
};

// Macro-F1 in percent, averaged over classes present in the gold labels.
// A class with no predictions contributes F1 = 0.
double macro_f1(const std::vector<int>& preds, const std::vector<int>& golds);

double accuracy(const std::vector<int>& preds, const std::vector<int>& golds);

ClassificationReport classification_report(const std::vector<int>& preds,
                                           const std::vector<int>& golds);

// JSON serialization with fixed keys: per_class, macro_f1, accuracy.
std::string report_to_json(const ClassificationReport& report);

struct CccReport {
  double valence = 0.0;
  double arousal = 0.0;
  double dominance = 0.0;
  double mean = 0.0;
};

CccReport ccc_eval(const Eigen::MatrixXd& preds, const Eigen::MatrixXd& golds);

std::string ccc_report_to_json(const CccReport& report);

}  // namespace mater
