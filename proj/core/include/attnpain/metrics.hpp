#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attnpain/errors.hpp"

namespace attnpain::metrics {

// Per-fold evaluation with pain (label 1) as the positive class.
struct FoldResult {
  int fold_index = 0;
  double f1 = 0.0;
  double auc = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  long tp = 0, fp = 0, fn = 0, tn = 0;
  bool auc_defined = true;  // false when the test fold is single-class
  std::string error;        // surfaced in reports, empty on success
};

struct RunReport {
  std::string config;
  std::vector<FoldResult> folds;
  double f1_mean = 0.0;
  double f1_std = 0.0;  // population (1/N)
  double auc_mean = 0.0;
};

// F1 on the minority (pain) class: 2TP / (2TP + FP + FN), 0 when the
// denominator is 0. Throws on empty input.
FoldResult f1_minority(const std::vector<int>& pred_labels,
                       const std::vector<int>& true_labels);

// Mann-Whitney AUC: fraction of (positive, negative) pairs where the
// positive outscores the negative, ties counted 0.5. Throws when a class
// is missing.
double auc(const std::vector<double>& scores, const std::vector<int>& true_labels);

// Mean and population std of F1 over folds; mean AUC over folds where it
// is defined. Requires at least 2 folds.
RunReport aggregate(const std::vector<FoldResult>& fold_results,
                    const std::string& config_descriptor = "");

}  // namespace attnpain::metrics
