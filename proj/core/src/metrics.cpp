#include "attnpain/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace attnpain::metrics {

FoldResult f1_minority(const std::vector<int>& pred_labels,
                       const std::vector<int>& true_labels) {
  if (pred_labels.empty()) throw ValidationError("f1_minority: empty input");
  if (pred_labels.size() != true_labels.size())
    throw ValidationError("f1_minority: length mismatch");
  FoldResult r;
  for (size_t i = 0; i < pred_labels.size(); ++i) {
    const int p = pred_labels[i], t = true_labels[i];
    if (p != 0 && p != 1) throw ValidationError("f1_minority: labels must be 0 or 1");
    if (t != 0 && t != 1) throw ValidationError("f1_minority: labels must be 0 or 1");
    if (p == 1 && t == 1) ++r.tp;
    else if (p == 1 && t == 0) ++r.fp;
    else if (p == 0 && t == 1) ++r.fn;
    else ++r.tn;
  }
  r.precision = (r.tp + r.fp) > 0 ? static_cast<double>(r.tp) / (r.tp + r.fp) : 0.0;
  r.recall = (r.tp + r.fn) > 0 ? static_cast<double>(r.tp) / (r.tp + r.fn) : 0.0;
  const long denom = 2 * r.tp + r.fp + r.fn;
  r.f1 = denom > 0 ? 2.0 * r.tp / static_cast<double>(denom) : 0.0;
  return r;
}

double auc(const std::vector<double>& scores, const std::vector<int>& true_labels) {
  if (scores.empty() || scores.size() != true_labels.size())
    throw ValidationError("auc: empty input or length mismatch");
  size_t npos = 0, nneg = 0;
  for (int t : true_labels) {
    if (t == 1) ++npos;
    else if (t == 0) ++nneg;
    else throw ValidationError("auc: labels must be 0 or 1");
  }
  if (npos == 0 || nneg == 0)
    throw ValidationError("auc: undefined, both classes must be present");

  // Rank-sum formulation with average ranks on ties:
  // AUC = (R_pos - n_pos(n_pos+1)/2) / (n_pos * n_neg).
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (size_t k = i; k <= j; ++k)
      if (true_labels[order[k]] == 1) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  const double np = static_cast<double>(npos);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * static_cast<double>(nneg));
}

RunReport aggregate(const std::vector<FoldResult>& fold_results,
                    const std::string& config_descriptor) {
  if (fold_results.size() < 2)
    throw ValidationError("aggregate: needs at least 2 folds");
  RunReport rep;
  rep.config = config_descriptor;
  rep.folds = fold_results;
  double f1_sum = 0.0;
  for (const auto& f : fold_results) f1_sum += f.f1;
  rep.f1_mean = f1_sum / static_cast<double>(fold_results.size());
  double var = 0.0;
  for (const auto& f : fold_results) {
    const double d = f.f1 - rep.f1_mean;
    var += d * d;
  }
  rep.f1_std = std::sqrt(var / static_cast<double>(fold_results.size()));
  double auc_sum = 0.0;
  size_t auc_n = 0;
  for (const auto& f : fold_results)
    if (f.auc_defined) {
      auc_sum += f.auc;
      ++auc_n;
    }
  rep.auc_mean = auc_n > 0 ? auc_sum / static_cast<double>(auc_n) : 0.0;
  return rep;
}

}  // namespace attnpain::metrics
