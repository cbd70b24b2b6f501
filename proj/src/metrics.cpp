#include "pmq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "pmq/common.hpp"

namespace pmq::eval {

double accuracy(const std::vector<int>& pred_labels, const std::vector<int>& true_labels) {
  require(!true_labels.empty(), Err::Empty, "no labels");
  require(pred_labels.size() == true_labels.size(), Err::LengthMismatch,
          "prediction/label count mismatch");
  size_t hits = 0;
  for (size_t i = 0; i < true_labels.size(); ++i) {
    if (pred_labels[i] == true_labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(true_labels.size());
}

double macro_f1(const std::vector<int>& pred_labels, const std::vector<int>& true_labels,
                int num_classes) {
  require(!true_labels.empty(), Err::Empty, "no labels");
  require(pred_labels.size() == true_labels.size(), Err::LengthMismatch,
          "prediction/label count mismatch");
  require(num_classes >= 1, Err::BadConfig, "num_classes must be >= 1");

  double sum = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    int64_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < true_labels.size(); ++i) {
      require(true_labels[i] >= 0 && true_labels[i] < num_classes, Err::BadConfig,
              "label out of range");
      const bool p = pred_labels[i] == c;
      const bool t = true_labels[i] == c;
      if (p && t) ++tp;
      else if (p) ++fp;
      else if (t) ++fn;
    }
    // 2TP / (2TP + FP + FN); empty class stays at 0 by convention.
    if (2 * tp + fp + fn > 0) {
      sum += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    }
  }
  return sum / num_classes;
}

namespace {

// Rank-statistic AUROC for one class: (rank sum of positives - npos*(npos+1)/2)
// / (npos * nneg), with midranks for ties.
double binary_auroc(const std::vector<double>& scores, const std::vector<uint8_t>& is_pos) {
  const size_t n = scores.size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  size_t npos = 0, nneg = 0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (size_t k = i; k < j; ++k) {
      if (is_pos[order[k]]) rank_sum_pos += midrank;
    }
    i = j;
  }
  for (uint8_t p : is_pos) {
    if (p) ++npos;
    else ++nneg;
  }
  return (rank_sum_pos - 0.5 * static_cast<double>(npos) * static_cast<double>(npos + 1)) /
         (static_cast<double>(npos) * static_cast<double>(nneg));
}

}  // namespace

double macro_auroc(const MatD& scores, const std::vector<int>& true_labels, int* skipped) {
  const int n = scores.rows;
  const int c = scores.cols;
  require(n >= 2, Err::Empty, "need at least 2 samples");
  require(static_cast<int>(true_labels.size()) == n, Err::LengthMismatch,
          "scores/labels count mismatch");
  std::set<int> distinct(true_labels.begin(), true_labels.end());
  require(distinct.size() >= 2, Err::DegenerateLabels, "only one class present");

  double sum = 0.0;
  int used = 0;
  int skip = 0;
  std::vector<double> col(static_cast<size_t>(n));
  std::vector<uint8_t> pos(static_cast<size_t>(n));
  for (int cls = 0; cls < c; ++cls) {
    int npos = 0;
    for (int i = 0; i < n; ++i) {
      col[static_cast<size_t>(i)] = scores(i, cls);
      pos[static_cast<size_t>(i)] = true_labels[static_cast<size_t>(i)] == cls ? 1 : 0;
      npos += pos[static_cast<size_t>(i)];
    }
    if (npos == 0 || npos == n) {
      ++skip;
      continue;
    }
    sum += binary_auroc(col, pos);
    ++used;
  }
  if (skipped) *skipped = skip;
  require(used >= 1, Err::DegenerateLabels, "no class has both positives and negatives");
  return sum / used;
}

double overall(const std::map<std::string, DatasetMetrics>& per_dataset) {
  require(!per_dataset.empty(), Err::Empty, "no metrics to aggregate");
  double sum = 0.0;
  size_t n = 0;
  for (const auto& [name, m] : per_dataset) {
    sum += m.acc + m.f1_macro + m.auroc_macro;
    n += 3;
  }
  return sum / static_cast<double>(n);
}

}  // namespace pmq::eval
