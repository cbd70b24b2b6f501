#pragma once

#include <map>
#include <string>
#include <vector>

#include "pmq/tensor.hpp"

namespace pmq::eval {

// Fraction of exact matches.
double accuracy(const std::vector<int>& pred_labels, const std::vector<int>& true_labels);

// Unweighted mean of per-class F1. A class absent from both predictions and
// truth contributes F1 = 0 and is still averaged.
double macro_f1(const std::vector<int>& pred_labels, const std::vector<int>& true_labels,
                int num_classes);

// One-vs-rest AUROC per class via the rank statistic (ties count 1/2),
// averaged over classes that have at least one positive and one negative;
// other classes are skipped and counted in *skipped when provided.
double macro_auroc(const MatD& scores, const std::vector<int>& true_labels, int* skipped = nullptr);

struct DatasetMetrics {
  double acc = 0.0;
  double f1_macro = 0.0;
  double auroc_macro = 0.0;
};

// Arithmetic mean of every (dataset, metric) value.
double overall(const std::map<std::string, DatasetMetrics>& per_dataset);

}  // namespace pmq::eval
