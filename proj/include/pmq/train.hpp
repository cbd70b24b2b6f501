#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "pmq/config.hpp"
#include "pmq/data.hpp"
#include "pmq/metrics.hpp"
#include "pmq/model.hpp"

namespace pmq::train {

// Index (0-based) of the first maximum; the validation-selected epoch.
int select_best_epoch(const std::vector<double>& metric_per_epoch);

// Mean cross-entropy over the batch; writes d(loss)/d(logits) when asked.
double cross_entropy(const MatF& logits, const std::vector<int>& labels, MatF* dlogits);

struct PretrainResult {
  std::string checkpoint_path;  // resumable state (final unless interrupted)
  nlohmann::json report;
  bool interrupted = false;
};

// Self-supervised pretraining on the manifest's train split. With
// resume=true the newest epoch snapshot in out_dir is picked up and the run
// continues to the configured epoch count, reproducing the uninterrupted
// run bit-exactly.
PretrainResult pretrain(const data::DatasetManifest& m, const cfg::Config& config,
                        const std::string& out_dir, bool resume = false);

struct FinetuneResult {
  std::string checkpoint_path;
  eval::DatasetMetrics test;
  nlohmann::json report;
};

// Supervised finetuning: query-branch encoder from the checkpoint (or a
// fresh random encoder when pretrain_ckpt is empty) plus a new classifier
// head, trained end-to-end on the label-subsampled train split. The epoch
// reported on the test split is chosen by validation macro-F1 (train.select).
FinetuneResult finetune(const std::string& pretrain_ckpt, const data::DatasetManifest& m,
                        const cfg::Config& config, const std::string& out_dir);

// Metrics of a saved classifier on one split; writes report.json under
// out_dir when non-empty.
eval::DatasetMetrics evaluate_classifier(const std::string& classifier_ckpt,
                                         const data::DatasetManifest& m,
                                         const cfg::Config& config, const std::string& split,
                                         const std::string& out_dir);

// Query-branch encoder from a pretraining checkpoint; the stored encoder
// configuration must match `expect`.
model::Encoder<float> load_query_encoder(const std::string& ckpt_path,
                                         const model::EncoderConfig& expect);

}  // namespace pmq::train
