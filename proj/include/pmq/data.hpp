#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pmq/rng.hpp"
#include "pmq/tensor.hpp"

namespace pmq::data {

inline constexpr int kNoLabel = -1;

// One fixed-length multi-lead segment; the atomic training unit.
struct SampleRecord {
  MatF values;  // S x L
  int64_t patient_id = 0;
  int64_t trial_id = 0;
  int label = kNoLabel;
};

struct ManifestEntry {
  std::string record_path;  // relative to the manifest directory
  int64_t patient_id = 0;
  int64_t trial_id = 0;
  int label = kNoLabel;
  std::string split;  // train | valid | test
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  int num_classes = 0;  // inferred: max label + 1 (0 if unlabeled)
  int sample_len = 0;   // S
  int leads = 0;        // L
  std::string root_dir;
  std::string name;  // dataset display name (directory stem)
};

// CSV manifest with header `record_path,patient_id,trial_id,label,split`.
// Validates every referenced record header against the inferred (S, L),
// split names, and patient independence across splits.
DatasetManifest load_manifest(const std::string& path);

void save_manifest_file(const DatasetManifest& m, const std::string& path);

// Reads + per-record z-score normalizes (per lead, eps=1e-8) all records of
// one split. split="*" loads everything.
std::vector<SampleRecord> load_records(const DatasetManifest& m, const std::string& split,
                                       bool normalize = true);

// Non-overlapping consecutive segments of length sample_len; the trailing
// remainder is discarded. Throws TrialTooShort when rows < sample_len.
std::vector<MatF> segment_trial(const MatF& trial, int sample_len);

// Reassigns splits patient-wise: patients are shuffled by seed and
// partitioned so valid/test get max(1, floor(frac*P)) patients each and
// train takes the remainder. All records of a patient follow its split.
DatasetManifest patient_split(const DatasetManifest& m, double train_frac, double valid_frac,
                              double test_frac, uint64_t seed);

// Uniform (or per-class stratified) subset of max(1, round(ratio*N)) rows.
std::vector<ManifestEntry> subsample_labels(const std::vector<ManifestEntry>& train_entries,
                                            double ratio, uint64_t seed, bool stratified = false);

struct Batch {
  std::vector<MatF> values;  // B matrices of S x L
  std::vector<int64_t> patient_ids;
  std::vector<int> labels;  // kNoLabel when absent
  int size() const { return static_cast<int>(values.size()); }
};

// Seed-shuffled batching over a fixed record list. Batches are materialized
// lazily; the record list must outlive the sequence.
class BatchSequence {
 public:
  BatchSequence(const std::vector<SampleRecord>* records, int batch_size, uint64_t seed,
                bool drop_last);

  size_t count() const { return offsets_.size(); }
  Batch at(size_t i) const;

 private:
  const std::vector<SampleRecord>* records_;
  std::vector<uint32_t> order_;
  std::vector<std::pair<uint32_t, uint32_t>> offsets_;  // [begin, end) into order_
};

BatchSequence iter_batches(const std::vector<SampleRecord>& records, int batch_size, uint64_t seed,
                           bool drop_last);

// Synthetic dataset: each patient owns a fixed signature waveform (2-4
// sinusoids with patient-specific frequency/phase/per-lead gain); each class
// adds a class-specific sinusoid whose phase is redrawn per trial; Gaussian
// noise on top. Classes are assigned per patient (balanced round-robin) and
// recorded per trial, matching the premise that a patient's rhythm class is
// stable across recordings.
struct SynthConfig {
  int num_patients = 20;
  int trials_per_patient = 4;
  int trial_len = 600;
  int leads = 4;
  int num_classes = 4;
  int sample_len = 300;
  double noise_sigma = 0.1;
  uint64_t seed = 41;
  double train_frac = 0.8, valid_frac = 0.1, test_frac = 0.1;
};

// Writes records/ + manifest.csv under out_dir and returns the loaded,
// validated manifest.
DatasetManifest generate_synthetic(const SynthConfig& cfg, const std::string& out_dir);

// Deterministic generator internals, exposed for verification: the class
// component of a trial is a single sinusoid at an integer number of cycles
// per sample_len, so trial differences of one patient+class land in one
// frequency bin.
double synth_class_cycles(int class_id);

}  // namespace pmq::data
