#include "pmq/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "pmq/common.hpp"
#include "pmq/record_io.hpp"

namespace fs = std::filesystem;

namespace pmq::data {

namespace {

// Patient IDs ride through checkpoints as float32 payloads; keep them in the
// exactly-representable integer range.
constexpr int64_t kMaxPatientId = (1LL << 24) - 1;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

int64_t parse_int(const std::string& s, const std::string& what, size_t line_no) {
  try {
    size_t pos = 0;
    int64_t v = std::stoll(s, &pos);
    require(pos == s.size(), Err::MalformedManifest,
            what + " is not an integer at line " + std::to_string(line_no));
    return v;
  } catch (const Error&) {
    throw;
  } catch (...) {
    fail(Err::MalformedManifest, what + " is not an integer at line " + std::to_string(line_no));
  }
}

std::string dataset_name_for(const std::string& manifest_path) {
  fs::path p(manifest_path);
  std::string parent = p.parent_path().filename().string();
  if (!parent.empty() && parent != "." && parent != "/") return parent;
  return p.stem().string();
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), Err::MissingFile, "manifest not found: " + path);

  DatasetManifest m;
  m.root_dir = fs::path(path).parent_path().string();
  if (m.root_dir.empty()) m.root_dir = ".";
  m.name = dataset_name_for(path);

  std::string line;
  require(static_cast<bool>(std::getline(f, line)), Err::MalformedManifest, "empty manifest: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == "record_path,patient_id,trial_id,label,split", Err::MalformedManifest,
          "unexpected header: " + line);

  size_t line_no = 1;
  int max_label = -1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    require(fields.size() == 5, Err::MalformedManifest,
            "expected 5 fields at line " + std::to_string(line_no));

    ManifestEntry e;
    e.record_path = fields[0];
    require(!e.record_path.empty(), Err::MalformedManifest,
            "empty record_path at line " + std::to_string(line_no));
    e.patient_id = parse_int(fields[1], "patient_id", line_no);
    require(e.patient_id >= 0 && e.patient_id <= kMaxPatientId, Err::MalformedManifest,
            "patient_id out of range at line " + std::to_string(line_no));
    e.trial_id = parse_int(fields[2], "trial_id", line_no);
    require(e.trial_id >= 0, Err::MalformedManifest,
            "negative trial_id at line " + std::to_string(line_no));
    if (fields[3].empty()) {
      e.label = kNoLabel;
    } else {
      int64_t lab = parse_int(fields[3], "label", line_no);
      require(lab >= 0, Err::MalformedManifest,
              "negative label at line " + std::to_string(line_no));
      e.label = static_cast<int>(lab);
      max_label = std::max(max_label, e.label);
    }
    e.split = fields[4];
    require(e.split == "train" || e.split == "valid" || e.split == "test", Err::MalformedManifest,
            "unknown split '" + e.split + "' at line " + std::to_string(line_no));
    m.entries.push_back(std::move(e));
  }
  require(!m.entries.empty(), Err::MalformedManifest, "manifest has no rows: " + path);
  m.num_classes = max_label + 1;

  // Patient independence across splits.
  std::map<int64_t, std::string> patient_split_of;
  for (const auto& e : m.entries) {
    auto it = patient_split_of.find(e.patient_id);
    if (it == patient_split_of.end()) {
      patient_split_of.emplace(e.patient_id, e.split);
    } else {
      require(it->second == e.split, Err::SplitLeak,
              "patient " + std::to_string(e.patient_id) + " appears in splits '" + it->second +
                  "' and '" + e.split + "'");
    }
  }

  // Cross-check every record header against the inferred shape.
  for (const auto& e : m.entries) {
    auto [rows, cols] = io::read_record_shape((fs::path(m.root_dir) / e.record_path).string());
    if (m.sample_len == 0) {
      m.sample_len = rows;
      m.leads = cols;
    } else {
      require(rows == m.sample_len && cols == m.leads, Err::ShapeMismatch,
              e.record_path + " has shape (" + std::to_string(rows) + "," + std::to_string(cols) +
                  "), expected (" + std::to_string(m.sample_len) + "," + std::to_string(m.leads) +
                  ")");
    }
  }
  return m;
}

void save_manifest_file(const DatasetManifest& m, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  require(f.good(), Err::IoError, "cannot write manifest: " + path);
  f << "record_path,patient_id,trial_id,label,split\n";
  for (const auto& e : m.entries) {
    f << e.record_path << ',' << e.patient_id << ',' << e.trial_id << ',';
    if (e.label != kNoLabel) f << e.label;
    f << ',' << e.split << '\n';
  }
  require(f.good(), Err::IoError, "manifest write failed: " + path);
}

std::vector<SampleRecord> load_records(const DatasetManifest& m, const std::string& split,
                                       bool normalize) {
  std::vector<SampleRecord> out;
  for (const auto& e : m.entries) {
    if (split != "*" && e.split != split) continue;
    SampleRecord r;
    r.values = io::read_record((fs::path(m.root_dir) / e.record_path).string());
    r.patient_id = e.patient_id;
    r.trial_id = e.trial_id;
    r.label = e.label;
    if (normalize) {
      // Per-record, per-lead z-score.
      const int s = r.values.rows, l = r.values.cols;
      for (int c = 0; c < l; ++c) {
        double mean = 0.0;
        for (int t = 0; t < s; ++t) mean += r.values(t, c);
        mean /= s;
        double var = 0.0;
        for (int t = 0; t < s; ++t) {
          double d = r.values(t, c) - mean;
          var += d * d;
        }
        double inv = 1.0 / (std::sqrt(var / s) + 1e-8);
        for (int t = 0; t < s; ++t) {
          r.values(t, c) = static_cast<float>((r.values(t, c) - mean) * inv);
        }
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<MatF> segment_trial(const MatF& trial, int sample_len) {
  require(sample_len >= 1, Err::BadConfig, "sample_len must be >= 1");
  require(trial.rows >= sample_len, Err::TrialTooShort,
          "trial length " + std::to_string(trial.rows) + " < sample length " +
              std::to_string(sample_len));
  const int n = trial.rows / sample_len;
  std::vector<MatF> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    MatF seg(sample_len, trial.cols);
    std::copy(trial.row(i * sample_len), trial.row(i * sample_len) + seg.size(), seg.v.begin());
    out.push_back(std::move(seg));
  }
  return out;
}

DatasetManifest patient_split(const DatasetManifest& m, double train_frac, double valid_frac,
                              double test_frac, uint64_t seed) {
  require(std::abs(train_frac + valid_frac + test_frac - 1.0) < 1e-6, Err::BadConfig,
          "split fractions must sum to 1");
  std::set<int64_t> pid_set;
  for (const auto& e : m.entries) pid_set.insert(e.patient_id);
  const int p = static_cast<int>(pid_set.size());
  require(p >= 3, Err::TooFewPatients,
          "need >= 3 distinct patients, have " + std::to_string(p));

  std::vector<int64_t> pids(pid_set.begin(), pid_set.end());
  Rng rng(seed);
  auto order = shuffled_indices(pids.size(), rng);

  // valid/test take max(1, floor(frac*P)) patients each; train the rest.
  int n_valid = std::max(1, static_cast<int>(std::floor(valid_frac * p)));
  int n_test = std::max(1, static_cast<int>(std::floor(test_frac * p)));
  int n_train = p - n_valid - n_test;
  require(n_train >= 1, Err::TooFewPatients, "split leaves no training patients");

  std::map<int64_t, std::string> assign;
  for (int i = 0; i < p; ++i) {
    const char* split = i < n_train ? "train" : (i < n_train + n_valid ? "valid" : "test");
    assign[pids[order[static_cast<size_t>(i)]]] = split;
  }
  DatasetManifest out = m;
  for (auto& e : out.entries) e.split = assign[e.patient_id];
  return out;
}

std::vector<ManifestEntry> subsample_labels(const std::vector<ManifestEntry>& train_entries,
                                            double ratio, uint64_t seed, bool stratified) {
  require(!train_entries.empty(), Err::EmptyTrainSet, "no training records to subsample");
  require(ratio > 0.0 && ratio <= 1.0, Err::BadConfig, "label ratio must be in (0,1]");
  const size_t n = train_entries.size();

  std::vector<size_t> chosen;
  Rng rng(seed);
  if (!stratified) {
    size_t k = static_cast<size_t>(
        std::max<int64_t>(1, std::llround(ratio * static_cast<double>(n))));
    auto order = shuffled_indices(n, rng);
    chosen.assign(order.begin(), order.begin() + static_cast<long>(std::min(k, n)));
  } else {
    std::map<int, std::vector<size_t>> by_class;
    for (size_t i = 0; i < n; ++i) by_class[train_entries[i].label].push_back(i);
    for (auto& [label, idx] : by_class) {
      size_t k = static_cast<size_t>(
          std::max<int64_t>(1, std::llround(ratio * static_cast<double>(idx.size()))));
      auto order = shuffled_indices(idx.size(), rng);
      for (size_t j = 0; j < std::min(k, idx.size()); ++j) chosen.push_back(idx[order[j]]);
    }
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<ManifestEntry> out;
  out.reserve(chosen.size());
  for (size_t i : chosen) out.push_back(train_entries[i]);
  return out;
}

BatchSequence::BatchSequence(const std::vector<SampleRecord>* records, int batch_size,
                             uint64_t seed, bool drop_last)
    : records_(records) {
  require(batch_size >= 1, Err::BadConfig, "batch_size must be >= 1");
  Rng rng(seed);
  order_ = shuffled_indices(records->size(), rng);
  const uint32_t n = static_cast<uint32_t>(order_.size());
  const uint32_t b = static_cast<uint32_t>(batch_size);
  for (uint32_t begin = 0; begin < n; begin += b) {
    uint32_t end = std::min(begin + b, n);
    if (drop_last && end - begin < b) break;
    offsets_.emplace_back(begin, end);
  }
}

Batch BatchSequence::at(size_t i) const {
  auto [begin, end] = offsets_[i];
  Batch out;
  for (uint32_t k = begin; k < end; ++k) {
    const SampleRecord& r = (*records_)[order_[k]];
    out.values.push_back(r.values);
    out.patient_ids.push_back(r.patient_id);
    out.labels.push_back(r.label);
  }
  return out;
}

BatchSequence iter_batches(const std::vector<SampleRecord>& records, int batch_size, uint64_t seed,
                           bool drop_last) {
  return BatchSequence(&records, batch_size, seed, drop_last);
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

double synth_class_cycles(int class_id) { return 6.0 + 4.0 * class_id; }

namespace {

struct Sinusoid {
  double cycles;  // per sample_len timesteps
  double amp;
  double phase;
  std::vector<double> lead_gain;
  std::vector<double> lead_phase;
};

std::vector<Sinusoid> patient_signature(uint64_t seed, int64_t pid, int leads, int num_classes) {
  Rng rng(derive_seed(seed, 0x70A7, static_cast<uint64_t>(pid)));
  int n = 2 + static_cast<int>(rng.uniform_int(3));  // 2..4 components
  std::vector<Sinusoid> sig;
  for (int i = 0; i < n; ++i) {
    Sinusoid s;
    // Keep patient frequencies at least two cycles away from every class
    // frequency so the class component stays identifiable.
    for (;;) {
      s.cycles = rng.uniform(2.0, 24.0);
      bool clash = false;
      for (int c = 0; c < num_classes; ++c) {
        if (std::abs(s.cycles - synth_class_cycles(c)) < 2.0) clash = true;
      }
      if (!clash) break;
    }
    s.amp = rng.uniform(0.4, 1.0);
    s.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (int l = 0; l < leads; ++l) {
      s.lead_gain.push_back(rng.uniform(0.5, 1.5));
      s.lead_phase.push_back(rng.uniform(0.0, 0.5 * std::numbers::pi));
    }
    sig.push_back(std::move(s));
  }
  return sig;
}

std::vector<double> class_lead_gains(uint64_t seed, int class_id, int leads) {
  Rng rng(derive_seed(seed, 0xC1A5, static_cast<uint64_t>(class_id)));
  std::vector<double> g;
  for (int l = 0; l < leads; ++l) g.push_back(rng.uniform(0.6, 1.4));
  return g;
}

}  // namespace

DatasetManifest generate_synthetic(const SynthConfig& cfg, const std::string& out_dir) {
  require(cfg.num_patients >= 1 && cfg.trials_per_patient >= 1 && cfg.trial_len >= 1 &&
              cfg.leads >= 1 && cfg.num_classes >= 1 && cfg.sample_len >= 1,
          Err::BadConfig, "synthetic counts must be >= 1");
  require(cfg.trial_len >= cfg.sample_len, Err::TrialTooShort,
          "trial_len shorter than sample_len");

  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "records", ec);
  require(!ec, Err::IoError, "cannot create " + out_dir);

  DatasetManifest m;
  m.root_dir = out_dir;
  m.name = dataset_name_for((fs::path(out_dir) / "manifest.csv").string());
  m.sample_len = cfg.sample_len;
  m.leads = cfg.leads;
  m.num_classes = cfg.num_classes;

  const double s0 = static_cast<double>(cfg.sample_len);
  for (int pid = 0; pid < cfg.num_patients; ++pid) {
    auto sig = patient_signature(cfg.seed, pid, cfg.leads, cfg.num_classes);
    const int class_id = pid % cfg.num_classes;
    auto cgain = class_lead_gains(cfg.seed, class_id, cfg.leads);
    const double ccycles = synth_class_cycles(class_id);

    for (int t = 0; t < cfg.trials_per_patient; ++t) {
      const int64_t trial_id = static_cast<int64_t>(pid) * cfg.trials_per_patient + t;
      Rng trng(derive_seed(cfg.seed, 0x7121, static_cast<uint64_t>(pid), static_cast<uint64_t>(t)));
      const double trial_phase = trng.uniform(0.0, 2.0 * std::numbers::pi);

      MatF trial(cfg.trial_len, cfg.leads);
      for (int ts = 0; ts < cfg.trial_len; ++ts) {
        const double tau = 2.0 * std::numbers::pi * ts / s0;
        for (int l = 0; l < cfg.leads; ++l) {
          double v = cgain[l] * std::sin(ccycles * tau + trial_phase);
          for (const auto& s : sig) {
            v += s.amp * s.lead_gain[l] * std::sin(s.cycles * tau + s.phase + s.lead_phase[l]);
          }
          if (cfg.noise_sigma > 0.0) v += trng.normal(0.0, cfg.noise_sigma);
          trial(ts, l) = static_cast<float>(v);
        }
      }

      auto segments = segment_trial(trial, cfg.sample_len);
      for (size_t seg = 0; seg < segments.size(); ++seg) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "records/p%05d_t%06lld_s%02zu.rec", pid,
                      static_cast<long long>(trial_id), seg);
        io::write_record((fs::path(out_dir) / buf).string(), segments[seg]);
        ManifestEntry e;
        e.record_path = buf;
        e.patient_id = pid;
        e.trial_id = trial_id;
        e.label = class_id;
        e.split = "train";
        m.entries.push_back(std::move(e));
      }
    }
  }

  if (cfg.num_patients >= 3) {
    m = patient_split(m, cfg.train_frac, cfg.valid_frac, cfg.test_frac,
                      derive_seed(cfg.seed, 0x5711));
  }
  save_manifest_file(m, (fs::path(out_dir) / "manifest.csv").string());
  // Reload so the result went through full validation.
  return load_manifest((fs::path(out_dir) / "manifest.csv").string());
}

}  // namespace pmq::data
