#include "pmq/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "pmq/checkpoint.hpp"
#include "pmq/common.hpp"
#include "pmq/optim.hpp"
#include "pmq/pcl.hpp"

namespace fs = std::filesystem;

namespace pmq::train {

using nlohmann::json;

namespace {

const char* source_rev() {
#ifdef PMQ_SOURCE_REV
  return PMQ_SOURCE_REV;
#else
  return "unknown";
#endif
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  require(f.good(), Err::IoError, "cannot write " + path);
  f << text;
  require(f.good(), Err::IoError, "write failed: " + path);
}

std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json encoder_config_json(const model::EncoderConfig& e) {
  return {{"input_leads", e.input_leads},   {"hidden_dim", e.hidden_dim},
          {"output_dim", e.output_dim},     {"num_blocks", e.num_blocks},
          {"kernel_size", e.kernel_size},   {"linear_dilation", e.linear_dilation},
          {"mean_pool", e.mean_pool}};
}

model::EncoderConfig encoder_config_from_json(const json& j) {
  model::EncoderConfig e;
  e.input_leads = j.at("input_leads").get<int>();
  e.hidden_dim = j.at("hidden_dim").get<int>();
  e.output_dim = j.at("output_dim").get<int>();
  e.num_blocks = j.at("num_blocks").get<int>();
  e.kernel_size = j.at("kernel_size").get<int>();
  e.linear_dilation = j.at("linear_dilation").get<bool>();
  e.mean_pool = j.at("mean_pool").get<bool>();
  return e;
}

bool encoder_config_equal(const model::EncoderConfig& a, const model::EncoderConfig& b) {
  return a.input_leads == b.input_leads && a.hidden_dim == b.hidden_dim &&
         a.output_dim == b.output_dim && a.num_blocks == b.num_blocks &&
         a.kernel_size == b.kernel_size && a.linear_dilation == b.linear_dilation &&
         a.mean_pool == b.mean_pool;
}

template <typename M>
void load_module(const io::Checkpoint& c, M& module, const std::string& prefix) {
  module.visit(prefix, [&](const std::string& name, std::vector<float>& w, std::vector<float>&) {
    const auto& a = c.array(name);
    require(a.size() == w.size(), Err::ShapeMismatch, "checkpoint size mismatch: " + name);
    w = a;
  });
}

template <typename M>
void add_module_arrays(io::CheckpointWriter& w, M& module, const std::string& prefix) {
  module.visit(prefix, [&](const std::string& name, std::vector<float>& p, std::vector<float>&) {
    w.add_vector(name, p);
  });
}

template <typename M>
void zero_module_grads(M& module) {
  module.visit("z", [](const std::string&, std::vector<float>&, std::vector<float>& g) {
    std::fill(g.begin(), g.end(), 0.0f);
  });
}

std::string epoch_ckpt_path(const std::string& out_dir, int64_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_epoch_%06lld.pmq", static_cast<long long>(epoch));
  return (fs::path(out_dir) / buf).string();
}

// Highest-epoch snapshot in out_dir, or -1.
int64_t latest_snapshot_epoch(const std::string& out_dir) {
  int64_t best = -1;
  if (!fs::is_directory(out_dir)) return best;
  for (const auto& entry : fs::directory_iterator(out_dir)) {
    const std::string name = entry.path().filename().string();
    long long e = -1;
    if (std::sscanf(name.c_str(), "ckpt_epoch_%lld.pmq", &e) == 1) {
      best = std::max<int64_t>(best, e);
    }
  }
  return best;
}

}  // namespace

int select_best_epoch(const std::vector<double>& metric_per_epoch) {
  require(!metric_per_epoch.empty(), Err::Empty, "no epochs to select from");
  int best = 0;
  for (int i = 1; i < static_cast<int>(metric_per_epoch.size()); ++i) {
    if (metric_per_epoch[static_cast<size_t>(i)] > metric_per_epoch[static_cast<size_t>(best)]) {
      best = i;
    }
  }
  return best;
}

double cross_entropy(const MatF& logits, const std::vector<int>& labels, MatF* dlogits) {
  const int b = logits.rows, c = logits.cols;
  require(static_cast<int>(labels.size()) == b, Err::LengthMismatch, "labels/logits mismatch");
  if (dlogits) dlogits->resize(b, c);
  double loss = 0.0;
  std::vector<double> p(static_cast<size_t>(c));
  for (int i = 0; i < b; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    require(y >= 0 && y < c, Err::BadConfig, "label out of range");
    const float* lrow = logits.row(i);
    double mx = lrow[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(lrow[j]));
    double denom = 0.0;
    for (int j = 0; j < c; ++j) {
      p[static_cast<size_t>(j)] = std::exp(static_cast<double>(lrow[j]) - mx);
      denom += p[static_cast<size_t>(j)];
    }
    loss += std::log(denom) - (static_cast<double>(lrow[y]) - mx);
    if (dlogits) {
      float* drow = dlogits->row(i);
      for (int j = 0; j < c; ++j) {
        const double soft = p[static_cast<size_t>(j)] / denom;
        drow[j] = static_cast<float>((soft - (j == y ? 1.0 : 0.0)) / b);
      }
    }
  }
  return loss / b;
}

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

namespace {

void save_pretrain_state(const std::string& path, pcl::PmqState<float>& st,
                         const cfg::Config& config, int64_t epochs_done,
                         const std::string& dataset_name) {
  io::CheckpointWriter w;
  w.meta()["kind"] = "pretrain";
  w.meta()["config"] = config.to_json();
  w.meta()["model"] = encoder_config_json(st.query.enc.cfg);
  w.meta()["dataset"] = dataset_name;
  w.meta()["epoch"] = epochs_done;
  w.meta()["step"] = st.step;
  io::add_branch(w, st.query, "query");
  io::add_branch(w, st.key, "key");
  io::add_queue(w, st.queue);
  io::add_optimizer(w, st.opt);
  w.add_scalar("step", static_cast<double>(st.step));
  w.add_scalar("epoch", static_cast<double>(epochs_done));
  w.save(path);
}

int64_t load_pretrain_state(const std::string& path, pcl::PmqState<float>& st) {
  io::Checkpoint c = io::Checkpoint::load(path);
  require(c.meta().value("kind", "") == "pretrain", Err::IoError,
          "not a pretraining checkpoint: " + path);
  io::load_branch(c, st.query, "query");
  io::load_branch(c, st.key, "key");
  io::load_queue(c, st.queue);
  io::load_optimizer(c, st.opt);
  st.step = static_cast<int64_t>(c.scalar("step"));
  return static_cast<int64_t>(c.scalar("epoch"));
}

}  // namespace

PretrainResult pretrain(const data::DatasetManifest& m, const cfg::Config& config,
                        const std::string& out_dir, bool resume) {
  const auto t0 = std::chrono::steady_clock::now();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  require(!ec, Err::IoError, "cannot create " + out_dir);

  const model::EncoderConfig enc_cfg = config.encoder_config();
  const aug::MaskConfig mask_cfg = config.mask_config();
  const pcl::PclConfig pcl_cfg = config.pcl_config();
  require(enc_cfg.input_leads == m.leads, Err::ShapeMismatch,
          "model.input_leads=" + std::to_string(enc_cfg.input_leads) + " but dataset has " +
              std::to_string(m.leads) + " leads");
  if (mask_cfg.enable_neighbor) {
    require(m.sample_len % 2 == 0, Err::OddLength,
            "temporal neighboring needs an even sample length");
  }

  auto records = data::load_records(m, "train");
  require(!records.empty(), Err::EmptyTrainSet, "train split has no records");

  const int batch = static_cast<int>(config.get_int("train.batch_size"));
  const int64_t epochs = config.resolved_epochs(true);
  const double base_lr = config.resolved_lr(true);
  const double warmup_frac = config.get_real("train.warmup_frac");
  const uint64_t seed = static_cast<uint64_t>(config.get_int("train.seed"));
  const int64_t checkpoint_every = config.get_int("train.checkpoint_every");
  const int64_t stop_after = config.get_int("train.stop_after_epoch");

  // Pretraining drops the final partial batch so queue bookkeeping sees a
  // constant B.
  const int64_t steps_per_epoch = static_cast<int64_t>(records.size()) / batch;
  require(steps_per_epoch >= 1, Err::BadConfig,
          "train split smaller than one batch (batch_size=" + std::to_string(batch) + ")");
  const int64_t total_steps = epochs * steps_per_epoch;

  pcl::PmqState<float> st(enc_cfg, pcl_cfg, seed);
  st.opt.weight_decay = config.get_real("train.weight_decay");

  int64_t start_epoch = 0;
  if (resume) {
    const int64_t snap = latest_snapshot_epoch(out_dir);
    require(snap >= 0, Err::MissingFile, "no epoch snapshot to resume from in " + out_dir);
    start_epoch = load_pretrain_state(epoch_ckpt_path(out_dir, snap), st);
  }

  std::vector<double> per_epoch_loss;
  bool interrupted = false;
  int64_t epochs_done = start_epoch;
  for (int64_t e = start_epoch; e < epochs; ++e) {
    auto batches = data::iter_batches(records, batch, derive_seed(seed, 0xE70C, static_cast<uint64_t>(e)),
                                      /*drop_last=*/true);
    double loss_sum = 0.0;
    for (size_t i = 0; i < batches.count(); ++i) {
      const double lr = optim::warmup_schedule(st.step, total_steps, base_lr, warmup_frac);
      const data::Batch b = batches.at(i);
      const double loss = pcl::step_contrast(b, st, mask_cfg, pcl_cfg, lr,
                                             derive_seed(seed, 0x57E9, static_cast<uint64_t>(e), i));
      require(std::isfinite(loss), Err::NumericalDivergence,
              "loss is not finite at epoch " + std::to_string(e) + " step " + std::to_string(i));
      loss_sum += loss;
    }
    per_epoch_loss.push_back(loss_sum / static_cast<double>(batches.count()));
    epochs_done = e + 1;

    const bool periodic = checkpoint_every > 0 && epochs_done % checkpoint_every == 0;
    const bool stopping = stop_after > 0 && epochs_done >= stop_after && epochs_done < epochs;
    if (periodic || stopping || epochs_done == epochs) {
      save_pretrain_state(epoch_ckpt_path(out_dir, epochs_done), st, config, epochs_done, m.name);
    }
    if (stopping) {
      interrupted = true;
      break;
    }
  }

  std::string final_path = epoch_ckpt_path(out_dir, epochs_done);
  if (!interrupted) {
    final_path = (fs::path(out_dir) / "pretrain.pmq").string();
    save_pretrain_state(final_path, st, config, epochs_done, m.name);
  }

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json report = {{"phase", "pretrain"},
                 {"dataset", m.name},
                 {"num_train_records", records.size()},
                 {"config", config.to_json()},
                 {"config_hash", hash_hex(config.hash())},
                 {"seed", seed},
                 {"epochs", epochs},
                 {"start_epoch", start_epoch},
                 {"steps_per_epoch", steps_per_epoch},
                 {"per_epoch_loss", per_epoch_loss},
                 {"queue_size", st.queue.size()},
                 {"source_rev", source_rev()},
                 {"wall_time_sec", wall}};
  if (interrupted) report["interrupted_at_epoch"] = epochs_done;
  write_text((fs::path(out_dir) / "report.json").string(), report.dump(2) + "\n");
  write_text((fs::path(out_dir) / "config.resolved").string(), config.resolved_text());

  return {final_path, report, interrupted};
}

// ---------------------------------------------------------------------------
// Finetuning / evaluation
// ---------------------------------------------------------------------------

model::Encoder<float> load_query_encoder(const std::string& ckpt_path,
                                         const model::EncoderConfig& expect) {
  io::Checkpoint c = io::Checkpoint::load(ckpt_path);
  require(c.meta().value("kind", "") == "pretrain", Err::IoError,
          "not a pretraining checkpoint: " + ckpt_path);
  const model::EncoderConfig stored = encoder_config_from_json(c.meta().at("model"));
  require(encoder_config_equal(stored, expect), Err::ShapeMismatch,
          "model.* config does not match the checkpoint's encoder");
  Rng rng(0);
  model::Encoder<float> enc;
  enc.init(stored, rng);
  load_module(c, enc, "query.enc");
  return enc;
}

namespace {

struct Predictions {
  std::vector<int> labels;  // argmax
  MatD scores;              // softmax, N x C
  std::vector<int> truth;
};

Predictions predict(model::Encoder<float>& enc, model::ClassifierHead<float>& cls,
                    const std::vector<data::SampleRecord>& records, int batch_size) {
  Predictions out;
  const int c = cls.num_classes();
  out.scores.resize(static_cast<int>(records.size()), c);
  auto batches = data::iter_batches(records, batch_size, /*seed=*/0, /*drop_last=*/false);
  // seed 0 still shuffles; evaluation order does not matter for metrics but
  // rows must line up with truth, so gather per batch.
  int row = 0;
  std::vector<float> z;
  for (size_t bi = 0; bi < batches.count(); ++bi) {
    const data::Batch b = batches.at(bi);
    MatF zb(b.size(), enc.cfg.output_dim);
    for (int i = 0; i < b.size(); ++i) {
      model::encode_forward(enc, b.values[static_cast<size_t>(i)], nullptr, nullptr,
                            static_cast<model::EncCache<float>*>(nullptr), z);
      std::copy(z.begin(), z.end(), zb.row(i));
    }
    MatF logits;
    model::classifier_forward(cls, zb, /*training=*/false, nullptr,
                              static_cast<model::ClsCache<float>*>(nullptr), logits);
    for (int i = 0; i < b.size(); ++i) {
      const float* lrow = logits.row(i);
      double mx = lrow[0];
      int arg = 0;
      for (int j = 1; j < c; ++j) {
        if (lrow[j] > mx) {
          mx = lrow[j];
          arg = j;
        }
      }
      double denom = 0.0;
      for (int j = 0; j < c; ++j) denom += std::exp(static_cast<double>(lrow[j]) - mx);
      for (int j = 0; j < c; ++j) {
        out.scores(row, j) = std::exp(static_cast<double>(lrow[j]) - mx) / denom;
      }
      out.labels.push_back(arg);
      out.truth.push_back(b.labels[static_cast<size_t>(i)]);
      ++row;
    }
  }
  return out;
}

eval::DatasetMetrics metrics_from(const Predictions& p, int num_classes, int* auroc_skipped) {
  eval::DatasetMetrics dm;
  dm.acc = eval::accuracy(p.labels, p.truth);
  dm.f1_macro = eval::macro_f1(p.labels, p.truth, num_classes);
  dm.auroc_macro = eval::macro_auroc(p.scores, p.truth, auroc_skipped);
  return dm;
}

void require_labels(const data::DatasetManifest& m) {
  for (const auto& e : m.entries) {
    require(e.label != data::kNoLabel, Err::LabelMissing,
            "record " + e.record_path + " has no label");
  }
}

}  // namespace

FinetuneResult finetune(const std::string& pretrain_ckpt, const data::DatasetManifest& m,
                        const cfg::Config& config, const std::string& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  require(!ec, Err::IoError, "cannot create " + out_dir);

  require_labels(m);
  const int num_classes = m.num_classes;
  require(num_classes >= 2, Err::BadConfig, "finetuning needs at least 2 classes");

  const model::EncoderConfig enc_cfg = config.encoder_config();
  require(enc_cfg.input_leads == m.leads, Err::ShapeMismatch,
          "model.input_leads=" + std::to_string(enc_cfg.input_leads) + " but dataset has " +
              std::to_string(m.leads) + " leads");

  const uint64_t seed = static_cast<uint64_t>(config.get_int("train.seed"));
  const double label_ratio = config.get_real("train.label_ratio");
  const bool stratified = config.get_bool("data.stratified_subsample");

  // Encoder: pretrained query branch, or the "Random" baseline.
  model::Encoder<float> enc;
  std::string init_from = "random";
  if (!pretrain_ckpt.empty()) {
    enc = load_query_encoder(pretrain_ckpt, enc_cfg);
    init_from = "query";
  } else {
    Rng rng(derive_seed(seed, 0xF7A2));
    enc.init(enc_cfg, rng);
  }

  model::ClassifierHead<float> cls;
  {
    int hidden = static_cast<int>(config.get_int("model.classifier_hidden"));
    if (hidden <= 0) hidden = enc_cfg.output_dim;
    Rng rng(derive_seed(seed, 0xC1A55));
    cls.init(enc_cfg.output_dim, hidden, num_classes, config.get_real("model.dropout"), rng);
  }

  // Label-ratio subsample of the train split only.
  std::vector<data::ManifestEntry> train_entries;
  for (const auto& e : m.entries) {
    if (e.split == "train") train_entries.push_back(e);
  }
  require(!train_entries.empty(), Err::EmptyTrainSet, "train split has no records");
  auto picked = data::subsample_labels(train_entries, label_ratio, derive_seed(seed, 0x5AB5),
                                       stratified);
  data::DatasetManifest sub = m;
  sub.entries = picked;
  auto train_records = data::load_records(sub, "train");
  auto valid_records = data::load_records(m, "valid");
  auto test_records = data::load_records(m, "test");
  require(!valid_records.empty(), Err::EmptyTrainSet, "valid split has no records");
  require(!test_records.empty(), Err::EmptyTrainSet, "test split has no records");

  const int batch = static_cast<int>(config.get_int("train.batch_size"));
  const int64_t epochs = config.resolved_epochs(false);
  const double base_lr = config.resolved_lr(false);
  const double warmup_frac = config.get_real("train.warmup_frac");
  const int64_t steps_per_epoch =
      (static_cast<int64_t>(train_records.size()) + batch - 1) / batch;
  const int64_t total_steps = epochs * steps_per_epoch;

  optim::AdamW<float> opt;
  opt.weight_decay = config.get_real("train.weight_decay");
  opt.add_module(enc, "enc");
  opt.add_module(cls, "cls");

  std::vector<double> val_f1;
  std::vector<double> train_loss;
  model::Encoder<float> best_enc = enc;
  model::ClassifierHead<float> best_cls = cls;
  double best_f1 = -1.0;
  int64_t step = 0;

  std::vector<float> z;
  for (int64_t e = 0; e < epochs; ++e) {
    // Finetuning keeps partial batches.
    auto batches = data::iter_batches(train_records, batch,
                                      derive_seed(seed, 0xF7E0, static_cast<uint64_t>(e)), false);
    double loss_sum = 0.0;
    for (size_t i = 0; i < batches.count(); ++i) {
      const data::Batch b = batches.at(i);
      std::vector<model::EncCache<float>> caches(static_cast<size_t>(b.size()));
      MatF zb(b.size(), enc_cfg.output_dim);
      for (int s = 0; s < b.size(); ++s) {
        model::encode_forward(enc, b.values[static_cast<size_t>(s)], nullptr, nullptr,
                              &caches[static_cast<size_t>(s)], z);
        std::copy(z.begin(), z.end(), zb.row(s));
      }
      model::ClsCache<float> ccache;
      MatF logits;
      Rng drop_rng(derive_seed(seed, 0xD0, static_cast<uint64_t>(e), i));
      model::classifier_forward(cls, zb, /*training=*/true, &drop_rng, &ccache, logits);
      MatF dlogits;
      const double loss = cross_entropy(logits, b.labels, &dlogits);
      require(std::isfinite(loss), Err::NumericalDivergence,
              "loss is not finite at epoch " + std::to_string(e));
      loss_sum += loss;

      zero_module_grads(enc);
      zero_module_grads(cls);
      MatF dz;
      model::classifier_backward(cls, ccache, dlogits, &dz);
      std::vector<float> drow(static_cast<size_t>(enc_cfg.output_dim));
      for (int s = 0; s < b.size(); ++s) {
        std::copy(dz.row(s), dz.row(s) + enc_cfg.output_dim, drow.begin());
        model::encode_backward(enc, caches[static_cast<size_t>(s)], nullptr, drow);
      }
      opt.step(optim::warmup_schedule(step, total_steps, base_lr, warmup_frac));
      ++step;
    }
    train_loss.push_back(loss_sum / static_cast<double>(batches.count()));

    auto vp = predict(enc, cls, valid_records, batch);
    const double f1 = eval::macro_f1(vp.labels, vp.truth, num_classes);
    val_f1.push_back(f1);
    if (f1 > best_f1) {
      best_f1 = f1;
      best_enc = enc;
      best_cls = cls;
    }
  }

  const std::string select = config.get_string("train.select");
  require(select == "best" || select == "last", Err::BadConfig,
          "train.select must be 'best' or 'last'");
  int64_t selected_epoch = epochs - 1;
  if (select == "best") {
    selected_epoch = select_best_epoch(val_f1);
    enc = best_enc;
    cls = best_cls;
  }

  int auroc_skipped = 0;
  auto tp = predict(enc, cls, test_records, batch);
  const eval::DatasetMetrics test = metrics_from(tp, num_classes, &auroc_skipped);

  // Classifier checkpoint.
  const std::string ckpt_path = (fs::path(out_dir) / "classifier.pmq").string();
  {
    io::CheckpointWriter w;
    w.meta()["kind"] = "classifier";
    w.meta()["config"] = config.to_json();
    w.meta()["model"] = encoder_config_json(enc_cfg);
    w.meta()["num_classes"] = num_classes;
    w.meta()["classifier_hidden"] = cls.lin1.out;
    w.meta()["init_from"] = init_from;
    w.meta()["pretrain_checkpoint"] = pretrain_ckpt;
    w.meta()["selected_epoch"] = selected_epoch;
    add_module_arrays(w, enc, "enc");
    add_module_arrays(w, cls, "cls");
    cls.visit_buffers("cls", [&](const std::string& name, std::vector<float>& buf) {
      w.add_vector(name, buf);
    });
    w.save(ckpt_path);
  }

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json report;
  report[m.name] = {{"acc", test.acc}, {"f1_macro", test.f1_macro}, {"auroc_macro", test.auroc_macro}};
  report["overall"] = (test.acc + test.f1_macro + test.auroc_macro) / 3.0;
  report["config_hash"] = hash_hex(config.hash());
  report["seed"] = seed;
  report["phase"] = "finetune";
  report["init_from"] = init_from;
  report["label_ratio"] = label_ratio;
  report["stratified_subsample"] = stratified;
  report["num_train_records"] = train_records.size();
  report["selected_epoch"] = selected_epoch;
  report["val_f1"] = val_f1;
  report["train_loss"] = train_loss;
  report["auroc_skipped_classes"] = auroc_skipped;
  report["source_rev"] = source_rev();
  report["wall_time_sec"] = wall;
  write_text((fs::path(out_dir) / "report.json").string(), report.dump(2) + "\n");
  write_text((fs::path(out_dir) / "config.resolved").string(), config.resolved_text());

  return {ckpt_path, test, report};
}

eval::DatasetMetrics evaluate_classifier(const std::string& classifier_ckpt,
                                         const data::DatasetManifest& m,
                                         const cfg::Config& config, const std::string& split,
                                         const std::string& out_dir) {
  io::Checkpoint c = io::Checkpoint::load(classifier_ckpt);
  require(c.meta().value("kind", "") == "classifier", Err::IoError,
          "not a classifier checkpoint: " + classifier_ckpt);
  const model::EncoderConfig enc_cfg = encoder_config_from_json(c.meta().at("model"));
  const int num_classes = c.meta().at("num_classes").get<int>();
  require(num_classes == m.num_classes, Err::ClassCountMismatch,
          "checkpoint has " + std::to_string(num_classes) + " classes, dataset has " +
              std::to_string(m.num_classes));
  require(enc_cfg.input_leads == m.leads, Err::ShapeMismatch, "lead count mismatch");
  require_labels(m);

  Rng rng(0);
  model::Encoder<float> enc;
  enc.init(enc_cfg, rng);
  model::ClassifierHead<float> cls;
  cls.init(enc_cfg.output_dim, c.meta().at("classifier_hidden").get<int>(), num_classes,
           config.get_real("model.dropout"), rng);
  load_module(c, enc, "enc");
  load_module(c, cls, "cls");
  cls.visit_buffers("cls", [&](const std::string& name, std::vector<float>& buf) {
    const auto& a = c.array(name);
    require(a.size() == buf.size(), Err::ShapeMismatch, "checkpoint size mismatch: " + name);
    buf = a;
  });

  auto records = data::load_records(m, split);
  require(!records.empty(), Err::Empty, "split '" + split + "' has no records");
  int auroc_skipped = 0;
  auto p = predict(enc, cls, records, static_cast<int>(config.get_int("train.batch_size")));
  const eval::DatasetMetrics dm = metrics_from(p, num_classes, &auroc_skipped);

  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    require(!ec, Err::IoError, "cannot create " + out_dir);
    json report;
    report[m.name] = {{"acc", dm.acc}, {"f1_macro", dm.f1_macro}, {"auroc_macro", dm.auroc_macro}};
    report["overall"] = (dm.acc + dm.f1_macro + dm.auroc_macro) / 3.0;
    report["config_hash"] = hash_hex(config.hash());
    report["seed"] = config.get_int("train.seed");
    report["phase"] = "evaluate";
    report["split"] = split;
    report["auroc_skipped_classes"] = auroc_skipped;
    write_text((fs::path(out_dir) / "report.json").string(), report.dump(2) + "\n");
  }
  return dm;
}

}  // namespace pmq::train
