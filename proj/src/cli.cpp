#include "pmq/cli.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "pmq/common.hpp"
#include "pmq/config.hpp"
#include "pmq/data.hpp"
#include "pmq/train.hpp"

namespace fs = std::filesystem;

namespace pmq::cli {

using nlohmann::json;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out = "out";
  int64_t seed = -1;
};

void attach_common(CLI::App* cmd, CommonArgs& args, bool with_out = true) {
  cmd->add_option("--config", args.config_path, "Run config file (key = value lines)");
  cmd->add_option("--set", args.sets, "Override a config key, e.g. --set pcl.tau=0.2")
      ->take_all();
  cmd->add_option("--seed", args.seed, "Override train.seed");
  if (with_out) cmd->add_option("--out", args.out, "Output directory");
}

cfg::Config build_config(const CommonArgs& args) {
  cfg::Config c;
  if (!args.config_path.empty()) c.load_file(args.config_path);
  for (const std::string& kv : args.sets) {
    const size_t eq = kv.find('=');
    require(eq != std::string::npos, Err::BadConfig, "--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (args.seed >= 0) c.set("train.seed", std::to_string(args.seed));
  return c;
}

// data.manifest, optionally rooted at $PMQ_DATA_DIR when relative.
std::string resolve_manifest(const cfg::Config& c) {
  std::string path = c.get_string("data.manifest");
  require(!path.empty(), Err::BadConfig, "data.manifest is not set");
  if (fs::path(path).is_relative()) {
    if (const char* root = std::getenv("PMQ_DATA_DIR")) {
      path = (fs::path(root) / path).string();
    }
  }
  return path;
}

std::vector<int64_t> parse_int_list(const std::string& csv, const std::string& what) {
  std::vector<int64_t> out;
  std::string cur;
  for (char ch : csv + ",") {
    if (ch == ',') {
      if (!cur.empty()) {
        try {
          out.push_back(std::stoll(cur));
        } catch (...) {
          fail(Err::BadConfig, "bad " + what + " value: '" + cur + "'");
        }
        cur.clear();
      }
    } else if (ch != ' ') {
      cur.push_back(ch);
    }
  }
  return out;
}

void run_tasks(std::vector<std::function<void()>>& tasks, int jobs) {
  if (jobs <= 1) {
    for (auto& t : tasks) t();
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      try {
        tasks[i]();
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  require(f.good(), Err::IoError, "cannot write " + path);
  f << text;
}

// One pretrain+finetune pipeline in its own directory; returns test macro-F1.
double run_pipeline(const cfg::Config& config, const std::string& dir) {
  auto manifest = data::load_manifest(resolve_manifest(config));
  auto pre = train::pretrain(manifest, config, (fs::path(dir) / "pretrain").string());
  auto ft = train::finetune(pre.checkpoint_path, manifest, config,
                            (fs::path(dir) / "finetune").string());
  return ft.test.f1_macro;
}

// ---------------------------------------------------------------------------

int cmd_synth(const CommonArgs& args) {
  cfg::Config c = build_config(args);
  data::SynthConfig sc;
  sc.num_patients = static_cast<int>(c.get_int("synth.num_patients"));
  sc.trials_per_patient = static_cast<int>(c.get_int("synth.trials_per_patient"));
  sc.trial_len = static_cast<int>(c.get_int("synth.trial_len"));
  sc.leads = static_cast<int>(c.get_int("synth.leads"));
  sc.num_classes = static_cast<int>(c.get_int("synth.num_classes"));
  sc.noise_sigma = c.get_real("synth.noise_sigma");
  sc.train_frac = c.get_real("synth.train_frac");
  sc.valid_frac = c.get_real("synth.valid_frac");
  sc.test_frac = c.get_real("synth.test_frac");
  sc.sample_len = static_cast<int>(c.get_int("data.sample_len"));
  sc.seed = static_cast<uint64_t>(c.get_int("train.seed"));
  auto m = data::generate_synthetic(sc, args.out);
  std::cout << "synth: wrote " << m.entries.size() << " records for " << sc.num_patients
            << " patients to " << args.out << "/manifest.csv\n";
  return 0;
}

int cmd_validate(const std::string& manifest_path) {
  auto m = data::load_manifest(manifest_path);
  std::set<int64_t> patients;
  for (const auto& e : m.entries) patients.insert(e.patient_id);
  std::cout << "validate: ok name=" << m.name << " records=" << m.entries.size()
            << " patients=" << patients.size() << " classes=" << m.num_classes << " shape=("
            << m.sample_len << "," << m.leads << ")\n";
  return 0;
}

int cmd_pretrain(const CommonArgs& args, bool resume) {
  cfg::Config c = build_config(args);
  auto m = data::load_manifest(resolve_manifest(c));
  auto res = train::pretrain(m, c, args.out, resume);
  const auto& losses = res.report["per_epoch_loss"];
  std::cout << "pretrain: wrote " << res.checkpoint_path;
  if (!losses.empty()) std::cout << " (final epoch loss " << losses.back().get<double>() << ")";
  std::cout << "\n";
  return 0;
}

int cmd_finetune(const CommonArgs& args, const std::string& checkpoint) {
  cfg::Config c = build_config(args);
  auto m = data::load_manifest(resolve_manifest(c));
  auto res = train::finetune(checkpoint, m, c, args.out);
  std::cout << "finetune: test acc=" << res.test.acc << " f1_macro=" << res.test.f1_macro
            << " auroc_macro=" << res.test.auroc_macro << " -> " << res.checkpoint_path << "\n";
  return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& checkpoint, const std::string& split) {
  cfg::Config c = build_config(args);
  auto m = data::load_manifest(resolve_manifest(c));
  auto dm = train::evaluate_classifier(checkpoint, m, c, split, args.out);
  std::cout << "evaluate: " << split << " acc=" << dm.acc << " f1_macro=" << dm.f1_macro
            << " auroc_macro=" << dm.auroc_macro << "\n";
  return 0;
}

int cmd_ablate(const CommonArgs& args, const std::string& seeds_csv, int jobs) {
  const cfg::Config base = build_config(args);
  std::vector<int64_t> seeds = seeds_csv.empty()
                                   ? std::vector<int64_t>{base.get_int("train.seed")}
                                   : parse_int_list(seeds_csv, "--seeds");
  require(!seeds.empty(), Err::BadConfig, "--seeds is empty");

  // Table rows: each ablation flips exactly one flag off the full model.
  const std::vector<std::pair<std::string, std::pair<std::string, std::string>>> rows = {
      {"wo_mask_t", {"aug.enable_time_mask", "false"}},
      {"wo_mask_f", {"aug.enable_freq_mask", "false"}},
      {"wo_neighbor", {"aug.enable_neighbor", "false"}},
      {"wo_queue", {"pcl.enable_queue", "false"}},
      {"all", {"", ""}},
  };

  std::vector<std::vector<double>> f1(rows.size(), std::vector<double>(seeds.size(), 0.0));
  std::vector<std::function<void()>> tasks;
  for (size_t r = 0; r < rows.size(); ++r) {
    for (size_t s = 0; s < seeds.size(); ++s) {
      tasks.push_back([&, r, s] {
        cfg::Config c = base;
        if (!rows[r].second.first.empty()) c.set(rows[r].second.first, rows[r].second.second);
        c.set("train.seed", std::to_string(seeds[s]));
        const std::string dir =
            (fs::path(args.out) / rows[r].first / ("seed_" + std::to_string(seeds[s]))).string();
        f1[r][s] = run_pipeline(c, dir);
      });
    }
  }
  run_tasks(tasks, jobs);

  json out_rows = json::array();
  std::string csv = "config,seed,f1_macro\n";
  for (size_t r = 0; r < rows.size(); ++r) {
    json overrides = json::object();
    if (!rows[r].second.first.empty()) overrides[rows[r].second.first] = false;
    double mean = 0.0;
    for (size_t s = 0; s < seeds.size(); ++s) {
      mean += f1[r][s];
      csv += rows[r].first + "," + std::to_string(seeds[s]) + "," + std::to_string(f1[r][s]) + "\n";
    }
    mean /= static_cast<double>(seeds.size());
    out_rows.push_back({{"name", rows[r].first},
                        {"overrides", overrides},
                        {"seeds", seeds},
                        {"f1_per_seed", f1[r]},
                        {"f1_mean", mean}});
  }
  json report = {{"rows", out_rows},
                 {"shared_seeds", seeds},
                 {"base_config", base.to_json()}};
  write_text_file((fs::path(args.out) / "ablate.json").string(), report.dump(2) + "\n");
  write_text_file((fs::path(args.out) / "ablate.csv").string(), csv);
  std::cout << "ablate: " << out_rows.size() << " configurations x " << seeds.size()
            << " seeds -> " << args.out << "/ablate.json\n";
  return 0;
}

int cmd_sweep_queue(const CommonArgs& args, const std::string& sizes_csv,
                    const std::string& seeds_csv, int jobs) {
  const cfg::Config base = build_config(args);
  auto sizes = parse_int_list(sizes_csv, "--sizes");
  require(!sizes.empty(), Err::BadConfig, "--sizes is empty");
  const int64_t batch = base.get_int("train.batch_size");
  for (int64_t m : sizes) {
    require(m >= batch, Err::BadConfig,
            "queue size " + std::to_string(m) + " is smaller than train.batch_size " +
                std::to_string(batch));
  }
  std::vector<int64_t> seeds = seeds_csv.empty()
                                   ? std::vector<int64_t>{base.get_int("train.seed")}
                                   : parse_int_list(seeds_csv, "--seeds");

  std::vector<std::vector<double>> f1(sizes.size(), std::vector<double>(seeds.size(), 0.0));
  std::vector<std::function<void()>> tasks;
  for (size_t i = 0; i < sizes.size(); ++i) {
    for (size_t s = 0; s < seeds.size(); ++s) {
      tasks.push_back([&, i, s] {
        cfg::Config c = base;
        c.set("pcl.queue_size", std::to_string(sizes[i]));
        c.set("train.seed", std::to_string(seeds[s]));
        const std::string dir = (fs::path(args.out) / ("m_" + std::to_string(sizes[i])) /
                                 ("seed_" + std::to_string(seeds[s])))
                                    .string();
        f1[i][s] = run_pipeline(c, dir);
      });
    }
  }
  run_tasks(tasks, jobs);

  std::string csv = "queue_size,seed,f1_macro\n";
  json out_rows = json::array();
  for (size_t i = 0; i < sizes.size(); ++i) {
    double mean = 0.0;
    for (size_t s = 0; s < seeds.size(); ++s) {
      mean += f1[i][s];
      csv += std::to_string(sizes[i]) + "," + std::to_string(seeds[s]) + "," +
             std::to_string(f1[i][s]) + "\n";
    }
    mean /= static_cast<double>(seeds.size());
    out_rows.push_back({{"queue_size", sizes[i]}, {"f1_per_seed", f1[i]}, {"f1_mean", mean}});
  }
  std::error_code ec;
  fs::create_directories(args.out, ec);
  write_text_file((fs::path(args.out) / "sweep.csv").string(), csv);
  json report = {{"rows", out_rows}, {"seeds", seeds}, {"base_config", base.to_json()}};
  write_text_file((fs::path(args.out) / "sweep.json").string(), report.dump(2) + "\n");
  std::cout << "sweep-queue: " << sizes.size() << " sizes x " << seeds.size() << " seeds -> "
            << args.out << "/sweep.csv\n";
  return 0;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Patient-contrastive ECG pretraining with a patient memory queue"};
  app.require_subcommand(1);

  CommonArgs synth_args, pre_args, ft_args, ev_args, ab_args, sw_args;
  std::string validate_manifest, ft_ckpt, ev_ckpt, ev_split = "test";
  std::string ab_seeds, sw_seeds, sw_sizes;
  int ab_jobs = 1, sw_jobs = 1;
  bool pre_resume = false;

  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  attach_common(synth, synth_args);

  CLI::App* validate = app.add_subcommand("validate", "Validate a dataset manifest");
  validate->add_option("--manifest", validate_manifest, "Manifest CSV path")->required();

  CLI::App* pretrain = app.add_subcommand("pretrain", "Self-supervised pretraining");
  attach_common(pretrain, pre_args);
  pretrain->add_flag("--resume", pre_resume, "Resume from the newest epoch snapshot in --out");

  CLI::App* finetune = app.add_subcommand("finetune", "Supervised finetuning");
  attach_common(finetune, ft_args);
  finetune->add_option("--checkpoint", ft_ckpt,
                       "Pretraining checkpoint (omit for random initialization)");

  CLI::App* evaluate = app.add_subcommand("evaluate", "Evaluate a saved classifier");
  attach_common(evaluate, ev_args);
  evaluate->add_option("--checkpoint", ev_ckpt, "Classifier checkpoint")->required();
  evaluate->add_option("--split", ev_split, "Split to evaluate (default test)");

  CLI::App* ablate = app.add_subcommand("ablate", "Run the ablation grid");
  attach_common(ablate, ab_args);
  ablate->add_option("--seeds", ab_seeds, "Comma-separated seeds (default train.seed)");
  ablate->add_option("--jobs", ab_jobs, "Parallel runs");

  CLI::App* sweep = app.add_subcommand("sweep-queue", "Sweep the memory queue size");
  attach_common(sweep, sw_args);
  sweep->add_option("--sizes", sw_sizes, "Comma-separated queue sizes")->required();
  sweep->add_option("--seeds", sw_seeds, "Comma-separated seeds (default train.seed)");
  sweep->add_option("--jobs", sw_jobs, "Parallel runs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_args);
    if (validate->parsed()) return cmd_validate(validate_manifest);
    if (pretrain->parsed()) return cmd_pretrain(pre_args, pre_resume);
    if (finetune->parsed()) return cmd_finetune(ft_args, ft_ckpt);
    if (evaluate->parsed()) return cmd_evaluate(ev_args, ev_ckpt, ev_split);
    if (ablate->parsed()) return cmd_ablate(ab_args, ab_seeds, ab_jobs);
    if (sweep->parsed()) return cmd_sweep_queue(sw_args, sw_sizes, sw_seeds, sw_jobs);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: Unhandled: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace pmq::cli
