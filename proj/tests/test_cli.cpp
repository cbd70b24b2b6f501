#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

CmdResult run_cli(const std::string& args, const std::string& env = "") {
  const std::string out_file = "pmq_tmp_cli_output.txt";
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string(PMQ_CLI_PATH) + " " +
                          args + " > " + out_file + " 2>&1";
  const int rc = std::system(cmd.c_str());
  CmdResult r;
  r.exit_code = WEXITSTATUS(rc);
  std::ifstream f(out_file);
  r.output = std::string(std::istreambuf_iterator<char>(f), {});
  return r;
}

std::string fresh_dir(const std::string& name) {
  const std::string dir = "pmq_tmp_cli_" + name;
  fs::remove_all(dir);
  return dir;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

// Tiny-but-complete pipeline settings shared by the slow commands.
const char* kMicro =
    " --set synth.num_patients=10 --set synth.trials_per_patient=2"
    " --set synth.trial_len=128 --set data.sample_len=64 --set synth.leads=2"
    " --set synth.num_classes=2 --set synth.train_frac=0.6 --set synth.valid_frac=0.2"
    " --set synth.test_frac=0.2 --set model.input_leads=2 --set model.hidden_dim=8"
    " --set model.output_dim=8 --set model.num_blocks=1 --set train.batch_size=4"
    " --set pcl.queue_size=8 --set train.epochs=2";

}  // namespace

TEST_CASE("synth then validate round-trips and is idempotent") {
  const std::string ds = fresh_dir("ds");
  auto r = run_cli(std::string("synth --out ") + ds + kMicro);
  CAPTURE(r.output);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("synth: wrote") != std::string::npos);

  auto v = run_cli("validate --manifest " + ds + "/manifest.csv");
  CAPTURE(v.output);
  CHECK(v.exit_code == 0);
  CHECK(v.output.find("patients=10") != std::string::npos);
  CHECK(v.output.find("shape=(64,2)") != std::string::npos);

  const std::string before = read_file(ds + "/manifest.csv");
  auto again = run_cli(std::string("synth --out ") + ds + kMicro);
  CHECK(again.exit_code == 0);
  CHECK(read_file(ds + "/manifest.csv") == before);
}

TEST_CASE("validate reports the leaking patient and exits nonzero") {
  const std::string dir = fresh_dir("leak");
  fs::create_directories(dir);
  {
    // Two rows for patient 7 in different splits; reuse a real record file.
    const std::string ds = fresh_dir("leak_ds");
    REQUIRE(run_cli(std::string("synth --out ") + ds + kMicro).exit_code == 0);
    std::string rec;
    for (const auto& e : fs::directory_iterator(ds + "/records")) {
      rec = fs::absolute(e.path()).string();
      break;
    }
    std::ofstream f(dir + "/manifest.csv");
    f << "record_path,patient_id,trial_id,label,split\n";
    f << rec << ",7,0,0,train\n";
    f << rec << ",7,1,1,test\n";
  }
  auto r = run_cli("validate --manifest " + dir + "/manifest.csv");
  CAPTURE(r.output);
  CHECK(r.exit_code != 0);
  CHECK(r.output.find("SplitLeak") != std::string::npos);
  CHECK(r.output.find("7") != std::string::npos);
}

TEST_CASE("unknown --set keys are rejected") {
  auto r = run_cli("pretrain --set nonsense.key=1 --out pmq_tmp_cli_nope");
  CHECK(r.exit_code != 0);
  CHECK(r.output.find("BadConfig") != std::string::npos);
}

TEST_CASE("pretrain, finetune, evaluate pipeline") {
  const std::string ds = fresh_dir("pipe_ds");
  REQUIRE(run_cli(std::string("synth --out ") + ds + kMicro).exit_code == 0);

  const std::string pre = fresh_dir("pipe_pre");
  auto p = run_cli(std::string("pretrain --out ") + pre + kMicro + " --set data.manifest=" + ds +
                   "/manifest.csv --set aug.freq_frac=0.25");
  CAPTURE(p.output);
  REQUIRE(p.exit_code == 0);
  CHECK(fs::exists(pre + "/pretrain.pmq"));
  CHECK(fs::exists(pre + "/report.json"));
  // --set values round-trip into the resolved config.
  const std::string resolved = read_file(pre + "/config.resolved");
  CHECK(resolved.find("aug.freq_frac = 0.25\n") != std::string::npos);
  CHECK(resolved.find("train.batch_size = 4\n") != std::string::npos);

  const std::string ft = fresh_dir("pipe_ft");
  auto f = run_cli(std::string("finetune --out ") + ft + kMicro + " --set data.manifest=" + ds +
                   "/manifest.csv --set train.label_ratio=0.5 --checkpoint " + pre +
                   "/pretrain.pmq");
  CAPTURE(f.output);
  REQUIRE(f.exit_code == 0);
  CHECK(fs::exists(ft + "/classifier.pmq"));
  json ft_report = json::parse(read_file(ft + "/report.json"));
  CHECK(ft_report["init_from"] == "query");
  CHECK(ft_report["label_ratio"] == 0.5);
  CHECK(ft_report.contains("overall"));

  const std::string ev = fresh_dir("pipe_ev");
  auto e = run_cli(std::string("evaluate --out ") + ev + kMicro + " --set data.manifest=" + ds +
                   "/manifest.csv --checkpoint " + ft + "/classifier.pmq --split test");
  CAPTURE(e.output);
  REQUIRE(e.exit_code == 0);
  json ev_report = json::parse(read_file(ev + "/report.json"));
  CHECK(ev_report.contains("overall"));
  CHECK(ev_report["split"] == "test");

  // Random-init baseline path (no checkpoint).
  const std::string rnd = fresh_dir("pipe_rnd");
  auto rr = run_cli(std::string("finetune --out ") + rnd + kMicro + " --set data.manifest=" + ds +
                    "/manifest.csv");
  REQUIRE(rr.exit_code == 0);
  json rnd_report = json::parse(read_file(rnd + "/report.json"));
  CHECK(rnd_report["init_from"] == "random");
}

TEST_CASE("ablate emits exactly the five configurations with one flag apiece") {
  const std::string ds = fresh_dir("ab_ds");
  REQUIRE(run_cli(std::string("synth --out ") + ds + kMicro).exit_code == 0);

  const std::string out = fresh_dir("ab_out");
  auto r = run_cli(std::string("ablate --out ") + out + kMicro + " --set data.manifest=" + ds +
                   "/manifest.csv --set train.epochs=1 --jobs 2");
  CAPTURE(r.output);
  REQUIRE(r.exit_code == 0);

  json report = json::parse(read_file(out + "/ablate.json"));
  const auto& rows = report["rows"];
  REQUIRE(rows.size() == 5);

  const std::map<std::string, std::string> expected = {
      {"wo_mask_t", "aug.enable_time_mask"},
      {"wo_mask_f", "aug.enable_freq_mask"},
      {"wo_neighbor", "aug.enable_neighbor"},
      {"wo_queue", "pcl.enable_queue"},
      {"all", ""},
  };
  for (const auto& row : rows) {
    const std::string name = row["name"];
    REQUIRE(expected.count(name) == 1);
    const auto& overrides = row["overrides"];
    if (name == "all") {
      CHECK(overrides.empty());
    } else {
      // Exactly one flag differs from the full model, and it is the one.
      REQUIRE(overrides.size() == 1);
      CHECK(overrides.contains(expected.at(name)));
      CHECK(overrides[expected.at(name)] == false);
    }
    CHECK(row["seeds"].size() == 1);
    CHECK(row["f1_per_seed"].size() == 1);
  }
  CHECK(fs::exists(out + "/ablate.csv"));
}

TEST_CASE("PMQ_DATA_DIR roots relative manifest paths") {
  const std::string ds = fresh_dir("env_ds");
  REQUIRE(run_cli(std::string("synth --out ") + ds + kMicro).exit_code == 0);
  const std::string out = fresh_dir("env_pre");
  auto r = run_cli(std::string("pretrain --out ") + out + kMicro +
                       " --set data.manifest=manifest.csv --set train.epochs=1",
                   "PMQ_DATA_DIR=" + fs::absolute(ds).string());
  CAPTURE(r.output);
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(out + "/pretrain.pmq"));
}

TEST_CASE("sweep-queue rejects sizes below the batch size and writes plot data") {
  const std::string ds = fresh_dir("sw_ds");
  REQUIRE(run_cli(std::string("synth --out ") + ds + kMicro).exit_code == 0);

  auto bad = run_cli(std::string("sweep-queue --sizes 2 --out pmq_tmp_cli_sw_bad") + kMicro +
                     " --set data.manifest=" + ds + "/manifest.csv");
  CHECK(bad.exit_code != 0);
  CHECK(bad.output.find("smaller than train.batch_size") != std::string::npos);

  const std::string out = fresh_dir("sw_out");
  auto r = run_cli(std::string("sweep-queue --sizes 8 --out ") + out + kMicro +
                   " --set data.manifest=" + ds + "/manifest.csv --set train.epochs=1");
  CAPTURE(r.output);
  REQUIRE(r.exit_code == 0);
  const std::string csv = read_file(out + "/sweep.csv");
  CHECK(csv.find("queue_size,seed,f1_macro") != std::string::npos);
  CHECK(csv.find("8,41,") != std::string::npos);
  json report = json::parse(read_file(out + "/sweep.json"));
  CHECK(report["rows"].size() == 1);
}
