#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "pmq/common.hpp"
#include "pmq/config.hpp"

using namespace pmq;

TEST_CASE("defaults follow the documented hyperparameters") {
  cfg::Config c;
  CHECK(c.get_real("pcl.tau") == 0.1);
  CHECK(c.get_real("pcl.momentum_m") == 0.999);
  CHECK(c.get_int("pcl.queue_size") == 16384);
  CHECK(c.get_int("train.batch_size") == 256);
  CHECK(c.get_int("model.output_dim") == 320);
  CHECK(c.get_int("model.num_blocks") == 10);
  CHECK(c.get_int("model.hidden_dim") == 64);
  CHECK(c.get_int("data.sample_len") == 300);
  CHECK(c.get_int("train.seed") == 41);

  CHECK(c.resolved_epochs(true) == 100);
  CHECK(c.resolved_epochs(false) == 50);
  CHECK(c.resolved_lr(true) == 1e-3);
  CHECK(c.resolved_lr(false) == 1e-4);
  c.set("train.epochs", "7");
  c.set("train.lr", "0.5");
  CHECK(c.resolved_epochs(true) == 7);
  CHECK(c.resolved_lr(false) == 0.5);
}

TEST_CASE("unknown keys and malformed values are rejected") {
  cfg::Config c;
  CHECK_THROWS_AS(c.set("nonsense.key", "1"), Error);
  CHECK_THROWS_AS(c.set("pcl.tau", "warm"), Error);
  CHECK_THROWS_AS(c.set("pcl.queue_size", "1.5"), Error);
  CHECK_THROWS_AS(c.set("aug.enable_neighbor", "maybe"), Error);
  CHECK_THROWS_AS(c.get_bool("pcl.tau"), Error);
}

TEST_CASE("config files parse key = value lines with comments") {
  const std::string path = "pmq_tmp_config_test.cfg";
  {
    std::ofstream f(path);
    f << "# a comment\n"
      << "\n"
      << "pcl.tau = 0.25\n"
      << "aug.enable_freq_mask = false\n"
      << "train.batch_size=64\n";
  }
  cfg::Config c;
  c.load_file(path);
  CHECK(c.get_real("pcl.tau") == 0.25);
  CHECK(c.get_bool("aug.enable_freq_mask") == false);
  CHECK(c.get_int("train.batch_size") == 64);
  std::filesystem::remove(path);

  cfg::Config c2;
  CHECK_THROWS_AS(c2.load_file("does_not_exist.cfg"), Error);
}

TEST_CASE("overrides round-trip exactly into the resolved text") {
  cfg::Config c;
  c.set("aug.freq_frac", "0.25");
  c.set("pcl.queue_size", "512");
  c.set("train.select", "last");
  const std::string text = c.resolved_text();
  CHECK(text.find("aug.freq_frac = 0.25\n") != std::string::npos);
  CHECK(text.find("pcl.queue_size = 512\n") != std::string::npos);
  CHECK(text.find("train.select = last\n") != std::string::npos);

  // The resolved text reloads to the same configuration.
  const std::string path = "pmq_tmp_config_roundtrip.cfg";
  {
    std::ofstream f(path);
    f << text;
  }
  cfg::Config back;
  back.load_file(path);
  CHECK(back.resolved_text() == text);
  CHECK(back.hash() == c.hash());
  std::filesystem::remove(path);
}

TEST_CASE("hash distinguishes configurations") {
  cfg::Config a, b;
  CHECK(a.hash() == b.hash());
  b.set("pcl.tau", "0.2");
  CHECK(a.hash() != b.hash());
}

TEST_CASE("typed bundles mirror the flat keys") {
  cfg::Config c;
  c.set("model.hidden_dim", "32");
  c.set("model.mean_pool", "true");
  c.set("aug.timestamp_p", "0.7");
  c.set("pcl.enable_queue", "false");

  auto e = c.encoder_config();
  CHECK(e.hidden_dim == 32);
  CHECK(e.mean_pool);
  CHECK(e.output_dim == 320);

  auto m = c.mask_config();
  CHECK(m.timestamp_p == 0.7);
  CHECK(m.enable_neighbor);

  auto p = c.pcl_config();
  CHECK(!p.enable_queue);
  CHECK(p.tau == 0.1);
}

TEST_CASE("typed bundles validate documented ranges") {
  cfg::Config c;
  c.set("pcl.tau", "1.5");
  CHECK_THROWS_AS(c.pcl_config(), Error);
  c.set("pcl.tau", "0.1");
  c.set("pcl.queue_size", "0");
  CHECK_THROWS_AS(c.pcl_config(), Error);
  c.set("pcl.queue_size", "8");
  CHECK_NOTHROW(c.pcl_config());

  c.set("model.kernel_size", "4");
  CHECK_THROWS_AS(c.encoder_config(), Error);
  c.set("model.kernel_size", "3");
  CHECK_NOTHROW(c.encoder_config());
}
