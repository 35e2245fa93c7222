#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "ufc/train.hpp"

using namespace ufc;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("ufc_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Config tiny_config() {
  auto c = config::parse("plan = tiny\nkey_dim = 4\ndata.count = 6\ndata.extent = 16\nepochs = 2\nbatch = 2\nlr = 1e-3\n");
  c.train.val_fraction = 0.34;
  return c;
}

std::vector<Sample<float>> tiny_samples(const Config& c) {
  std::vector<Sample<float>> out;
  for (std::size_t i = 0; i < c.data.count; ++i) {
    auto p = data::make_pair<float>(c.data, i);
    out.push_back({i, p.source, p.target, p.flow});
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int run_cli(const std::string& args, const fs::path& cwd) {
  const auto cmd = "cd '" + cwd.string() + "' && '" UFC_CLI_PATH "' " + args + " > cli.stdout 2> cli.stderr";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    const auto rel = fs::relative(e.path(), dir).generic_string();
    if (e.is_regular_file() && rel != "cli.stdout" && rel != "cli.stderr") out[rel] = slurp(e.path());
  }
  return out;
}

const char* kTinyConfig =
    "# tiny end-to-end configuration\n"
    "plan = tiny\n"
    "key_dim = 4\n"
    "data.count = 5\n"
    "data.extent = 32\n"
    "epochs = 1\n"
    "batch = 2\n"
    "lr = 1e-3\n"
    "val_fraction = 0.4\n"
    "zoom.k = 2,3\n"
    "zoom.min_window = 8\n"
    "data_dir = data\n"
    "checkpoint = model.ckpt\n"
    "out_dir = out\n";

}  // namespace

TEST(Config, DefaultsRoundTrip) {
  const Config c;
  EXPECT_EQ(config::serialize(config::parse(config::serialize(c))), config::serialize(c));
  EXPECT_EQ(c.model.temperature, 0.02);
  EXPECT_EQ(c.optim.lr, 1e-4);
  EXPECT_EQ(c.zoom.k_list, (std::vector<int>{3, 4, 5}));
}

TEST(Config, EditedValuesRoundTrip) {
  const auto text =
      "plan = tiny\nplan.l3 = 8,6,5\nattention = softmax\naggregation = sequential\ncross = standard\n"
      "temperature = 0.125\nhierarchy = false\nzoom.k = 2,7\nlr = 3.5e-5\nseed = 99\nout_dir = some/where\n";
  const auto c = config::parse(text);
  EXPECT_EQ(c.model.plan.levels[2].proj_channels, 5u);
  EXPECT_EQ(c.model.agg.attention, AttentionKind::softmax);
  EXPECT_FALSE(c.model.hierarchy);
  EXPECT_EQ(c.seed, 99u);
  const auto s = config::serialize(c);
  EXPECT_EQ(config::serialize(config::parse(s)), s);
}

TEST(Config, Rejections) {
  EXPECT_THROW(config::parse("learning_rate = 1\n"), ConfigError);
  EXPECT_THROW(config::parse("lr = 1\nlr = 2\n"), ConfigError);
  EXPECT_THROW(config::parse("lr\n"), ConfigError);
  EXPECT_THROW(config::parse("epochs = many\n"), ConfigError);
  EXPECT_THROW(config::parse("temperature = 0\n"), ConfigError);
  EXPECT_THROW(config::parse("zoom.k = 1\n"), ConfigError);
  EXPECT_THROW(config::parse("plan = huge\n"), ConfigError);
  EXPECT_NO_THROW(config::parse("  # comment only\n\nlr = 1e-3  # trailing\n"));
}

TEST(Checkpoint, RoundTrip) {
  const auto c = tiny_config();
  Checkpoint<float> ck{model::init<float>(c.model, 5), {}, 3, 2, 1.25};
  auto samples = tiny_samples(c);
  train::step(ck.params, ck.optim, c, std::span<const Sample<float>>(samples).first(2));
  const auto dir = scratch_dir("ckpt");
  train::save_checkpoint(dir / "a.ckpt", ck);
  const auto back = train::load_checkpoint(dir / "a.ckpt", model::init<float>(c.model, 0));
  EXPECT_EQ(back.epoch, 3u);
  EXPECT_EQ(back.best_epoch, 2u);
  EXPECT_EQ(back.best_val, 1.25);
  EXPECT_EQ(back.optim.step, ck.optim.step);
  for (const auto& [name, e] : ck.params.entries()) {
    EXPECT_EQ(back.params.value(name).to_vector(), e.value.to_vector()) << name;
    EXPECT_EQ(back.optim.moments.at(name).m, ck.optim.moments.at(name).m) << name;
  }
  auto other = c;
  other.model.agg.blocks = 1;
  EXPECT_THROW(train::load_checkpoint(dir / "a.ckpt", model::init<float>(other.model, 0)), ConfigError);
  io::write_bytes(dir / "bad.ckpt", {'n', 'o', 'p', 'e', 0, 0, 0, 0, 0});
  EXPECT_THROW(train::load_checkpoint(dir / "bad.ckpt", model::init<float>(c.model, 0)), FormatError);
}

TEST(TrainLoop, ZeroLearningRateKeepsValidationConstant) {
  auto c = tiny_config();
  c.optim.lr = 0;
  c.train.epochs = 3;
  const auto samples = tiny_samples(c);
  const auto res = train::run<float>(c, samples, scratch_dir("lr0") / "m.ckpt", false);
  ASSERT_EQ(res.records.size(), 4u);
  for (const auto& r : res.records) EXPECT_NEAR(r.val_aepe, res.records[0].val_aepe, 1e-5);
  for (std::size_t e = 2; e < res.records.size(); ++e) EXPECT_NEAR(*res.records[e].train_aepe, *res.records[1].train_aepe, 1e-4);
}

TEST(TrainLoop, ResumeReproducesNextEpoch) {
  auto c = tiny_config();
  c.train.epochs = 3;
  const auto samples = tiny_samples(c);
  const auto dir = scratch_dir("resume");
  const auto full = train::run<float>(c, samples, dir / "full.ckpt", false);
  c.train.epochs = 2;
  train::run<float>(c, samples, dir / "part.ckpt", false);
  c.train.epochs = 3;
  const auto resumed = train::run<float>(c, samples, dir / "part.ckpt", true);
  ASSERT_EQ(resumed.records.size(), 1u);
  EXPECT_EQ(resumed.records[0].epoch, 3u);
  EXPECT_EQ(*resumed.records[0].train_aepe, *full.records[3].train_aepe);
  EXPECT_EQ(resumed.records[0].val_aepe, full.records[3].val_aepe);
}

TEST(TrainLoop, SameSeedSameCurve) {
  const auto c = tiny_config();
  const auto samples = tiny_samples(c);
  const auto a = train::run<float>(c, samples, scratch_dir("det_a") / "m.ckpt", false);
  const auto b = train::run<float>(c, samples, scratch_dir("det_b") / "m.ckpt", false);
  for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_EQ(a.records[i].val_aepe, b.records[i].val_aepe);
}

TEST(Cli, EverySubcommandIsByteReproducibleAcrossThreadCounts) {
  std::map<std::string, std::string> outputs[2];
  const int threads[2] = {1, 3};
  for (int r = 0; r < 2; ++r) {
    const auto dir = scratch_dir("e2e_" + std::to_string(r));
    std::ofstream(dir / "tiny.cfg") << kTinyConfig;
    const auto t = " --threads " + std::to_string(threads[r]) + " --config tiny.cfg ";
    ASSERT_EQ(run_cli(t + "gen-data", dir), 0) << slurp(dir / "cli.stderr");
    ASSERT_EQ(run_cli(t + "train-toy", dir), 0) << slurp(dir / "cli.stderr");
    ASSERT_EQ(run_cli(t + "match data/pairs/00000_s.png data/pairs/00000_t.png -o out/one.flo", dir), 0)
        << slurp(dir / "cli.stderr");
    ASSERT_EQ(run_cli(t + "match --dataset data -o out/pred", dir), 0) << slurp(dir / "cli.stderr");
    ASSERT_EQ(run_cli(t + "zoomin data/pairs/00001_s.png data/pairs/00001_t.png -o out/zoom.flo", dir), 0)
        << slurp(dir / "cli.stderr");
    ASSERT_EQ(run_cli(t + "eval out/pred data -o out/eval.jsonl", dir), 0) << slurp(dir / "cli.stderr");
    ASSERT_EQ(run_cli(t + "viz data/pairs/00002_s.png data/pairs/00002_t.png --pixel 5 7 -o out/viz", dir), 0)
        << slurp(dir / "cli.stderr");
    ASSERT_EQ(run_cli(t + "ablation --variants integrative,+hierarchy --seeds 0 -o out/abl --budget-from none", dir), 0)
        << slurp(dir / "cli.stderr");
    outputs[r] = tree(dir);
  }
  for (const auto* expected : {"data/manifest.jsonl", "model.ckpt", "model.ckpt.last", "out/train_log.jsonl", "out/one.flo",
                               "out/one.mask", "out/zoom.flo", "out/zoom.confidence.png", "out/eval.jsonl",
                               "out/viz/pca_raw_source.png", "out/viz/cost_final.png", "out/abl/report.md"}) {
    EXPECT_TRUE(outputs[0].count(expected)) << expected;
  }
  ASSERT_EQ(outputs[0].size(), outputs[1].size());
  for (const auto& [name, bytes] : outputs[0]) {
    ASSERT_TRUE(outputs[1].count(name)) << name;
    EXPECT_TRUE(outputs[1][name] == bytes) << name << " differs between thread counts";
  }
}

TEST(Cli, ResumeKeepsOneLogLinePerEpoch) {
  const auto dir = scratch_dir("resume_cli");
  std::ofstream(dir / "tiny.cfg") << kTinyConfig;
  ASSERT_EQ(run_cli("--config tiny.cfg gen-data", dir), 0);
  ASSERT_EQ(run_cli("--config tiny.cfg train-toy", dir), 0);
  {
    std::ofstream cfg(dir / "two.cfg");
    cfg << std::string(kTinyConfig).replace(std::string(kTinyConfig).find("epochs = 1"), 10, "epochs = 2");
  }
  ASSERT_EQ(run_cli("--config two.cfg train-toy --resume", dir), 0) << slurp(dir / "cli.stderr");
  const auto log = slurp(dir / "out/train_log.jsonl");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch_dir("exit");
  std::ofstream(dir / "bad.cfg") << "no_such_key = 1\n";
  std::ofstream(dir / "tiny.cfg") << kTinyConfig;
  EXPECT_EQ(run_cli("", dir), 2);
  EXPECT_EQ(run_cli("frobnicate", dir), 2);
  EXPECT_EQ(run_cli("--config bad.cfg gen-data", dir), 2);
  EXPECT_EQ(run_cli("--config missing.cfg gen-data", dir), 2);
  EXPECT_EQ(run_cli("--config tiny.cfg train-toy --data nowhere", dir), 2);
  EXPECT_EQ(run_cli("--config tiny.cfg --seed 4 gen-data", dir), 0);
  fs::create_directories(dir / "pred");
  io::write_bytes(dir / "pred/pairs/00000.flo", {0, 0, 0, 0, 1, 0, 0, 0});
  EXPECT_EQ(run_cli("--config tiny.cfg eval pred data", dir), 3);
  io::write_bytes(dir / "broken.png", {1, 2, 3});
  ASSERT_EQ(run_cli("--config tiny.cfg train-toy", dir), 0);
  EXPECT_EQ(run_cli("--config tiny.cfg match broken.png data/pairs/00000_t.png", dir), 3);
}

TEST(Cli, GenDataSeedChangesChecksum) {
  const auto a = scratch_dir("seed_a"), b = scratch_dir("seed_b"), c = scratch_dir("seed_c");
  for (const auto& d : {a, b, c}) std::ofstream(d / "tiny.cfg") << kTinyConfig;
  ASSERT_EQ(run_cli("--config tiny.cfg gen-data", a), 0);
  ASSERT_EQ(run_cli("--config tiny.cfg gen-data", b), 0);
  ASSERT_EQ(run_cli("--config tiny.cfg --seed 1 gen-data", c), 0);
  EXPECT_EQ(data::dataset_checksum(a / "data"), data::dataset_checksum(b / "data"));
  EXPECT_NE(data::dataset_checksum(a / "data"), data::dataset_checksum(c / "data"));
}
