#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "swiden/error.hpp"
#include "swiden/harness.hpp"

using namespace swiden;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "swiden_test_harness" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

/// Small enough to train in about a second.
RunConfig tiny_config() {
  RunConfig c;
  c.classes = 3;
  c.per_class = 8;
  c.train_per_style = 4;
  c.test_per_style = 2;
  c.resize = 36;
  c.crop = 32;
  c.epochs = 3;
  c.batch_size = 4;
  c.backbone.stages = {{1, 2}, {1, 3}, {1, 4}, {1, 4}, {1, 4}};
  c.backbone.fc_dim = 8;
  c.switch_spec.conv1_channels = 3;
  c.switch_spec.conv2_channels = 4;
  c.switch_spec.fc_dim = 6;
  return c;
}

}  // namespace

TEST(Config, ParseApplyFormatRoundTrip) {
  const auto map = parse_config_text("# comment\narch = swiden\nk=3 # trailing\nlr=0.02\nstages=1x4,1x8,2x8,2x8,1x8\n\n");
  RunConfig c;
  apply_config(c, map);
  EXPECT_EQ(c.arch, Architecture::SwiDeN);
  EXPECT_EQ(c.k, 3u);
  EXPECT_EQ(c.sgd.base_lr, 0.02);
  EXPECT_EQ(c.backbone.stages[2].num_convs, 2u);
  EXPECT_EQ(c.backbone.stages[1].out_channels, 8u);

  RunConfig back;
  apply_config(back, parse_config_text(format_config(c)));
  EXPECT_EQ(format_config(back), format_config(c));
}

TEST(Config, Errors) {
  RunConfig c;
  EXPECT_THROW(apply_config(c, {{"no_such_key", "1"}}), ConfigError);
  EXPECT_THROW(apply_config(c, {{"epochs", "ten"}}), ConfigError);
  EXPECT_THROW(apply_config(c, {{"arch", "alexnet"}}), ConfigError);
  EXPECT_THROW(parse_config_text("just words"), ConfigError);
  c.crop = 100;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, GrnDefaultsToConstantLr) {
  RunConfig c;
  EXPECT_TRUE(c.scheduler_enabled());
  c.arch = Architecture::Grn;
  EXPECT_FALSE(c.scheduler_enabled());
  apply_config(c, {{"scheduler", "plateau"}});
  EXPECT_TRUE(c.scheduler_enabled());
}

TEST(Metrics, OverallIsMeanOfStylesOnBalancedSets) {
  Rng rng(4);
  std::vector<Prediction> preds;
  for (std::size_t i = 0; i < 200; ++i) preds.push_back({i, i % 10, (i / 10) % 2, rng.index(10)});
  const Metrics m = compute_metrics(preds, std::vector<std::string>(10, "c"), 2);
  EXPECT_EQ(m.style_total[0], m.style_total[1]);
  EXPECT_EQ(m.correct, m.style_correct[0] + m.style_correct[1]);
  EXPECT_DOUBLE_EQ(m.overall_acc, 0.5 * (*m.style_acc(0) + *m.style_acc(1)));
  EXPECT_EQ(m.overall_acc, static_cast<double>(m.correct) / 200.0);
}

TEST(Metrics, UniformRandomPredictorNearChance) {
  Rng rng(12);
  std::vector<Prediction> preds;
  for (std::size_t i = 0; i < 2000; ++i) preds.push_back({i, rng.index(10), i % 2, rng.index(10)});
  const Metrics m = compute_metrics(preds, std::vector<std::string>(10, "c"), 2);
  EXPECT_NEAR(m.overall_acc, 0.10, 0.03);
}

TEST(Metrics, PerClassAndMissingStyle) {
  std::vector<Prediction> preds{{0, 0, 0, 0}, {1, 0, 0, 1}, {2, 1, 0, 1}};
  const Metrics m = compute_metrics(preds, {"a", "b"}, 2);
  EXPECT_EQ(m.per_class_acc, (std::vector<double>{0.5, 1.0}));
  EXPECT_FALSE(m.style_acc(1).has_value());
  EXPECT_THROW(compute_metrics({{0, 5, 0, 0}}, {"a"}, 1), Error);
}

TEST(Metrics, FilesCompareIgnoringTimestamp) {
  const fs::path d = fresh_dir("metrics");
  std::vector<Prediction> preds{{0, 0, 0, 0}, {1, 1, 1, 0}};
  Metrics m = compute_metrics(preds, {"a", "b"}, 2);
  m.arch = "Baseline";
  write_metrics(d / "a.txt", m, true);
  write_metrics(d / "b.txt", m, false);
  EXPECT_TRUE(compare_metrics_files(d / "a.txt", d / "b.txt"));
  EXPECT_NE(slurp(d / "a.txt").find("timestamp="), std::string::npos);
  m.loss_curve = {1.0};
  write_metrics(d / "c.txt", m, false);
  EXPECT_FALSE(compare_metrics_files(d / "a.txt", d / "c.txt"));
  write_predictions_csv(d / "p.csv", m);
  EXPECT_EQ(slurp(d / "p.csv").substr(0, 5), "image");
}

TEST(Report, TableColumns) {
  const std::string t = format_accuracy_table({{"Baseline", 0.9, 0.95, 0.85}, {"SwiDeN (C4-S)", 0.92, 0.93, 0.91}});
  for (const char* s : {"Arch.", "Overall Acc.", "Art Acc.", "Photo Acc.", "Baseline", "SwiDeN (C4-S)", "90.00"})
    EXPECT_NE(t.find(s), std::string::npos) << s;
}

TEST(Training, SameSeedIdenticalMetrics) {
  RunConfig c = tiny_config();
  const fs::path d = fresh_dir("determinism");
  c.out = d / "a";
  const auto a = cmd_train(c);
  c.out = d / "b";
  const auto b = cmd_train(c);
  EXPECT_TRUE(compare_metrics_files(a.metrics_file, b.metrics_file));
  EXPECT_EQ(slurp(a.checkpoint), slurp(b.checkpoint));
  EXPECT_EQ(a.metrics.loss_curve.size(), 3u);
  c.seed = 43;
  c.out = d / "c";
  EXPECT_FALSE(compare_metrics_files(a.metrics_file, cmd_train(c).metrics_file));
}

TEST(Training, GrnLrCurveIsConstant) {
  RunConfig c = tiny_config();
  c.arch = Architecture::Grn;
  c.epochs = 8;
  c.out = fresh_dir("grn");
  const auto r = cmd_train(c);
  ASSERT_EQ(r.metrics.lr_curve.size(), 8u);
  for (double lr : r.metrics.lr_curve) EXPECT_EQ(lr, c.sgd.base_lr);
}

TEST(Training, TestSetOverallIsStyleMean) {
  RunConfig c = tiny_config();
  c.out = fresh_dir("identity");
  const auto r = cmd_train(c);
  EXPECT_EQ(r.metrics.total, 3u * 2 * 2);
  EXPECT_EQ(r.metrics.overall_acc, 0.5 * (*r.metrics.style_acc(0) + *r.metrics.style_acc(1)));
}

TEST(Commands, EvalLeavesCheckpointUntouchedAndReproducesTest) {
  RunConfig c = tiny_config();
  c.out = fresh_dir("eval");
  const auto trained = cmd_train(c);
  const std::string before = slurp(trained.checkpoint);
  RunConfig e = c;
  e.out = c.out / "eval";
  const auto ev = cmd_eval(e, trained.checkpoint);
  EXPECT_EQ(slurp(trained.checkpoint), before);
  EXPECT_EQ(ev.metrics.correct, trained.metrics.correct);
  EXPECT_TRUE(fs::exists(e.out / "eval_report.txt"));
}

TEST(Commands, SwitchThenPredictedSwiden) {
  RunConfig c = tiny_config();
  const fs::path d = fresh_dir("switch");
  c.out = d / "switch";
  const auto sw = cmd_train_switch(c);
  EXPECT_EQ(sw.metrics.target_names, (std::vector<std::string>{"photo", "art"}));
  RunConfig s = c;
  s.arch = Architecture::SwiDeN;
  s.switch_checkpoint = sw.checkpoint;
  s.out = d / "swiden";
  EXPECT_NO_THROW(cmd_train(s));
  s.switch_checkpoint.reset();
  EXPECT_THROW(cmd_train(s), ConfigError);
}

TEST(Commands, SplitOutOfRangeIsDataError) {
  RunConfig c = tiny_config();
  c.split = 7;
  c.out = fresh_dir("badsplit");
  EXPECT_THROW(cmd_train(c), DataError);
}

TEST(Commands, GenDataRoundTrip) {
  RunConfig c = tiny_config();
  const fs::path f = fresh_dir("gen") / "ds.swds";
  const Dataset ds = cmd_gen_data(c, f);
  EXPECT_EQ(load_packed(f), ds);
  EXPECT_EQ(ds.size(), 3u * 2 * 8);
}
