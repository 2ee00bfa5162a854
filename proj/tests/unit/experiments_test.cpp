#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>

#include "tvalign/checkpoint.hpp"
#include "tvalign/experiments.hpp"

using tvalign::ExperimentConfig;
using tvalign::Report;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("tvalign_exp_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

// Small enough to run in well under a second per pipeline.
ExperimentConfig small_config(const std::string& name, std::size_t tasks = 1) {
  ExperimentConfig cfg;
  cfg.num_tasks = tasks;
  cfg.train_per_task = 400;
  cfg.test_per_task = 200;
  cfg.fewshot_per_class = 5;
  cfg.augment_factor = 2;
  cfg.finetune.steps = 60;
  cfg.align.steps = 20;
  cfg.out_dir = scratch(name);
  return cfg;
}

double mean(const std::vector<double>& xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

}  // namespace

TEST(Config, ParsesKeysCommentsAndLists) {
  const ExperimentConfig cfg = tvalign::parse_config(
      "# comment line\n"
      "num_tasks = 3\n"
      "\n"
      "mode = lora   # trailing comment\n"
      "alpha_grid = 0.5, 1.5\n"
      "finetune.schedule = constant\n"
      "align.joint = false\n");
  EXPECT_EQ(cfg.num_tasks, 3u);
  EXPECT_EQ(cfg.mode, tvalign::TrainMode::lora);
  EXPECT_EQ(cfg.alpha_grid, (std::vector<double>{0.5, 1.5}));
  EXPECT_EQ(cfg.finetune.schedule, tvalign::Schedule::constant);
  EXPECT_FALSE(cfg.align_joint);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(tvalign::parse_config("no_such_key = 1\n"), tvalign::ConfigError);
  EXPECT_THROW(tvalign::parse_config("num_tasks = -2\n"), tvalign::ConfigError);
  EXPECT_THROW(tvalign::parse_config("alpha = nan\n"), tvalign::ConfigError);
  EXPECT_THROW(tvalign::parse_config("mode = everything\n"), tvalign::ConfigError);
  EXPECT_THROW(tvalign::parse_config("just words\n"), tvalign::ConfigError);
}

TEST(Config, HashIgnoresOutputDirectoryOnly) {
  ExperimentConfig a;
  ExperimentConfig b;
  b.out_dir = "elsewhere";
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
  b.seed = 1;
  EXPECT_NE(a.hash(), b.hash());
  // canonical() lists every key except out_dir, and parses back to itself.
  EXPECT_EQ(tvalign::parse_config(a.canonical()).canonical(), a.canonical());
}

TEST(Bench, SingleTaskTableShape) {
  const Report r = tvalign::cmd_bench(small_config("bench1"));
  ASSERT_EQ(r.tasks, (std::vector<std::string>{"task0"}));
  ASSERT_EQ(r.rows.size(), 4u);
  const std::vector<std::string> names{"target_only", "target_ft", "direct", "aligned"};
  for (std::size_t i = 0; i < names.size(); ++i) {
    EXPECT_EQ(r.rows[i].method, names[i]);
    ASSERT_EQ(r.rows[i].accuracies.size(), 1u);
    EXPECT_EQ(r.rows[i].average, r.rows[i].accuracies[0]);
  }
}

TEST(Bench, AverageIsTheMeanAndFilesAreWritten) {
  const auto cfg = small_config("bench2", 3);
  const Report r = tvalign::cmd_bench(cfg);
  for (const auto& row : r.rows) EXPECT_NEAR(row.average, mean(row.accuracies), 1e-12);
  EXPECT_TRUE(std::filesystem::exists(cfg.out_dir / "bench.csv"));
  EXPECT_TRUE(std::filesystem::exists(cfg.out_dir / "bench.json"));
  const std::string csv = tvalign::to_csv(r);
  EXPECT_EQ(csv.rfind("# bench config_hash=" + cfg.hash(), 0), 0u);
  EXPECT_NE(csv.find("method,task0,task1,task2,Avg\n"), std::string::npos);
}

TEST(Sweep, AlphaGridIsEchoed) {
  auto cfg = small_config("alpha");
  cfg.alpha_grid = {0.5, 2.0};
  const Report r = tvalign::cmd_sweep_alpha(cfg);
  EXPECT_EQ(r.grid, "alpha = 0.5, 2");
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_EQ(r.rows[0].method, "alpha=0.5");
  EXPECT_NE(tvalign::to_csv(r).find("# grid: alpha = 0.5, 2\n"), std::string::npos);
}

TEST(Sweep, ZeroLambdaMatchesTargetOnly) {
  auto cfg = small_config("lambda0", 2);
  cfg.lambda_grid = {0.0, 1.0};
  const Report r = tvalign::cmd_sweep_lambda(cfg);
  EXPECT_EQ(r.row("lambda=0").accuracies, r.diagnostics.at("target_only"));
}

TEST(Sweep, SingleValueGridMatchesBenchAlignedRow) {
  auto cfg = small_config("single", 2);
  cfg.lambda_grid = {1.0};
  const Report sweep = tvalign::cmd_sweep_lambda(cfg);
  const Report bench = tvalign::cmd_bench(cfg);
  EXPECT_EQ(sweep.row("lambda=1").accuracies, bench.row("aligned").accuracies);
}

TEST(Fullweight, BothModesAndTheirContracts) {
  const auto cfg = small_config("full", 2);
  const Report r = tvalign::cmd_fullweight(cfg);
  for (const char* mode : {"embed:", "full:"}) {
    for (const char* row : {"target_only", "target_ft", "direct", "aligned"}) {
      EXPECT_NO_THROW(r.row(std::string(mode) + row)) << mode << row;
    }
  }

  const auto tasks = tvalign::build_tasks(cfg);
  const auto embed = tvalign::run_source_stage(cfg, tasks, tvalign::TrainMode::embed_only);
  const auto full = tvalign::run_source_stage(cfg, tasks, tvalign::TrainMode::full);
  EXPECT_EQ(embed.finetuned[0].input_proj, embed.pretrained.input_proj);
  EXPECT_GT(tvalign::max_abs_diff(full.finetuned[0].input_proj, full.pretrained.input_proj), 0.0);
}

TEST(Stages, FailuresNameTheirStage) {
  auto cfg = small_config("stage");
  cfg.num_tasks = 0;
  try {
    tvalign::cmd_bench(cfg);
    FAIL() << "accepted";
  } catch (const tvalign::StageError& e) {
    EXPECT_EQ(e.stage(), "config");
  }

  cfg = small_config("stage");
  cfg.idx_images = cfg.out_dir / "missing-images";
  cfg.idx_labels = cfg.out_dir / "missing-labels";
  try {
    tvalign::cmd_bench(cfg);
    FAIL() << "accepted";
  } catch (const tvalign::StageError& e) {
    EXPECT_EQ(e.stage(), "data");
  }

  cfg = small_config("stage");
  try {
    tvalign::cmd_extract(cfg);  // nothing fine-tuned yet
    FAIL() << "accepted";
  } catch (const tvalign::StageError& e) {
    EXPECT_EQ(e.stage(), "extract");
  }
}

TEST(Stages, GranularCommandsChain) {
  const auto cfg = small_config("chain", 2);
  tvalign::cmd_finetune(cfg);
  tvalign::cmd_extract(cfg);
  tvalign::cmd_align(cfg);
  tvalign::cmd_transfer(cfg);
  const Report r = tvalign::cmd_eval(cfg);
  for (const char* f : {"source.mpar", "finetuned.task0.mpar", "task1.tvec", "task0.algn",
                        "target.mpar", "direct.mpar", "aligned.mpar", "eval.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(cfg.out_dir / f)) << f;
  }
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_EQ(r.tasks.size(), 2u);

  // The granular chain reproduces the one-shot bench on the same config.
  const Report bench = tvalign::cmd_bench(cfg);
  EXPECT_EQ(r.row("direct").accuracies, bench.row("direct").accuracies);
  EXPECT_EQ(r.row("aligned").accuracies, bench.row("aligned").accuracies);
}
