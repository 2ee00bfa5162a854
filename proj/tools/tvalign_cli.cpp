// Command-line front end for the task-vector alignment pipeline.

#include <cstdio>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tvalign/experiments.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<double> alpha;
  std::optional<double> lambda;
  std::optional<std::size_t> tasks;
  std::optional<std::string> out;
  std::optional<std::string> idx_images;
  std::optional<std::string> idx_labels;
  std::vector<std::string> sets;  // --set key=value
};

void add_common_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "key = value configuration file");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--mode", o.mode, "fine-tuning mode")
      ->check(CLI::IsMember({"embed", "lora", "full"}));
  cmd->add_option("--alpha", o.alpha, "orthogonality penalty weight");
  cmd->add_option("--lambda", o.lambda, "task-vector scale");
  cmd->add_option("--tasks", o.tasks, "number of synthetic tasks");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--idx-images", o.idx_images, "IDX image file for a real-data run");
  cmd->add_option("--idx-labels", o.idx_labels, "IDX label file for a real-data run");
  cmd->add_option("--set", o.sets, "extra config override, key=value (repeatable)");
}

tvalign::ExperimentConfig resolve(const Overrides& o) {
  tvalign::ExperimentConfig cfg;
  if (!o.config.empty()) cfg = tvalign::load_config(o.config);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw tvalign::ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.mode) cfg.set("mode", *o.mode);
  if (o.alpha) cfg.align.alpha = *o.alpha;
  if (o.lambda) cfg.align.lambda_scale = *o.lambda;
  if (o.tasks) cfg.num_tasks = *o.tasks;
  if (o.out) cfg.out_dir = *o.out;
  if (o.idx_images) cfg.idx_images = *o.idx_images;
  if (o.idx_labels) cfg.idx_labels = *o.idx_labels;
  cfg.validate();
  return cfg;
}

void print_report(const tvalign::Report& report) { std::cout << tvalign::to_csv(report); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-vector transfer across differently initialised models"};
  app.require_subcommand(1);
  Overrides o;

  using Action = std::function<void(const tvalign::ExperimentConfig&)>;
  const std::vector<std::pair<std::string, Action>> commands = {
      {"finetune", [](const auto& c) { tvalign::cmd_finetune(c); }},
      {"extract", [](const auto& c) { tvalign::cmd_extract(c); }},
      {"align", [](const auto& c) { tvalign::cmd_align(c); }},
      {"transfer", [](const auto& c) { tvalign::cmd_transfer(c); }},
      {"eval", [](const auto& c) { print_report(tvalign::cmd_eval(c)); }},
      {"bench", [](const auto& c) { print_report(tvalign::cmd_bench(c)); }},
      {"sweep-alpha", [](const auto& c) { print_report(tvalign::cmd_sweep_alpha(c)); }},
      {"sweep-lambda", [](const auto& c) { print_report(tvalign::cmd_sweep_lambda(c)); }},
      {"fullweight", [](const auto& c) { print_report(tvalign::cmd_fullweight(c)); }},
  };
  const char* help[] = {
      "fine-tune the source on every task",  "extract task vectors",
      "learn alignments on the rotated target", "write direct and aligned target models",
      "evaluate the transferred models",     "run the whole pipeline and report",
      "sweep the orthogonality weight",      "sweep the task-vector scale",
      "compare full-weight and embed-only vectors",
  };
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    subs.push_back(app.add_subcommand(commands[i].first, help[i]));
    add_common_flags(subs.back(), o);
  }

  CLI11_PARSE(app, argc, argv);

  std::string stage = "config";
  try {
    const tvalign::ExperimentConfig cfg = resolve(o);
    for (std::size_t i = 0; i < commands.size(); ++i) {
      if (subs[i]->parsed()) commands[i].second(cfg);
    }
    return 0;
  } catch (const tvalign::StageError& e) {
    stage = e.stage();
    std::cerr << "tvalign: " << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "tvalign: stage '" << stage << "' failed: " << e.what() << "\n";
  }
  return 2;
}
