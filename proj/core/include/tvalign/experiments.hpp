#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tvalign/align.hpp"
#include "tvalign/data.hpp"
#include "tvalign/model.hpp"
#include "tvalign/taskvec.hpp"

namespace tvalign {

/// Everything a pipeline run depends on. Loaded from a key = value file;
/// see ExperimentConfig::keys() for the closed vocabulary.
struct ExperimentConfig {
  TrainMode mode = TrainMode::embed_only;
  std::size_t num_tasks = 4;
  std::size_t num_classes = 4;
  Architecture arch;
  double separation = 6.0;
  double noise = 1.0;
  std::size_t train_per_task = 2000;
  std::size_t test_per_task = 1000;
  std::size_t fewshot_per_class = 25;
  std::size_t augment_factor = 10;
  double augment_noise = 0.05;
  TrainConfig finetune;
  TrainConfig align;
  bool align_joint = true;
  bool align_retract = false;
  double defect_tolerance = 1e-2;
  std::vector<double> alpha_grid{0.3, 0.8, 1.0, 2.0};
  std::vector<double> lambda_grid{0.3, 0.8, 1.0, 2.0};
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "tvalign-out";
  std::filesystem::path idx_images;
  std::filesystem::path idx_labels;

  ExperimentConfig();

  /// Applies one key = value setting; unknown keys and bad values throw
  /// ConfigError.
  void set(std::string_view key, std::string_view value);

  /// Canonical "key = value" listing of every setting, sorted by key.
  std::string canonical() const;

  /// FNV-1a of canonical(), as 16 hex digits.
  std::string hash() const;

  void validate() const;

  static const std::vector<std::string>& keys();
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Parses `key = value` lines; '#' starts a comment.
ExperimentConfig parse_config(std::string_view text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});

/// Raised by pipeline commands; names the stage that failed.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what);
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct TaskData {
  std::string task_id;
  LabeledBatch train;    // source fine-tuning pool
  LabeledBatch test;     // held-out evaluation set
  LabeledBatch fewshot;  // augmented few-shot pool on the target side
};

std::vector<TaskData> build_tasks(const ExperimentConfig& cfg);

/// Per-task test accuracy in percent.
std::vector<double> evaluate(const ModelParams& params, const std::vector<TaskData>& tasks);

/// Output of stages 1-3: the source, its per-task fine-tunes and vectors.
struct SourceStage {
  ModelParams pretrained;
  std::vector<ModelParams> finetuned;
  std::vector<TaskVector> vectors;
};

/// Builds the source and fine-tunes it on every task, tasks in parallel.
SourceStage run_source_stage(const ExperimentConfig& cfg, const std::vector<TaskData>& tasks,
                             TrainMode mode);

RotatedTarget build_target(const ExperimentConfig& cfg, const ModelParams& source);

/// Few-shot multi-task fine-tune of the target (embed layers + heads) on the
/// same pools the alignment sees.
ModelParams finetune_target(const ExperimentConfig& cfg, const ModelParams& target,
                            const std::vector<TaskVector>& vectors,
                            const std::vector<TaskData>& tasks);

struct ReportRow {
  std::string method;
  std::vector<double> accuracies;  // percent, one per task
  double average = 0.0;
};

struct Report {
  std::string command;
  std::string config_hash;
  std::string grid;  // echoed sweep grid, empty for bench
  std::vector<std::string> tasks;
  std::vector<ReportRow> rows;
  std::map<std::string, std::vector<double>> diagnostics;

  void add_row(std::string method, std::vector<double> accuracies);
  const ReportRow& row(std::string_view method) const;
};

std::string to_csv(const Report& report);
std::string to_json(const Report& report);

/// Writes <out_dir>/<stem>.csv and <stem>.json.
void write_report(const Report& report, const std::filesystem::path& out_dir,
                  const std::string& stem);

/// Rows: target_only, target_ft, direct, aligned.
Report cmd_bench(const ExperimentConfig& cfg);
/// One aligned row per α (λ fixed at 1.0).
Report cmd_sweep_alpha(const ExperimentConfig& cfg);
/// One aligned row per λ (α fixed at 1.0).
Report cmd_sweep_lambda(const ExperimentConfig& cfg);
/// Bench rows for embed and full mode side by side, prefixed "embed:" and "full:".
Report cmd_fullweight(const ExperimentConfig& cfg);

// File-based stages. Each reads what the previous one wrote in cfg.out_dir.
void cmd_finetune(const ExperimentConfig& cfg);  // source.mpar, finetuned.<task>.mpar
void cmd_extract(const ExperimentConfig& cfg);   // <task>.tvec
void cmd_align(const ExperimentConfig& cfg);     // target.mpar, <task>.algn
void cmd_transfer(const ExperimentConfig& cfg);  // direct.mpar, aligned.mpar
Report cmd_eval(const ExperimentConfig& cfg);    // eval.csv / eval.json

}  // namespace tvalign
