#include "tvalign/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "tvalign/checkpoint.hpp"
#include "tvalign/random.hpp"

namespace tvalign {

namespace {

// Sub-seeds for the independent random streams of one run.
enum SeedTag : std::uint64_t {
  kModelSeed = 1,
  kTaskSeed = 2,
  kRotationSeed = 3,
  kFewshotSeed = 4,
  kFinetuneSeed = 5,
  kAlignSeed = 6,
  kTargetFtSeed = 7,
};

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return Rng(seed).split(tag).next_u64();
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("config: '" + std::string(key) + "' expects a number, got '" +
                      std::string(v) + "'");
  }
  return out;
}

std::uint64_t parse_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("config: '" + std::string(key) + "' expects a non-negative integer, got '" +
                      std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: '" + std::string(key) + "' expects true or false, got '" +
                    std::string(v) + "'");
}

std::vector<double> parse_list(std::string_view key, std::string_view v) {
  std::vector<double> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    out.push_back(parse_double(key, trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  if (out.empty()) throw ConfigError("config: '" + std::string(key) + "' must not be empty");
  return out;
}

std::string join(const std::vector<double>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ", ";
    out += format_double(xs[i]);
  }
  return out;
}

template <class T>
T wrap_parse(std::string_view key, std::string_view v, T (*parse)(std::string_view)) {
  try {
    return parse(v);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config: '" + std::string(key) + "': " + e.what());
  }
}

// Key → (getter, setter) over ExperimentConfig.
struct KeyHandler {
  std::string (*get)(const ExperimentConfig&);
  void (*set)(ExperimentConfig&, std::string_view key, std::string_view value);
};

#define TV_SIZE(NAME, FIELD)                                                              \
  {NAME,                                                                                  \
   {[](const ExperimentConfig& c) { return std::to_string(c.FIELD); },                    \
    [](ExperimentConfig& c, std::string_view k, std::string_view v) {                     \
      c.FIELD = static_cast<decltype(c.FIELD)>(parse_uint(k, v));                         \
    }}}
#define TV_DOUBLE(NAME, FIELD)                                                            \
  {NAME,                                                                                  \
   {[](const ExperimentConfig& c) { return format_double(c.FIELD); },                     \
    [](ExperimentConfig& c, std::string_view k, std::string_view v) {                     \
      c.FIELD = parse_double(k, v);                                                       \
    }}}
#define TV_BOOL(NAME, FIELD)                                                              \
  {NAME,                                                                                  \
   {[](const ExperimentConfig& c) { return std::string(c.FIELD ? "true" : "false"); },    \
    [](ExperimentConfig& c, std::string_view k, std::string_view v) {                     \
      c.FIELD = parse_bool(k, v);                                                         \
    }}}
#define TV_TRAIN(PREFIX, CFG)                                                             \
  TV_DOUBLE(PREFIX ".learning_rate", CFG.learning_rate),                                  \
      TV_DOUBLE(PREFIX ".weight_decay", CFG.weight_decay),                                \
      TV_DOUBLE(PREFIX ".clip_norm", CFG.clip_norm), TV_SIZE(PREFIX ".steps", CFG.steps), \
      TV_SIZE(PREFIX ".batch_size", CFG.batch_size),                                      \
  {                                                                                       \
    PREFIX ".schedule", {                                                                 \
      [](const ExperimentConfig& c) { return std::string(to_string(c.CFG.schedule)); },   \
          [](ExperimentConfig& c, std::string_view k, std::string_view v) {               \
            c.CFG.schedule = wrap_parse(k, v, parse_schedule);                            \
          }                                                                               \
    }                                                                                     \
  }

const std::map<std::string, KeyHandler>& handlers() {
  static const std::map<std::string, KeyHandler> table = {
      {"mode",
       {[](const ExperimentConfig& c) {
          return std::string(c.mode == TrainMode::embed_only ? "embed" : to_string(c.mode));
        },
        [](ExperimentConfig& c, std::string_view k, std::string_view v) {
          c.mode = wrap_parse(k, v, parse_train_mode);
        }}},
      {"activation",
       {[](const ExperimentConfig& c) { return std::string(to_string(c.arch.activation)); },
        [](ExperimentConfig& c, std::string_view k, std::string_view v) {
          c.arch.activation = wrap_parse(k, v, parse_activation);
        }}},
      TV_SIZE("num_tasks", num_tasks),
      TV_SIZE("num_classes", num_classes),
      TV_SIZE("feature_dim", arch.feature_dim),
      TV_SIZE("width", arch.width),
      TV_SIZE("depth", arch.depth),
      TV_DOUBLE("layer_gain", arch.layer_gain),
      TV_DOUBLE("separation", separation),
      TV_DOUBLE("noise", noise),
      TV_SIZE("train_per_task", train_per_task),
      TV_SIZE("test_per_task", test_per_task),
      TV_SIZE("fewshot_per_class", fewshot_per_class),
      TV_SIZE("augment_factor", augment_factor),
      TV_DOUBLE("augment_noise", augment_noise),
      TV_TRAIN("finetune", finetune),
      TV_SIZE("finetune.lora_rank", finetune.lora_rank),
      TV_TRAIN("align", align),
      TV_DOUBLE("alpha", align.alpha),
      TV_DOUBLE("lambda", align.lambda_scale),
      TV_BOOL("align.joint", align_joint),
      TV_BOOL("align.retract", align_retract),
      TV_DOUBLE("defect_tolerance", defect_tolerance),
      {"alpha_grid",
       {[](const ExperimentConfig& c) { return join(c.alpha_grid); },
        [](ExperimentConfig& c, std::string_view k, std::string_view v) {
          c.alpha_grid = parse_list(k, v);
        }}},
      {"lambda_grid",
       {[](const ExperimentConfig& c) { return join(c.lambda_grid); },
        [](ExperimentConfig& c, std::string_view k, std::string_view v) {
          c.lambda_grid = parse_list(k, v);
        }}},
      {"seed",
       {[](const ExperimentConfig& c) { return std::to_string(c.seed); },
        [](ExperimentConfig& c, std::string_view k, std::string_view v) {
          c.seed = parse_uint(k, v);
        }}},
      {"out_dir",
       {[](const ExperimentConfig& c) { return c.out_dir.string(); },
        [](ExperimentConfig& c, std::string_view, std::string_view v) { c.out_dir = v; }}},
      {"idx_images",
       {[](const ExperimentConfig& c) { return c.idx_images.string(); },
        [](ExperimentConfig& c, std::string_view, std::string_view v) { c.idx_images = v; }}},
      {"idx_labels",
       {[](const ExperimentConfig& c) { return c.idx_labels.string(); },
        [](ExperimentConfig& c, std::string_view, std::string_view v) { c.idx_labels = v; }}},
  };
  return table;
}

#undef TV_SIZE
#undef TV_DOUBLE
#undef TV_BOOL
#undef TV_TRAIN

template <class F>
auto run_stage(const char* name, F&& body) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

std::vector<std::string> task_ids(const std::vector<TaskData>& tasks) {
  std::vector<std::string> out;
  for (const auto& t : tasks) out.push_back(t.task_id);
  return out;
}

std::vector<LabeledBatch> fewshot_pools(const std::vector<TaskData>& tasks) {
  std::vector<LabeledBatch> out;
  for (const auto& t : tasks) out.push_back(t.fewshot);
  return out;
}

TrainConfig align_config(const ExperimentConfig& cfg, double alpha, double lambda) {
  TrainConfig out = cfg.align;
  out.alpha = alpha;
  out.lambda_scale = lambda;
  out.seed = derive_seed(cfg.seed, kAlignSeed);
  return out;
}

AlignOptions align_options(const ExperimentConfig& cfg) {
  return AlignOptions{cfg.align_joint, cfg.align_retract, cfg.defect_tolerance};
}

void record_defects(Report& report, const AlignResult& res, const std::string& prefix) {
  for (std::size_t i = 0; i < res.alignments.size(); ++i) {
    report.diagnostics[prefix + "defect." + res.alignments[i].task_id] = res.defects[i];
  }
  report.diagnostics[prefix + "defects_within_tolerance"] = {res.within_tolerance ? 1.0 : 0.0};
  if (!res.losses.empty()) {
    report.diagnostics[prefix + "align_loss_first_last"] = {res.losses.front(), res.losses.back()};
  }
}

// Everything cmd_bench computes, shared with the sweeps and fullweight.
struct Pipeline {
  std::vector<TaskData> tasks;
  SourceStage source;
  RotatedTarget target;
};

Pipeline prepare(const ExperimentConfig& cfg, TrainMode mode) {
  Pipeline p;
  p.tasks = run_stage("data", [&] { return build_tasks(cfg); });
  p.source = run_stage("finetune", [&] { return run_source_stage(cfg, p.tasks, mode); });
  p.target = run_stage("target", [&] { return build_target(cfg, p.source.pretrained); });
  return p;
}

// Flushes whatever rows exist when a stage fails, then rethrows.
template <class F>
Report with_flush(const ExperimentConfig& cfg, Report& report, const std::string& stem,
                  F&& body) {
  try {
    body();
  } catch (...) {
    try {
      write_report(report, cfg.out_dir, stem + ".partial");
    } catch (...) {
    }
    throw;
  }
  run_stage("report", [&] { write_report(report, cfg.out_dir, stem); });
  return report;
}

Report new_report(const ExperimentConfig& cfg, std::string command) {
  Report r;
  r.command = std::move(command);
  r.config_hash = cfg.hash();
  return r;
}

// Bench rows (and diagnostics) for one mode, method names prefixed.
void bench_rows(const ExperimentConfig& cfg, TrainMode mode, Report& report,
                const std::string& prefix) {
  const Pipeline p = prepare(cfg, mode);
  if (report.tasks.empty()) report.tasks = task_ids(p.tasks);
  const auto& tvs = p.source.vectors;
  const auto pools = fewshot_pools(p.tasks);
  const double lambda = cfg.align.lambda_scale;

  run_stage("baselines", [&] {
    std::vector<double> ft;
    for (std::size_t i = 0; i < p.tasks.size(); ++i) {
      ft.push_back(100.0 * accuracy(p.source.finetuned[i], p.tasks[i].test));
    }
    report.diagnostics[prefix + "source_finetuned"] = ft;
    report.diagnostics[prefix + "source_merged"] =
        evaluate(apply_direct(p.source.pretrained, tvs, lambda), p.tasks);
    std::vector<Alignment> truth;
    for (const auto& tv : tvs) truth.push_back(Alignment{tv.task_id, p.target.truth.mats});
    report.diagnostics[prefix + "truth_aligned"] =
        evaluate(apply_aligned(p.target.target, tvs, truth, lambda), p.tasks);
    report.add_row(prefix + "target_only", evaluate(apply_direct(p.target.target, tvs, 0.0), p.tasks));
  });
  run_stage("target_ft", [&] {
    report.add_row(prefix + "target_ft",
                   evaluate(finetune_target(cfg, p.target.target, tvs, p.tasks), p.tasks));
  });
  run_stage("baselines", [&] {
    report.add_row(prefix + "direct", evaluate(apply_direct(p.target.target, tvs, lambda), p.tasks));
  });
  run_stage("align", [&] {
    const AlignResult res = train_alignment(p.target.target, tvs, pools,
                                            align_config(cfg, cfg.align.alpha, lambda),
                                            align_options(cfg));
    record_defects(report, res, prefix);
    report.add_row(prefix + "aligned",
                   evaluate(apply_aligned(p.target.target, tvs, res.alignments, lambda), p.tasks));
  });
}

enum class SweepKind { alpha, lambda };

Report sweep(const ExperimentConfig& cfg, SweepKind kind) {
  const bool is_alpha = kind == SweepKind::alpha;
  const std::vector<double>& grid = is_alpha ? cfg.alpha_grid : cfg.lambda_grid;
  Report report = new_report(cfg, is_alpha ? "sweep-alpha" : "sweep-lambda");
  report.grid = std::string(is_alpha ? "alpha" : "lambda") + " = " + join(grid);
  const std::string stem = is_alpha ? "sweep_alpha" : "sweep_lambda";
  return with_flush(cfg, report, stem, [&] {
    run_stage("config", [&] {
      if (grid.empty()) throw ConfigError("sweep grid is empty");
    });
    const Pipeline p = prepare(cfg, cfg.mode);
    report.tasks = task_ids(p.tasks);
    const auto pools = fewshot_pools(p.tasks);
    report.diagnostics["target_only"] =
        evaluate(apply_direct(p.target.target, p.source.vectors, 0.0), p.tasks);
    for (const double v : grid) {
      const double alpha = is_alpha ? v : 1.0;
      const double lambda = is_alpha ? 1.0 : v;
      const std::string name = std::string(is_alpha ? "alpha=" : "lambda=") + format_double(v);
      run_stage("align", [&] {
        const AlignResult res = train_alignment(p.target.target, p.source.vectors, pools,
                                                align_config(cfg, alpha, lambda),
                                                align_options(cfg));
        record_defects(report, res, name + ":");
        report.add_row(name, evaluate(apply_aligned(p.target.target, p.source.vectors,
                                                    res.alignments, lambda),
                                      p.tasks));
      });
    }
  });
}

std::filesystem::path out_file(const ExperimentConfig& cfg, const std::string& name) {
  return cfg.out_dir / name;
}

void save_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  write_file(path, bytes);
}

ModelParams read_model(const std::filesystem::path& path) {
  return load_model(read_file(path));
}

std::vector<TaskVector> read_vectors(const ExperimentConfig& cfg,
                                     const std::vector<std::string>& ids) {
  std::vector<TaskVector> out;
  for (const auto& id : ids) out.push_back(load_task_vector(read_file(out_file(cfg, id + ".tvec"))));
  return out;
}

std::vector<std::string> configured_task_ids(const ExperimentConfig& cfg) {
  if (!cfg.idx_images.empty()) return {"idx"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < cfg.num_tasks; ++i) out.push_back("task" + std::to_string(i));
  return out;
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  finetune.learning_rate = 1e-3;
  align.learning_rate = 1e-2;
  align.steps = 100;
}

void ExperimentConfig::set(std::string_view key, std::string_view value) {
  const auto& table = handlers();
  const auto it = table.find(std::string(key));
  if (it == table.end()) throw ConfigError("config: unknown key '" + std::string(key) + "'");
  it->second.set(*this, key, trim(value));
}

std::string ExperimentConfig::canonical() const {
  std::string out;
  for (const auto& [key, h] : handlers()) {
    if (key == "out_dir") continue;  // where results go does not change them
    out += key + " = " + h.get(*this) + "\n";
  }
  return out;
}

std::string ExperimentConfig::hash() const {
  const std::string text = canonical();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(text.data(), text.size())));
  return buf;
}

void ExperimentConfig::validate() const {
  if (num_tasks == 0) throw ConfigError("config: num_tasks must be >= 1");
  if (num_classes < 2) throw ConfigError("config: num_classes must be >= 2");
  if (arch.feature_dim == 0 || arch.width == 0 || arch.depth == 0) {
    throw ConfigError("config: feature_dim, width and depth must be >= 1");
  }
  if (alpha_grid.empty() || lambda_grid.empty()) {
    throw ConfigError("config: alpha_grid and lambda_grid must not be empty");
  }
  if (fewshot_per_class == 0 || augment_factor == 0 || test_per_task == 0) {
    throw ConfigError("config: fewshot_per_class, augment_factor and test_per_task must be >= 1");
  }
  if (idx_images.empty() != idx_labels.empty()) {
    throw ConfigError("config: idx_images and idx_labels must be given together");
  }
  try {
    finetune.validate();
    align.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> out = [] {
    std::vector<std::string> k;
    for (const auto& [key, h] : handlers()) k.push_back(key);
    return k;
  }();
  return out;
}

ExperimentConfig parse_config(std::string_view text, ExperimentConfig base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    try {
      base.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

StageError::StageError(std::string stage, const std::string& what)
    : std::runtime_error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}

std::vector<TaskData> build_tasks(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<TaskData> out;
  const AugmentOptions synthetic_aug{cfg.augment_noise, false};

  if (!cfg.idx_images.empty()) {
    LabeledBatch all = load_idx(cfg.idx_images, cfg.idx_labels, "idx");
    if (all.feature_dim() != cfg.arch.feature_dim) {
      throw ConfigError("config: feature_dim " + std::to_string(cfg.arch.feature_dim) +
                        " does not match IDX images of " + std::to_string(all.feature_dim()) +
                        " pixels");
    }
    if (all.size() <= cfg.test_per_task) {
      throw ConfigError("config: IDX set has " + std::to_string(all.size()) +
                        " examples, test_per_task needs fewer");
    }
    std::vector<std::size_t> train_idx(all.size() - cfg.test_per_task);
    std::vector<std::size_t> test_idx(cfg.test_per_task);
    std::iota(train_idx.begin(), train_idx.end(), 0);
    std::iota(test_idx.begin(), test_idx.end(), train_idx.size());
    TaskData t;
    t.task_id = "idx";
    t.train = all.select(train_idx);
    t.test = all.select(test_idx);
    t.fewshot = fewshot_sample(t.train, cfg.fewshot_per_class, cfg.augment_factor,
                               AugmentOptions{cfg.augment_noise, true},
                               derive_seed(cfg.seed, kFewshotSeed));
    out.push_back(std::move(t));
    return out;
  }

  for (std::size_t i = 0; i < cfg.num_tasks; ++i) {
    SyntheticTaskSpec spec;
    spec.task_id = "task" + std::to_string(i);
    spec.num_classes = cfg.num_classes;
    spec.feature_dim = cfg.arch.feature_dim;
    spec.separation = cfg.separation;
    spec.noise = cfg.noise;
    spec.seed = derive_seed(cfg.seed, kTaskSeed) + i;
    // One draw, split by position, so train and test never share samples.
    const LabeledBatch all = gen_task(spec, cfg.train_per_task + cfg.test_per_task);
    std::vector<std::size_t> train_idx(cfg.train_per_task);
    std::vector<std::size_t> test_idx(cfg.test_per_task);
    std::iota(train_idx.begin(), train_idx.end(), 0);
    std::iota(test_idx.begin(), test_idx.end(), cfg.train_per_task);
    TaskData t;
    t.task_id = spec.task_id;
    t.train = all.select(train_idx);
    t.test = all.select(test_idx);
    t.fewshot = fewshot_sample(t.train, cfg.fewshot_per_class, cfg.augment_factor, synthetic_aug,
                               derive_seed(cfg.seed, kFewshotSeed) + i);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<double> evaluate(const ModelParams& params, const std::vector<TaskData>& tasks) {
  std::vector<double> out;
  for (const auto& t : tasks) out.push_back(100.0 * accuracy(params, t.test));
  return out;
}

SourceStage run_source_stage(const ExperimentConfig& cfg, const std::vector<TaskData>& tasks,
                             TrainMode mode) {
  SourceStage out;
  out.pretrained = init_model(cfg.arch, derive_seed(cfg.seed, kModelSeed));

  std::vector<std::future<ModelParams>> jobs;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    jobs.push_back(std::async(std::launch::async, [&, i] {
      TrainConfig tc = cfg.finetune;
      tc.seed = derive_seed(cfg.seed, kFinetuneSeed) + i;
      const BatchStream stream = minibatch_stream({tasks[i].train}, tc.batch_size, tc.seed);
      return fine_tune(out.pretrained, stream, mode, tc).params;
    }));
  }
  for (auto& job : jobs) out.finetuned.push_back(job.get());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    out.vectors.push_back(extract(out.finetuned[i], out.pretrained, mode, tasks[i].task_id));
  }
  return out;
}

RotatedTarget build_target(const ExperimentConfig& cfg, const ModelParams& source) {
  return make_rotated_target(source, derive_seed(cfg.seed, kRotationSeed));
}

ModelParams finetune_target(const ExperimentConfig& cfg, const ModelParams& target,
                            const std::vector<TaskVector>& vectors,
                            const std::vector<TaskData>& tasks) {
  TrainConfig tc = cfg.finetune;
  tc.steps = cfg.align.steps;
  tc.batch_size = cfg.align.batch_size;
  tc.seed = derive_seed(cfg.seed, kTargetFtSeed);
  const ModelParams start = apply_direct(target, vectors, 0.0);
  const BatchStream stream = minibatch_stream(fewshot_pools(tasks), tc.batch_size, tc.seed);
  return fine_tune(start, stream, cfg.mode, tc).params;
}

void Report::add_row(std::string method, std::vector<double> accuracies) {
  if (accuracies.size() != tasks.size()) {
    throw std::invalid_argument("Report::add_row: " + std::to_string(accuracies.size()) +
                                " values for " + std::to_string(tasks.size()) + " tasks");
  }
  ReportRow row{std::move(method), std::move(accuracies), 0.0};
  row.average = std::accumulate(row.accuracies.begin(), row.accuracies.end(), 0.0) /
      static_cast<double>(row.accuracies.size());
  rows.push_back(std::move(row));
}

const ReportRow& Report::row(std::string_view method) const {
  for (const auto& r : rows) {
    if (r.method == method) return r;
  }
  throw std::out_of_range("Report: no row '" + std::string(method) + "'");
}

std::string to_csv(const Report& report) {
  std::string out = "# " + report.command + " config_hash=" + report.config_hash + "\n";
  if (!report.grid.empty()) out += "# grid: " + report.grid + "\n";
  out += "method";
  for (const auto& t : report.tasks) out += "," + t;
  out += ",Avg\n";
  for (const auto& row : report.rows) {
    out += row.method;
    for (const double a : row.accuracies) out += "," + format_double(a);
    out += "," + format_double(row.average) + "\n";
  }
  return out;
}

std::string to_json(const Report& report) {
  nlohmann::ordered_json j;
  j["command"] = report.command;
  j["config_hash"] = report.config_hash;
  if (!report.grid.empty()) j["grid"] = report.grid;
  j["columns"] = report.tasks;
  j["columns"].push_back("Avg");
  auto& rows = j["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : report.rows) {
    nlohmann::ordered_json r;
    r["method"] = row.method;
    r["accuracy"] = row.accuracies;
    r["Avg"] = row.average;
    rows.push_back(std::move(r));
  }
  j["diagnostics"] = nlohmann::ordered_json::object();
  for (const auto& [key, values] : report.diagnostics) j["diagnostics"][key] = values;
  return j.dump(2) + "\n";
}

void write_report(const Report& report, const std::filesystem::path& out_dir,
                  const std::string& stem) {
  std::filesystem::create_directories(out_dir);
  const std::string csv = to_csv(report);
  const std::string json = to_json(report);
  write_file(out_dir / (stem + ".csv"),
             std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
  write_file(out_dir / (stem + ".json"),
             std::span(reinterpret_cast<const std::uint8_t*>(json.data()), json.size()));
}

Report cmd_bench(const ExperimentConfig& cfg) {
  run_stage("config", [&] { cfg.validate(); });
  Report report = new_report(cfg, "bench");
  return with_flush(cfg, report, "bench", [&] { bench_rows(cfg, cfg.mode, report, ""); });
}

Report cmd_sweep_alpha(const ExperimentConfig& cfg) {
  run_stage("config", [&] { cfg.validate(); });
  return sweep(cfg, SweepKind::alpha);
}

Report cmd_sweep_lambda(const ExperimentConfig& cfg) {
  run_stage("config", [&] { cfg.validate(); });
  return sweep(cfg, SweepKind::lambda);
}

Report cmd_fullweight(const ExperimentConfig& cfg) {
  run_stage("config", [&] { cfg.validate(); });
  Report report = new_report(cfg, "fullweight");
  return with_flush(cfg, report, "fullweight", [&] {
    bench_rows(cfg, TrainMode::embed_only, report, "embed:");
    bench_rows(cfg, TrainMode::full, report, "full:");
  });
}

void cmd_finetune(const ExperimentConfig& cfg) {
  run_stage("config", [&] { cfg.validate(); });
  const auto tasks = run_stage("data", [&] { return build_tasks(cfg); });
  const SourceStage src = run_stage("finetune", [&] { return run_source_stage(cfg, tasks, cfg.mode); });
  run_stage("io", [&] {
    std::filesystem::create_directories(cfg.out_dir);
    save_bytes(out_file(cfg, "source.mpar"), save(src.pretrained));
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      save_bytes(out_file(cfg, "finetuned." + tasks[i].task_id + ".mpar"), save(src.finetuned[i]));
    }
  });
}

void cmd_extract(const ExperimentConfig& cfg) {
  run_stage("config", [&] { cfg.validate(); });
  run_stage("extract", [&] {
    const ModelParams pre = read_model(out_file(cfg, "source.mpar"));
    for (const auto& id : configured_task_ids(cfg)) {
      const ModelParams ft = read_model(out_file(cfg, "finetuned." + id + ".mpar"));
      save_bytes(out_file(cfg, id + ".tvec"), save(extract(ft, pre, cfg.mode, id)));
    }
  });
}

void cmd_align(const ExperimentConfig& cfg) {
  run_stage("config", [&] { cfg.validate(); });
  const auto tasks = run_stage("data", [&] { return build_tasks(cfg); });
  const RotatedTarget target = run_stage("target", [&] {
    return build_target(cfg, read_model(out_file(cfg, "source.mpar")));
  });
  const auto tvs = run_stage("io", [&] { return read_vectors(cfg, task_ids(tasks)); });
  const AlignResult res = run_stage("align", [&] {
    return train_alignment(target.target, tvs, fewshot_pools(tasks),
                           align_config(cfg, cfg.align.alpha, cfg.align.lambda_scale),
                           align_options(cfg));
  });
  run_stage("io", [&] {
    save_bytes(out_file(cfg, "target.mpar"), save(target.target));
    for (const auto& al : res.alignments) save_bytes(out_file(cfg, al.task_id + ".algn"), save(al));
  });
}

void cmd_transfer(const ExperimentConfig& cfg) {
  run_stage("config", [&] { cfg.validate(); });
  run_stage("transfer", [&] {
    const auto ids = configured_task_ids(cfg);
    const ModelParams target = read_model(out_file(cfg, "target.mpar"));
    const auto tvs = read_vectors(cfg, ids);
    std::vector<Alignment> als;
    for (const auto& id : ids) als.push_back(load_alignment(read_file(out_file(cfg, id + ".algn"))));
    const double lambda = cfg.align.lambda_scale;
    save_bytes(out_file(cfg, "direct.mpar"), save(apply_direct(target, tvs, lambda)));
    save_bytes(out_file(cfg, "aligned.mpar"), save(apply_aligned(target, tvs, als, lambda)));
  });
}

Report cmd_eval(const ExperimentConfig& cfg) {
  run_stage("config", [&] { cfg.validate(); });
  Report report = new_report(cfg, "eval");
  return with_flush(cfg, report, "eval", [&] {
    const auto tasks = run_stage("data", [&] { return build_tasks(cfg); });
    report.tasks = task_ids(tasks);
    run_stage("eval", [&] {
      const ModelParams target = read_model(out_file(cfg, "target.mpar"));
      const auto tvs = read_vectors(cfg, report.tasks);
      report.add_row("target_only", evaluate(apply_direct(target, tvs, 0.0), tasks));
      report.add_row("direct", evaluate(read_model(out_file(cfg, "direct.mpar")), tasks));
      report.add_row("aligned", evaluate(read_model(out_file(cfg, "aligned.mpar")), tasks));
    });
  });
}

}  // namespace tvalign
