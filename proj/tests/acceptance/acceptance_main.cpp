// Runs the ten end-to-end acceptance checks and prints one PASS/FAIL line
// for each. Exit status is nonzero when any check fails.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "../fuzz.hpp"
#include "../oracles.hpp"
#include "tvalign/align.hpp"
#include "tvalign/checkpoint.hpp"
#include "tvalign/data.hpp"
#include "tvalign/experiments.hpp"

using namespace tvalign;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Check = std::function<Outcome()>;

ModelParams small_model(std::uint64_t seed, std::size_t d, std::size_t depth) {
  Architecture arch;
  arch.feature_dim = 3;
  arch.width = d;
  arch.depth = depth;
  return init_model(arch, seed);
}

TaskVector dense_vector(const std::string& id, const ModelParams& p, Rng& rng) {
  TaskVector tv;
  tv.task_id = id;
  for (std::size_t l = 0; l < p.depth(); ++l)
    tv.layers.emplace_back(DenseDelta{Matrix::gaussian(p.width(), p.width(), rng, 0.3)});
  tv.heads[id] = Matrix::gaussian(p.width(), 3, rng);
  return tv;
}

LabeledBatch random_batch(const std::string& id, std::size_t n, Rng& rng) {
  LabeledBatch b;
  b.task_id = id;
  b.num_classes = 3;
  b.features = Matrix::gaussian(n, 3, rng);
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(static_cast<int>(rng.below(3)));
  return b;
}

Alignment perturbed_alignment(const std::string& id, std::size_t d, std::size_t depth, Rng& rng,
                              double noise) {
  Alignment al{id, {}};
  for (std::size_t l = 0; l < depth; ++l) {
    Matrix u = random_orthogonal(d, rng);
    if (noise > 0) u = add(u, Matrix::gaussian(d, d, rng, noise));
    al.mats.push_back(u);
  }
  return al;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

Outcome norm_preservation() {
  Rng rng(101);
  const std::size_t dims[] = {4, 8, 16, 32};
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t d = dims[i % 4];
    const Matrix delta = Matrix::gaussian(d, d, rng);
    const Matrix u = random_orthogonal(d, rng);
    const double before = frob_norm(delta);
    const double after = frob_norm(conjugate(delta, u));
    worst = std::max(worst, std::abs(after - before) / before);
  }
  return {worst <= 1e-9, fmt("max relative change %.3g", worst)};
}

Outcome rank_preservation() {
  Rng rng(202);
  const std::size_t dims[] = {4, 8, 16, 32};
  int mismatches = 0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t d = dims[i % 4];
    TaskVector tv;
    tv.task_id = "t";
    if (i % 2 == 0) {
      const std::size_t r = std::min<std::size_t>(std::size_t{1} << (i / 2 % 3), d);  // 1, 2, 4
      tv.layers.emplace_back(LowRankDelta{Matrix::gaussian(d, r, rng), Matrix::gaussian(r, d, rng)});
    } else {
      tv.layers.emplace_back(DenseDelta{Matrix::gaussian(d, d, rng)});
    }
    const Alignment al{"t", {random_orthogonal(d, rng)}};
    const Matrix before = dense_delta(tv.layers[0]);
    const Matrix after = dense_delta(transform(tv, al).layers[0]);
    mismatches += numerical_rank(before) != numerical_rank(after);
    mismatches += numerical_rank(before) != oracle::elimination_rank(before);
  }
  return {mismatches == 0, fmt("%.0f rank mismatches", mismatches)};
}

Outcome gradient_check() {
  Rng rng(303);
  double worst = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t d = 2 + rng.below(7);  // 2..8
    const ModelParams target = small_model(rng.next_u64(), d, 2);
    const std::vector<TaskVector> tvs{dense_vector("a", target, rng), dense_vector("b", target, rng)};
    const std::vector<Alignment> als{perturbed_alignment("a", d, 2, rng, 0.2),
                                     perturbed_alignment("b", d, 2, rng, 0.2)};
    const std::vector<LabeledBatch> batches{random_batch("a", 6, rng), random_batch("b", 6, rng)};
    const auto loss = total_loss(target, tvs, als, batches, 1.0, 1.0);
    const auto grads = loss.tape.backward(loss.loss);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t l = 0; l < 2; ++l) {
        auto f = [&](const Matrix& u) {
          std::vector<Alignment> moved = als;
          moved[i].mats[l] = u;
          return total_loss(target, tvs, moved, batches, 1.0, 1.0).value();
        };
        const Matrix numeric = oracle::central_difference(f, als[i].mats[l], 1e-5);
        worst = std::max(worst, oracle::max_rel_error(grads.at(loss.u_nodes[i][l]), numeric));
      }
    }
  }
  return {worst <= 1e-4, fmt("max relative error %.3g", worst)};
}

Outcome identity_baseline() {
  Rng rng(404);
  int failures = 0;
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t d = 2 + rng.below(15);
    const ModelParams target = small_model(rng.next_u64(), d, 1 + rng.below(4));
    std::vector<TaskVector> tvs;
    std::vector<Alignment> als;
    std::vector<LabeledBatch> batches;
    for (const char* id : {"a", "b", "c"}) {
      tvs.push_back(dense_vector(id, target, rng));
      als.push_back(identity_alignment(id, target));
      batches.push_back(random_batch(id, 8, rng));
    }
    const double lambda = 0.25 + rng.uniform() * 2.0;
    const auto loss = total_loss(target, tvs, als, batches, 1.0, lambda);
    const double direct = cross_entropy(apply_direct(target, tvs, lambda), batches);
    failures += std::bit_cast<std::uint64_t>(loss.value()) != std::bit_cast<std::uint64_t>(direct);
    failures += loss.penalty_value() != 0.0;
  }
  return {failures == 0, fmt("%.0f of 20 instances differ", failures)};
}

double mean(const std::vector<double>& xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

Outcome rotation_recovery() {
  double aligned = 0.0, direct = 0.0, source_ft = 0.0, worst_truth_gap = 0.0;
  const std::uint64_t seeds[] = {0, 1, 2};
  for (const auto seed : seeds) {
    ExperimentConfig cfg;  // K = 4, d = 16, 25 per class × 4 classes, 100 steps, α = λ = 1
    cfg.seed = seed;
    cfg.out_dir = std::filesystem::temp_directory_path() / "tvalign_acceptance_c5";
    const Report r = cmd_bench(cfg);
    const auto& truth = r.diagnostics.at("truth_aligned");
    const auto& merged = r.diagnostics.at("source_merged");
    for (std::size_t i = 0; i < truth.size(); ++i)
      worst_truth_gap = std::max(worst_truth_gap, std::abs(truth[i] - merged[i]));
    aligned += r.row("aligned").average / 3.0;
    direct += r.row("direct").average / 3.0;
    source_ft += mean(r.diagnostics.at("source_finetuned")) / 3.0;
  }
  const bool pass = worst_truth_gap <= 1.0 && aligned >= direct + 10.0 && aligned >= 0.9 * source_ft;
  return {pass, fmt("aligned %.2f, direct %.2f, source ft %.2f", aligned, direct, source_ft) +
                    fmt(", truth gap %.3g pp", worst_truth_gap)};
}

Outcome lambda_zero() {
  ExperimentConfig cfg;
  cfg.lambda_grid = {0.0, 1.0};
  cfg.out_dir = std::filesystem::temp_directory_path() / "tvalign_acceptance_c6";
  const Report r = cmd_sweep_lambda(cfg);
  const bool pass = r.row("lambda=0").accuracies == r.diagnostics.at("target_only");
  return {pass, fmt("lambda=0 avg %.4f", r.row("lambda=0").average)};
}

Outcome additivity() {
  Rng rng(707);
  double worst = 0.0;
  for (std::size_t k : {1, 2, 4, 8}) {
    const ModelParams target = small_model(rng.next_u64(), 8, 3);
    std::vector<TaskVector> tvs;
    std::vector<Alignment> als;
    for (std::size_t i = 0; i < k; ++i) {
      const std::string id = "t" + std::to_string(i);
      tvs.push_back(dense_vector(id, target, rng));
      als.push_back(perturbed_alignment(id, 8, 3, rng, 0.1));
    }
    const ModelParams merged = apply_aligned(target, tvs, als, 1.0);
    for (std::size_t l = 0; l < target.depth(); ++l) {
      Matrix want = target.layers[l];
      for (std::size_t i = 0; i < k; ++i)
        want = add(want, dense_delta(transform(tvs[i], als[i]).layers[l]));
      worst = std::max(worst, max_abs_diff(merged.layers[l], want));
    }
  }
  return {worst <= 1e-12, fmt("max abs difference %.3g", worst)};
}

Outcome persistence() {
  Rng rng(808);
  int bad_round_trips = 0, accepted_corrupt = 0;
  for (int i = 0; i < 1000; ++i) {
    const int which = i % 3;
    std::vector<std::uint8_t> bytes;
    if (which == 0) {
      const auto tv = fuzz::task_vector(rng);
      bytes = save(tv);
      bad_round_trips += !(load_task_vector(bytes) == tv) || save(load_task_vector(bytes)) != bytes;
    } else if (which == 1) {
      const auto al = fuzz::alignment(rng);
      bytes = save(al);
      bad_round_trips += !(load_alignment(bytes) == al) || save(load_alignment(bytes)) != bytes;
    } else {
      const auto p = fuzz::model(rng);
      bytes = save(p);
      bad_round_trips += save(load_model(bytes)) != bytes;
    }
    const auto corrupt = fuzz::corrupt(bytes, rng);
    try {
      if (which == 0) load_task_vector(corrupt);
      else if (which == 1) load_alignment(corrupt);
      else load_model(corrupt);
      ++accepted_corrupt;
    } catch (const FormatError&) {
    }
  }
  return {bad_round_trips == 0 && accepted_corrupt == 0,
          fmt("%.0f round-trip failures, %.0f corrupt buffers accepted", bad_round_trips,
              accepted_corrupt)};
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& p) { return read_file(p); }

Outcome determinism() {
  const auto base = std::filesystem::temp_directory_path();
  ExperimentConfig a;
  a.out_dir = base / "tvalign_acceptance_c9a";
  ExperimentConfig b = a;
  b.out_dir = base / "tvalign_acceptance_c9b";
  cmd_bench(a);
  cmd_bench(b);
  bool same = true;
  for (const char* f : {"bench.csv", "bench.json"}) same = same && slurp(a.out_dir / f) == slurp(b.out_dir / f);
  return {same, same ? "csv and json identical" : "reports differ"};
}

Outcome fullweight() {
  ExperimentConfig cfg;
  cfg.num_tasks = 2;
  cfg.out_dir = std::filesystem::temp_directory_path() / "tvalign_acceptance_c10";
  const Report r = cmd_fullweight(cfg);
  bool rows = true;
  for (const char* mode : {"embed:", "full:"})
    for (const char* row : {"target_only", "target_ft", "direct", "aligned"}) {
      try {
        r.row(std::string(mode) + row);
      } catch (const std::out_of_range&) {
        rows = false;
      }
    }

  const auto tasks = build_tasks(cfg);
  const auto embed = run_source_stage(cfg, tasks, TrainMode::embed_only);
  const auto full = run_source_stage(cfg, tasks, TrainMode::full);
  const std::size_t f = cfg.arch.feature_dim, w = cfg.arch.width;
  bool contracts = true;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    contracts = contracts && frob_norm(embed.vectors[i].aux_or_zero("input_proj", f, w)) == 0.0;
    contracts = contracts && frob_norm(full.vectors[i].aux_or_zero("input_proj", f, w)) > 0.0;
  }
  return {rows && contracts, std::string("rows ") + (rows ? "complete" : "missing") +
                                 ", mode contracts " + (contracts ? "hold" : "violated")};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, Check>> checks = {
      {"norm preservation", norm_preservation},
      {"rank preservation", rank_preservation},
      {"gradient correctness", gradient_check},
      {"identity-start baseline", identity_baseline},
      {"rotation recovery", rotation_recovery},
      {"lambda = 0 no-op", lambda_zero},
      {"cumulative additivity", additivity},
      {"round-trip persistence", persistence},
      {"determinism", determinism},
      {"full-weight mode", fullweight},
  };
  const double budgets[] = {5, 10, 30, 60, 300, 120, 60, 120, 120, 300};

  int failed = 0;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = checks[i].second();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs > budgets[i]) {
      out.pass = false;
      out.detail += fmt(" (over the %.0f s budget)", budgets[i]);
    }
    failed += !out.pass;
    std::printf("%s criterion %zu (%s): %s [%.2f s]\n", out.pass ? "PASS" : "FAIL", i + 1,
                checks[i].first, out.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, checks.size());
  return failed == 0 ? 0 : 1;
}
