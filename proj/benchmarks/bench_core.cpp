#include <benchmark/benchmark.h>

#include "tvalign/align.hpp"
#include "tvalign/data.hpp"

using namespace tvalign;

namespace {

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Matrix a = Matrix::gaussian(n, n, rng);
  const Matrix b = Matrix::gaussian(n, n, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_Qr(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const Matrix a = Matrix::gaussian(n, n, rng);
  for (auto _ : state) benchmark::DoNotOptimize(qr_decompose(a));
}
BENCHMARK(BM_Qr)->Arg(16)->Arg(64);

struct Scenario {
  ModelParams target;
  std::vector<TaskVector> tvs;
  std::vector<Alignment> als;
  std::vector<LabeledBatch> batches;
};

Scenario scenario(std::size_t tasks) {
  Architecture arch;
  Scenario s;
  const ModelParams source = init_model(arch, 3);
  s.target = make_rotated_target(source, 4).target;
  Rng rng(5);
  for (std::size_t i = 0; i < tasks; ++i) {
    const std::string id = "task" + std::to_string(i);
    TaskVector tv;
    tv.task_id = id;
    for (std::size_t l = 0; l < arch.depth; ++l)
      tv.layers.emplace_back(DenseDelta{Matrix::gaussian(arch.width, arch.width, rng, 0.1)});
    tv.heads[id] = init_head(arch.width, 4, i, id);
    s.tvs.push_back(tv);
    s.als.push_back(identity_alignment(id, s.target));
    SyntheticTaskSpec spec;
    spec.task_id = id;
    spec.seed = i;
    s.batches.push_back(gen_task(spec, 32));
  }
  return s;
}

void BM_Transform(benchmark::State& state) {
  const Scenario s = scenario(1);
  const Alignment al{"task0", make_rotated_target(s.target, 9).truth.mats};
  for (auto _ : state) benchmark::DoNotOptimize(transform(s.tvs[0], al));
}
BENCHMARK(BM_Transform);

void BM_TotalLossBackward(benchmark::State& state) {
  const Scenario s = scenario(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    const auto loss = total_loss(s.target, s.tvs, s.als, s.batches, 1.0, 1.0);
    benchmark::DoNotOptimize(loss.tape.backward(loss.loss));
  }
}
BENCHMARK(BM_TotalLossBackward)->Arg(1)->Arg(4);

void BM_AlignmentSteps(benchmark::State& state) {
  const Scenario s = scenario(4);
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.steps = 10;
  for (auto _ : state) benchmark::DoNotOptimize(train_alignment(s.target, s.tvs, s.batches, cfg));
  state.SetItemsProcessed(state.iterations() * 10);
}
BENCHMARK(BM_AlignmentSteps)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
