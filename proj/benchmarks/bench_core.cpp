#include <benchmark/benchmark.h>

#include "davr/attnet.hpp"
#include "davr/dan.hpp"
#include "davr/metrics.hpp"
#include "davr/rng.hpp"

using namespace davr;

namespace {

Tensor random_image(int64_t n, int64_t hw, Rng& rng) {
  Tensor t({n, 3, hw, hw});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0, 1);
  return t;
}

}  // namespace

static void BM_Conv2d3x3(benchmark::State& state) {
  int64_t c = state.range(0), hw = state.range(1);
  Rng rng(1);
  Var x = Var::leaf(random_tensor({1, c, hw, hw}, rng));
  Var w = Var::leaf(random_tensor({c, c, 3, 3}, rng));
  Var b = Var::leaf(Tensor({c}));
  for (auto _ : state) {
    NoGradGuard guard;
    benchmark::DoNotOptimize(conv2d(x, w, b, 1, 1).value().data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_Conv2d3x3)->Args({64, 32})->Args({128, 16})->Args({256, 8});

static void BM_GramMatrix(benchmark::State& state) {
  int64_t c = state.range(0);
  Rng rng(2);
  Var f = Var::leaf(random_tensor({1, c, 16, 16}, rng));
  for (auto _ : state) {
    NoGradGuard guard;
    benchmark::DoNotOptimize(dan::gram(f).value().data());
  }
}
BENCHMARK(BM_GramMatrix)->Arg(64)->Arg(256);

static void BM_Translate(benchmark::State& state) {
  dan::DanArch arch;
  arch.base_channels = static_cast<int>(state.range(0));
  dan::DanModel m = dan::DanModel::create(arch, 3);
  Rng rng(4);
  Var img = Var::leaf(random_image(1, state.range(1), rng));
  for (auto _ : state) {
    NoGradGuard guard;
    benchmark::DoNotOptimize(dan::translate(m.G, img).value().data());
  }
}
BENCHMARK(BM_Translate)->Args({16, 32})->Args({16, 64})->Unit(benchmark::kMillisecond);

static void BM_GeneratorStepBackward(benchmark::State& state) {
  dan::DanArch arch;
  arch.base_channels = 16;
  arch.disc_downsamples = 3;
  dan::DanModel m = dan::DanModel::create(arch, 5);
  Rng rng(6);
  Var x = Var::leaf(random_image(1, 32, rng));
  Var y = Var::leaf(random_image(1, 32, rng));
  auto params = m.generator_params();
  for (auto _ : state) {
    AdamOptimizer::zero_grad(params);
    dan::TranslateTrace g_x = dan::translate_traced(m.G, x);
    Var l = add(dan::l1_mean(dan::translate(m.F, g_x.output), x),
                mean_all(square(add_scalar(dan::discriminator_score(m.D_T, g_x.output), -1.0))));
    backward(l);
    benchmark::DoNotOptimize(params.front().var.grad().data());
  }
  state.SetLabel("cycle+adv partial step");
}
BENCHMARK(BM_GeneratorStepBackward)->Unit(benchmark::kMillisecond);

static void BM_AttnetEmbedding(benchmark::State& state) {
  attnet::AttNetArch arch = attnet::AttNetArch::smoke(20, 32);
  attnet::AttNetParams p = attnet::AttNetParams::create(arch, 7);
  Rng rng(8);
  Var img = Var::leaf(random_image(8, 32, rng));
  for (auto _ : state) {
    NoGradGuard guard;
    benchmark::DoNotOptimize(attnet::extract_embedding(p, img, false).f_a.value().data());
  }
}
BENCHMARK(BM_AttnetEmbedding)->Unit(benchmark::kMillisecond);

static void BM_Evaluate(benchmark::State& state) {
  int nq = static_cast<int>(state.range(0)), ng = static_cast<int>(state.range(1));
  Rng rng(9);
  DatasetIndex qi, gi;
  for (int i = 0; i < nq; ++i)
    qi.records.push_back({"q", static_cast<int>(rng.uniform_int(0, 99)), 0, Domain::target});
  for (int i = 0; i < ng; ++i)
    gi.records.push_back({"g", static_cast<int>(rng.uniform_int(0, 99)), 0, Domain::target});
  qi.num_identities = gi.num_identities = 100;
  Tensor Q = random_tensor({nq, 256}, rng);
  Tensor G = random_tensor({ng, 256}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        metrics::evaluate(qi, gi, Q, G, metrics::Protocol::plain, 50).mAP);
  }
}
BENCHMARK(BM_Evaluate)->Args({100, 1000})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
