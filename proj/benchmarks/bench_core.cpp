#include <benchmark/benchmark.h>

#include <random>

#include "semaforge/attention.hpp"
#include "semaforge/backbone.hpp"
#include "semaforge/branches.hpp"
#include "semaforge/metrics.hpp"
#include "semaforge/mfss.hpp"
#include "semaforge/nn.hpp"
#include "semaforge/synthetic.hpp"

using namespace semaforge;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

// Args: batch, side, cin, cout.
void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0)), s = static_cast<std::size_t>(state.range(1));
  const auto cin = static_cast<std::size_t>(state.range(2)), cout = static_cast<std::size_t>(state.range(3));
  Rng rng(1);
  Conv2d conv(cin, cout, rng);
  const Tensor x = random_tensor({n, s, s, cin}, 2);
  for (auto _ : state) {
    Tensor y = sum(conv.forward(x));
    y.backward();
    benchmark::DoNotOptimize(y.item());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Conv2dForwardBackward)->Args({16, 64, 3, 3})->Args({16, 64, 3, 8})->Args({16, 32, 8, 16})->Unit(benchmark::kMillisecond);

// One SGD-free training step of a default fragment classifier (LAM + backbone).
void BM_ClassifierTrainStep(benchmark::State& state) {
  const auto s = static_cast<std::size_t>(state.range(0));
  ModelConfig config;
  config.fragment_size = s;
  Rng rng(3);
  FragmentClassifier clf(config, rng);
  const Tensor x = random_tensor({16, s, s, 3}, 4);
  const std::vector<int> y = {0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
  for (auto _ : state) {
    Tensor loss = cross_entropy(softmax(clf.forward(x, Mode::train).logits), y);
    loss.backward();
    benchmark::DoNotOptimize(loss.item());
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_ClassifierTrainStep)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_SamWeight(benchmark::State& state) {
  const auto s = static_cast<std::size_t>(state.range(0));
  Rng rng(5);
  Sam sam(rng);
  const Tensor x = random_tensor({8, s, s, 3}, 6);
  for (auto _ : state) {
    NoGradGuard no_grad;
    benchmark::DoNotOptimize(sam.forward(x, Mode::eval).at(0));
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_SamWeight)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Segment(benchmark::State& state) {
  const RenderedFace face = generate_face(random_face_params(7));
  for (auto _ : state) {
    const FragmentSet f = segment(face.image, face.landmarks, static_cast<std::size_t>(state.range(0)));
    benchmark::DoNotOptimize(f.crops[0].data.data());
  }
}
BENCHMARK(BM_Segment)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_RenderFace(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) {
    const RenderedFace face = generate_face(random_face_params(seed++));
    benchmark::DoNotOptimize(face.image.data.data());
  }
}
BENCHMARK(BM_RenderFace)->Unit(benchmark::kMicrosecond);

void BM_Fuse(benchmark::State& state) {
  PossibilityMatrix p;
  WeightMatrix w;
  for (std::size_t i = 0; i < kFragmentCount; ++i) {
    p.rows[0][i] = 0.1 * static_cast<double>(i + 1);
    p.rows[1][i] = 1.0 - p.rows[0][i];
    w.values[i] = 0.5 + 0.05 * static_cast<double>(i);
  }
  for (auto _ : state) benchmark::DoNotOptimize(fuse(p, w).scores);
}
BENCHMARK(BM_Fuse);

void BM_RocAuc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(8);
  std::vector<double> s(n);
  std::vector<int> pos(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = std::uniform_real_distribution<double>()(rng);
    pos[i] = static_cast<int>(i % 2);
  }
  for (auto _ : state) benchmark::DoNotOptimize(roc_auc(s, pos).auc);
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_RocAuc)->Arg(400)->Arg(10000);

}  // namespace
BENCHMARK_MAIN();
