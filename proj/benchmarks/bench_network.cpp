#include "maskshape/nn/layers.hpp"
#include "maskshape/regressor.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace maskshape;
using nn::Tensor;

namespace {

Tensor<float> random_masks(std::size_t batch, std::size_t side)
{
    std::mt19937_64 rng(1);
    std::bernoulli_distribution bit(0.3);
    Tensor<float> t({batch, 1, side, side});
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = bit(rng) ? 1.0f : 0.0f;
    }
    return t;
}

} // namespace

static void BM_Conv5x5Forward(benchmark::State& state)
{
    std::mt19937_64 rng(2);
    nn::Conv2d<float> conv(16, 16, 5, 5, 1, 2, rng);
    std::normal_distribution<float> n01;
    Tensor<float> x({8, 16, 64, 64});
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = n01(rng);
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(conv.forward(x, nn::Mode::Eval));
    }
}
BENCHMARK(BM_Conv5x5Forward)->Unit(benchmark::kMillisecond);

static void BM_BranchForward(benchmark::State& state)
{
    BranchNet net(View::Frontal, NetConfig{}, 3);
    const auto x = random_masks(static_cast<std::size_t>(state.range(0)), 64);
    for (auto _ : state) {
        benchmark::DoNotOptimize(net.forward(x, nn::Mode::Eval));
    }
}
BENCHMARK(BM_BranchForward)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_BranchTrainStep(benchmark::State& state)
{
    BranchNet net(View::Frontal, NetConfig{}, 3);
    const auto x = random_masks(32, 64);
    Tensor<float> grad({32, 20});
    grad.fill(1e-3f);
    for (auto _ : state) {
        net.zero_grad();
        benchmark::DoNotOptimize(net.forward(x, nn::Mode::Train));
        benchmark::DoNotOptimize(net.backward(grad));
    }
}
BENCHMARK(BM_BranchTrainStep)->Unit(benchmark::kMillisecond);
