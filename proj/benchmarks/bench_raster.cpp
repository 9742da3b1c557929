#include "maskshape/humanoid.hpp"
#include "maskshape/raster.hpp"

#include <benchmark/benchmark.h>

using namespace maskshape;

static void BM_RenderFrontal(benchmark::State& state)
{
    const Mesh body = template_mesh();
    const int resolution = static_cast<int>(state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(render_view(body, View::Frontal, resolution));
    }
}
BENCHMARK(BM_RenderFrontal)->Arg(64)->Arg(128);

static void BM_RenderLateral(benchmark::State& state)
{
    const Mesh body = template_mesh();
    for (auto _ : state) {
        benchmark::DoNotOptimize(render_view(body, View::Lateral, 64));
    }
}
BENCHMARK(BM_RenderLateral);
