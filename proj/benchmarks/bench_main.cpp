#include <benchmark/benchmark.h>

#include <random>

#include "cfx/classifier.hpp"
#include "cfx/gan.hpp"
#include "cfx/nn/ops.hpp"

using namespace cfx;

namespace {

nn::Tensor random_tensor(nn::Shape s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    nn::Tensor t(s);
    for (auto& v : t.values()) v = d(rng);
    return t;
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
    const int side = static_cast<int>(state.range(0));
    nn::Var x(random_tensor({1, 8, side, side}, 1));
    nn::Var w(random_tensor({16, 8, 3, 3}, 2));
    nn::Var b(random_tensor({16, 1, 1, 1}, 3));
    w.set_requires_grad(true);
    for (auto _ : state) {
        w.zero_grad();
        nn::backward(nn::mean(nn::conv2d(x, w, b, 1, 1)));
        benchmark::DoNotOptimize(w.grad());
    }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(32)->Arg(64);

void BM_GeneratorForward(benchmark::State& state) {
    const auto config = gan::GanConfig::desk(static_cast<int>(state.range(0)));
    auto bundle = gan::GanBundle::create(config, "bench", 1);
    bundle.freeze();
    const nn::Var x(random_tensor({1, 1, config.resolution, config.resolution}, 4));
    for (auto _ : state) benchmark::DoNotOptimize(bundle.G(x).value());
}
BENCHMARK(BM_GeneratorForward)->Arg(64);

void BM_ClassifierPredict(benchmark::State& state) {
    auto model = clf::build(clf::ClassifierConfig::defaults(clf::Architecture::SmallCnn, 64), 1);
    model.freeze();
    const Image image = Image::from_tensor(random_tensor({1, 1, 64, 64}, 5));
    for (auto _ : state) benchmark::DoNotOptimize(model.predict(image));
}
BENCHMARK(BM_ClassifierPredict);

// Forward and backward of the full generator objective at the desk preset.
void BM_GeneratorObjectiveStep(benchmark::State& state) {
    auto model = clf::build(clf::ClassifierConfig::defaults(clf::Architecture::SmallCnn, 64), 1);
    model.freeze();
    const auto config = gan::GanConfig::desk(64);
    auto bundle = gan::GanBundle::create(config, model.checksum(), 1);
    const nn::Var x(random_tensor({1, 1, 64, 64}, 6)), y(random_tensor({1, 1, 64, 64}, 7));
    for (auto _ : state) {
        bundle.G.zero_grad();
        bundle.F.zero_grad();
        const auto o = gan::total_objective(bundle, model, x, y, config.weights);
        nn::backward(o.generator_total);
        benchmark::DoNotOptimize(o.generator_total.item());
    }
}
BENCHMARK(BM_GeneratorObjectiveStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
