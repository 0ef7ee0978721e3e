#include <benchmark/benchmark.h>

#include "hetpure/attack.hpp"
#include "hetpure/purifier.hpp"

using namespace hetpure;

namespace {

struct Fixture {
  NoiseSchedule schedule = build_linear_schedule(1000, 1e-4, 0.02);
  ClassifierModel classifier;
  DenoiserModel denoiser;
  Tensor image;

  Fixture() {
    ClassifierConfig cc;
    cc.in_channels = 1;
    cc.image_h = 16;
    cc.image_w = 16;
    cc.classes = 3;
    classifier = ClassifierModel::initialized(cc, 42);
    DenoiserNetConfig dc;
    dc.channels = 1;
    dc.image_h = 16;
    dc.image_w = 16;
    DenoiserModel net = DenoiserModel::learned(dc, 43);
    Rng jitter(44);
    for (double& v : net.conv_layers()[4].w) v = jitter.uniform(-0.1, 0.1);
    denoiser = std::move(net);
    image = Tensor(1, 16, 16);
    Rng rng(45);
    for (double& v : image.data) v = rng.uniform(0.0, 1.0);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

static void BM_ClassifierForward(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(f.classifier.predict(f.image));
}
BENCHMARK(BM_ClassifierForward);

static void BM_ClassifierInputGradient(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(f.classifier.input_gradient(f.image, 0));
}
BENCHMARK(BM_ClassifierInputGradient);

static void BM_DenoiserCall(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state)
    benchmark::DoNotOptimize(f.denoiser.predict_eps(f.image, 100, f.schedule));
}
BENCHMARK(BM_DenoiserCall);

static void BM_MaskConstruction(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) {
    auto [pred, stack] = f.classifier.forward_with_activations(f.image);
    auto maps = attention_maps_for_stack(stack, 16, 16, PoolMode::SumP, 2);
    benchmark::DoNotOptimize(build_mask(maps, 0.8));
  }
}
BENCHMARK(BM_MaskConstruction);

// full purification at the configured resampling mode
static void BM_Purify(benchmark::State& state) {
  auto& f = fixture();
  PurifyConfig cfg;
  cfg.t_l_frac = state.range(0) / 1000.0;
  cfg.t_s_frac = 0.05;
  cfg.resample_u = static_cast<int>(state.range(1));
  cfg.legacy_resample = state.range(2) != 0;
  cfg.rng_seed = 7;
  long calls = 0;
  for (auto _ : state) {
    PurifiedResult r = purify(f.image, f.classifier, f.denoiser, f.schedule, cfg);
    calls = r.denoiser_calls;
    benchmark::DoNotOptimize(r.image);
  }
  state.counters["denoiser_calls"] = static_cast<double>(calls);
}
BENCHMARK(BM_Purify)
    ->Args({200, 10, 0})   // single-step resampling at the default setting
    ->Args({200, 10, 1})   // legacy multi-step baseline
    ->Args({200, 0, 0})    // no resampling
    ->Unit(benchmark::kMillisecond);

static void BM_AdaptiveGradient(benchmark::State& state) {
  auto& f = fixture();
  PurifyConfig cfg;
  cfg.t_l_frac = 0.05;
  cfg.t_s_frac = 0.02;
  cfg.resample_u = 5;
  AttentionMask mask(16, 16, 0);
  for (int i = 0; i < 256; i += 2) mask.bits[i] = 1;
  for (auto _ : state)
    benchmark::DoNotOptimize(adaptive_gradient_sample(
        f.image, 0, f.classifier, f.denoiser, f.schedule, cfg, 11, &mask));
  state.SetLabel("full reverse-mode through purify->classify");
}
BENCHMARK(BM_AdaptiveGradient)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
