#include <benchmark/benchmark.h>

#include "bvr/cfc.hpp"
#include "bvr/corruption.hpp"
#include "bvr/dac.hpp"
#include "bvr/dataset.hpp"
#include "bvr/metrics.hpp"
#include "bvr/sideinfo.hpp"

namespace {

using namespace bvr;

Image noise_image(Rng& rng, int h, int w, int c) {
  Image img(h, w, c);
  for (Eigen::Index i = 0; i < img.data.size(); ++i) img.data.data()[i] = rng.uniform();
  return img;
}

Image block_mask(int h, int w) {
  Image m(h, w, 1);
  for (int y = h / 4; y < h / 2; ++y)
    for (int x = w / 4; x < w / 2; ++x) m.at(y, x, 0) = 1.0;
  return m;
}

void BM_CosineAttention(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  Rng rng(1);
  const Var q = ag::constant(nn::normal_matrix(rng, m, 128, 1.0));
  const Var k = ag::constant(nn::normal_matrix(rng, 25, 128, 1.0));
  const Var v = ag::constant(nn::normal_matrix(rng, 25, 128, 1.0));
  const Var tau = ag::constant(Matrix::Constant(1, 1, 0.2));
  for (auto _ : state) benchmark::DoNotOptimize(cosine_attention(q, k, v, tau).output.value().data());
}
BENCHMARK(BM_CosineAttention)->Arg(256)->Arg(1024);

void BM_RenderMvMap(benchmark::State& state) {
  Rng rng(2);
  SideInfo info = SideInfo::intra(15, 27);
  info.mode = PredMode::P;
  info.mv = nn::normal_matrix(rng, 15 * 27, 2, 8.0);
  const Image frame = noise_image(rng, 240, 432, 3);
  for (auto _ : state) benchmark::DoNotOptimize(render_mv_map(info, frame, 0.5).image.data.data());
}
BENCHMARK(BM_RenderMvMap);

void BM_Ssim(benchmark::State& state) {
  Rng rng(3);
  const Image a = noise_image(rng, 240, 432, 3), b = noise_image(rng, 240, 432, 3);
  for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(BM_Ssim)->Unit(benchmark::kMillisecond);

void BM_SimulateCorruption(benchmark::State& state) {
  Rng rng(4);
  VideoSequence clean = synthesize_clean_video(rng, 8, 64, 64, 25.0, nullptr);
  CorruptionSpec spec;
  for (auto _ : state) benchmark::DoNotOptimize(simulate_corruption(clean, spec).corrupted.frames.size());
}
BENCHMARK(BM_SimulateCorruption)->Unit(benchmark::kMillisecond);

void BM_DacForward(benchmark::State& state) {
  ModelConfig mc;
  Rng rng(5);
  const DacModel dac(mc, rng);
  const Image frame = noise_image(rng, mc.height, mc.width, 3);
  SideInfo info = SideInfo::intra(mc.height / 16, mc.width / 16);
  for (auto _ : state) benchmark::DoNotOptimize(dac.forward(frame, info).decoded.logits.value().data());
}
BENCHMARK(BM_DacForward)->Unit(benchmark::kMillisecond);

void BM_DacTrainStep(benchmark::State& state) {
  ModelConfig mc;
  Rng rng(6);
  const DacModel dac(mc, rng);
  const Image frame = noise_image(rng, mc.height, mc.width, 3);
  SideInfo info = SideInfo::intra(mc.height / 16, mc.width / 16);
  const ParamSet params = dac.parameters();
  for (auto _ : state) {
    ag::backward(ag::mean(dac.forward(frame, info).decoded.logits));
    params.zero_grad();
  }
}
BENCHMARK(BM_DacTrainStep)->Unit(benchmark::kMillisecond);

void BM_CfcForward(benchmark::State& state) {
  ModelConfig mc;
  Rng rng(7);
  const DacModel dac(mc, rng);
  const CfcModel cfc(mc, mc.encoder.channels, rng);
  const SideInfo info = SideInfo::intra(mc.height / 16, mc.width / 16);
  CfcClipInput in;
  for (int t = 0; t < 5; ++t) {
    in.frames.push_back(noise_image(rng, mc.height, mc.width, 3));
    in.masks.push_back(block_mask(mc.height, mc.width));
    in.foundation.push_back(detach(dac.forward(in.frames.back(), info).refined));
  }
  for (int t = 0; t < 3; ++t) {
    in.nonlocal_frames.push_back(noise_image(rng, mc.height, mc.width, 3));
    in.nonlocal_masks.push_back(block_mask(mc.height, mc.width));
  }
  for (auto _ : state) benchmark::DoNotOptimize(cfc.forward(in).recovered.size());
}
BENCHMARK(BM_CfcForward)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
