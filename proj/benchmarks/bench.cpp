#include <benchmark/benchmark.h>

#include <random>

#include "contrastcat/attribution/attribution.hpp"
#include "contrastcat/corpus/corpus.hpp"
#include "contrastcat/encoder/encoder.hpp"
#include "contrastcat/numkernel/matrix.hpp"
#include "contrastcat/refine/refine.hpp"
#include "contrastcat/reflib/reflib.hpp"

namespace {

using namespace ccat;

// Untrained default-sized encoder; cost does not depend on the weights.
struct Setup {
  Corpus corpus = synth_sentiment(1, 400, 50);
  Encoder model = [this] {
    EncoderConfig ec;
    ec.vocab_size = corpus.vocab.size();
    ec.max_len = corpus.max_len;
    ec.classes = corpus.classes;
    return Encoder(ec);
  }();
  ReferenceLibrary pool =
      build_reference_pool(model, corpus, ReferenceSelection::kRandom, kDefaultGamma,
                           kDefaultReferencesPerClass, 3);
  const TokenSequence& sample() const { return corpus.test[0]; }
};

const Setup& setup() {
  static const Setup s;
  return s;
}

nk::Matrix filled(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  nk::Matrix m(r, c, 0.0);
  for (double& v : m.data()) v = u(rng);
  return m;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = filled(n, n, 1), b = filled(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(nk::matmul(a, b));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(16, 256)->Complexity(benchmark::oNCubed);

void BM_Forward(benchmark::State& state) {
  const auto& s = setup();
  for (auto _ : state) benchmark::DoNotOptimize(s.model.forward(s.sample()));
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMicrosecond);

void BM_Analyze(benchmark::State& state) {
  const auto& s = setup();
  for (auto _ : state) benchmark::DoNotOptimize(s.model.analyze(s.sample(), 0));
}
BENCHMARK(BM_Analyze)->Unit(benchmark::kMicrosecond);

void BM_ContrastMap(benchmark::State& state) {
  const auto& s = setup();
  const auto trace = s.model.forward(s.sample());
  const auto grads = s.model.class_gradients(s.sample(), 0);
  const auto abar = averaged_attention(trace);
  const auto ref = reference_for(s.pool.entries(0).front(), trace.length());
  for (auto _ : state) benchmark::DoNotOptimize(contrast_map(trace, grads, ref, abar));
}
BENCHMARK(BM_ContrastMap)->Unit(benchmark::kMicrosecond);

void BM_Baselines(benchmark::State& state) {
  const auto& s = setup();
  const auto m = static_cast<Method>(state.range(0));
  state.SetLabel(method_tag(m));
  for (auto _ : state) benchmark::DoNotOptimize(baseline_map(s.model, s.sample(), 0, m));
}
BENCHMARK(BM_Baselines)
    ->DenseRange(static_cast<int>(Method::kRawAtt), static_cast<int>(Method::kAttCat))
    ->Unit(benchmark::kMicrosecond);

void BM_Refine(benchmark::State& state) {
  const auto& s = setup();
  const auto& refs = s.pool.entries(0);
  const std::vector<ReferenceEntry> used(refs.begin(),
                                         refs.begin() + std::min<std::size_t>(state.range(0), refs.size()));
  for (auto _ : state) benchmark::DoNotOptimize(refine(s.model, s.sample(), 0, used, {}));
}
BENCHMARK(BM_Refine)->Arg(1)->Arg(5)->Arg(30)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
