// Microbenchmarks for the hot paths: pitch tracking, the neural
// forward/backward pass, and the rank-based ensemble.

#include <benchmark/benchmark.h>

#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "mater/dsp.hpp"
#include "mater/ensemble.hpp"
#include "mater/nn.hpp"

namespace {

mater::AudioBuffer make_tone(double freq, double seconds, int sr = 16000) {
  mater::AudioBuffer audio;
  audio.sample_rate = sr;
  auto n = static_cast<std::size_t>(seconds * sr);
  audio.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    audio.samples[i] = 0.6 * std::sin(2.0 * M_PI * freq * i / sr);
  return audio;
}

void bench_estimate_f0(benchmark::State& state) {
  auto audio = make_tone(180.0, 1.0);
  for (auto _ : state) {
    auto track = mater::estimate_f0(audio);
    benchmark::DoNotOptimize(track);
  }
}
BENCHMARK(bench_estimate_f0)->Unit(benchmark::kMillisecond);

// Desk-sized model (same scale the unit tests use): a realistic shape
// for profiling without the full paper dimensions.
mater::ModelDims desk_dims() {
  mater::ModelDims d;
  d.lstm_hidden = 64;
  d.utt_in = 551;
  d.ple_bins = 8;
  d.utt_hidden = 64;
  d.latent_rows = 16;
  d.model_dim = 64;
  d.ffn_hidden = 128;
  d.pool_attn = 16;
  d.source_dims = {{"wav2vec2", 32}, {"bert", 24}};
  return d;
}

mater::FeatureBundle make_bundle(const mater::ModelDims& d, std::mt19937& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  mater::FeatureBundle b;
  b.word_seq.resize(12, d.word_in);
  for (Eigen::Index i = 0; i < b.word_seq.size(); ++i)
    b.word_seq.data()[i] = gauss(rng);
  b.utterance.resize(d.utt_in);
  for (Eigen::Index i = 0; i < b.utterance.size(); ++i)
    b.utterance[i] = gauss(rng);
  for (const auto& [name, cols] : d.source_dims) {
    Eigen::MatrixXd m(20, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = gauss(rng);
    b.embeddings[name] = m;
  }
  return b;
}

void bench_model_forward(benchmark::State& state) {
  auto dims = desk_dims();
  auto params = mater::init_params(dims, 7);
  std::mt19937 rng(11);
  auto bundle = make_bundle(dims, rng);
  std::vector<mater::Vec> utts(8, bundle.utterance);
  mater::fit_ple_edges(params, utts);
  for (auto _ : state) {
    auto out = mater::model_forward(bundle, params);
    benchmark::DoNotOptimize(out);
  }
}
BENCHMARK(bench_model_forward)->Unit(benchmark::kMicrosecond);

void bench_model_backward(benchmark::State& state) {
  auto dims = desk_dims();
  auto params = mater::init_params(dims, 7);
  std::mt19937 rng(11);
  auto bundle = make_bundle(dims, rng);
  std::vector<mater::Vec> utts(8, bundle.utterance);
  mater::fit_ple_edges(params, utts);
  mater::Vec target = mater::Vec::Zero(8);
  target[2] = 1.0;
  mater::Vec weights = mater::Vec::Ones(8);
  for (auto _ : state) {
    std::shared_ptr<mater::ForwardCache> cache;
    auto logits = mater::model_forward(bundle, params, &cache);
    mater::Vec d_logits;
    mater::weighted_ce(logits, target, weights, &d_logits);
    auto grads = mater::zero_grads(params);
    mater::model_backward(bundle, params, *cache, d_logits, grads);
    benchmark::DoNotOptimize(grads);
  }
}
BENCHMARK(bench_model_backward)->Unit(benchmark::kMicrosecond);

void bench_uncertainty_ensemble(benchmark::State& state) {
  const auto m = static_cast<Eigen::Index>(state.range(0));
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> unif(0.01, 1.0);
  std::vector<mater::ProbMatrix> models(5);
  for (auto& model : models) {
    model.probs.resize(m, 8);
    for (Eigen::Index i = 0; i < model.probs.size(); ++i)
      model.probs.data()[i] = unif(rng);
    model.probs.array().colwise() /= model.probs.rowwise().sum().array();
  }
  for (auto _ : state) {
    auto pred = mater::uncertainty_ensemble(models);
    benchmark::DoNotOptimize(pred);
  }
}
BENCHMARK(bench_uncertainty_ensemble)->Arg(100)->Arg(1000)
    ->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
