// Serial vs OpenMP batch kernels.
//
//   ./bench_kernels --benchmark_filter=Score

#include <benchmark/benchmark.h>

#include <random>

#include "reportsmith/kernels.hpp"

using namespace reportsmith;

namespace {

const std::vector<std::string> kWords = {
    "click", "open",  "save",   "button", "menu",  "dialog", "page",  "crash",  "error",   "window",
    "the",   "a",     "should", "shows",  "blank", "after",  "when",  "select", "tab",     "file",
    "print", "load",  "scroll", "icon",   "hang",  "slow",   "frame", "text",   "version", "firefox"};

std::string sentence(std::mt19937_64& rng, int n) {
  std::uniform_int_distribution<std::size_t> pick(0, kWords.size() - 1);
  std::string s;
  for (int i = 0; i < n; ++i) s += (i ? " " : "") + kWords[pick(rng)];
  return s + ".";
}

std::vector<StructuredReport> make_reports(std::size_t n) {
  std::mt19937_64 rng(1);
  std::vector<StructuredReport> out(n);
  for (auto& r : out) {
    r.title = sentence(rng, 6);
    for (int k = 0; k < 4; ++k) r.steps_to_reproduce.push_back(sentence(rng, 7));
    r.expected_result = sentence(rng, 12);
    r.actual_result = sentence(rng, 12);
    r.additional_information = "Firefox 120 on Windows 11. " + sentence(rng, 8);
  }
  return out;
}

std::vector<TextPair> make_pairs(std::size_t n) {
  std::mt19937_64 rng(2);
  std::vector<TextPair> out(n);
  for (auto& p : out) p = {sentence(rng, 60), sentence(rng, 60)};
  return out;
}

void BM_ScoreSerial(benchmark::State& state) {
  const CtqrsEngine engine;
  const auto reports = make_reports(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(score_batch_serial(engine, reports));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ScoreOpenMP(benchmark::State& state) {
  const CtqrsEngine engine;
  const auto reports = make_reports(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(score_batch(engine, reports));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_MetricsSerial(benchmark::State& state) {
  const auto pairs = make_pairs(static_cast<std::size_t>(state.range(0)));
  HashedBagProvider hashed;
  for (auto _ : state) benchmark::DoNotOptimize(metrics_batch_serial(pairs, &hashed));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_MetricsOpenMP(benchmark::State& state) {
  const auto pairs = make_pairs(static_cast<std::size_t>(state.range(0)));
  HashedBagProvider hashed;
  for (auto _ : state) benchmark::DoNotOptimize(metrics_batch(pairs, &hashed));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_ScoreSerial)->Arg(256)->Arg(4096)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ScoreOpenMP)->Arg(256)->Arg(4096)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MetricsSerial)->Arg(256)->Arg(2048)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MetricsOpenMP)->Arg(256)->Arg(2048)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
