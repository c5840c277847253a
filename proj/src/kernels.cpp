#include "reportsmith/kernels.hpp"

#include <omp.h>

#include <exception>

namespace reportsmith {

namespace {

int resolve_threads(int threads) { return threads > 0 ? threads : omp_get_max_threads(); }

}  // namespace

std::vector<CtqrsBreakdown> score_batch_serial(const CtqrsEngine& engine, const std::vector<StructuredReport>& reports) {
  std::vector<CtqrsBreakdown> out;
  out.reserve(reports.size());
  for (const auto& r : reports) out.push_back(engine.score(r));
  return out;
}

std::vector<CtqrsBreakdown> score_batch(const CtqrsEngine& engine, const std::vector<StructuredReport>& reports,
                                        int threads) {
  std::vector<CtqrsBreakdown> out(reports.size());
  const long n = static_cast<long>(reports.size());
#pragma omp parallel for schedule(dynamic, 16) num_threads(resolve_threads(threads))
  for (long i = 0; i < n; ++i) out[i] = engine.score(reports[i]);
  return out;
}

std::vector<MetricReport> metrics_batch_serial(const std::vector<TextPair>& pairs, const EmbeddingProvider* provider) {
  std::vector<MetricReport> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(compute_metrics(p.candidate, p.reference, provider));
  return out;
}

std::vector<MetricReport> metrics_batch(const std::vector<TextPair>& pairs, const EmbeddingProvider* provider,
                                        int threads) {
  std::vector<MetricReport> out(pairs.size());
  std::vector<std::exception_ptr> errors(pairs.size());
  const long n = static_cast<long>(pairs.size());
#pragma omp parallel for schedule(dynamic, 8) num_threads(resolve_threads(threads))
  for (long i = 0; i < n; ++i) {
    try {
      out[i] = compute_metrics(pairs[i].candidate, pairs[i].reference, provider);
    } catch (...) {
      errors[i] = std::current_exception();  // a remote provider may throw
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace reportsmith
