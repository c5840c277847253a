#pragma once

// Batch scoring kernels. Each parallel kernel has a serial twin that the tests
// and the benchmark compare it against.

#include <string>
#include <vector>

#include "reportsmith/ctqrs.hpp"
#include "reportsmith/metrics.hpp"
#include "reportsmith/report.hpp"

namespace reportsmith {

std::vector<CtqrsBreakdown> score_batch_serial(const CtqrsEngine& engine, const std::vector<StructuredReport>& reports);
/// threads <= 0 uses the OpenMP default.
std::vector<CtqrsBreakdown> score_batch(const CtqrsEngine& engine, const std::vector<StructuredReport>& reports,
                                        int threads = 0);

struct TextPair {
  std::string candidate;
  std::string reference;
};

std::vector<MetricReport> metrics_batch_serial(const std::vector<TextPair>& pairs,
                                               const EmbeddingProvider* provider = nullptr);
std::vector<MetricReport> metrics_batch(const std::vector<TextPair>& pairs, const EmbeddingProvider* provider = nullptr,
                                        int threads = 0);

}  // namespace reportsmith
