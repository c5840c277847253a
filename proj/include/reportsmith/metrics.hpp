#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace reportsmith {

using TokenSequence = std::vector<std::string>;

/// Lowercases (ASCII, Latin-1, Greek, Cyrillic) and splits on every
/// non-alphanumeric code point.
TokenSequence tokenize(std::string_view text);

/// Sentences end at '.', '!' or '?' followed by whitespace or end of text, and
/// at line breaks. A leading enumerator such as "1." does not end a sentence.
std::vector<std::string> split_sentences(std::string_view text);

/// Byte ranges [first, second) of the sentences split_sentences would return,
/// untrimmed, relative to `line` which must not contain '\n'.
std::vector<std::pair<std::size_t, std::size_t>> sentence_spans(std::string_view line);

struct Rouge1 {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

Rouge1 rouge1(const TokenSequence& candidate, const TokenSequence& reference);

/// Porter (1980) suffix stripper.
std::string porter_stem(std::string_view word);

struct MeteorDetail {
  std::size_t matches = 0;
  std::size_t chunks = 0;
  double precision = 0;
  double recall = 0;
  double fmean = 0;
  double penalty = 0;
  double score = 0;
};

MeteorDetail meteor_detail(const TokenSequence& candidate, const TokenSequence& reference);
double meteor(const TokenSequence& candidate, const TokenSequence& reference);

double cosine_tf(const TokenSequence& candidate, const TokenSequence& reference);

double cosine(const std::vector<double>& a, const std::vector<double>& b);

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  /// Throws Error(ProviderUnavailable) when the backing service cannot answer.
  virtual std::vector<double> embed(std::string_view text) const = 0;
  virtual std::string name() const = 0;
};

/// Deterministic offline provider: FNV-1a feature-hashed term frequencies over
/// `kDimensions` buckets, L2-normalised.
class HashedBagProvider final : public EmbeddingProvider {
 public:
  static constexpr std::size_t kDimensions = 256;
  std::vector<double> embed(std::string_view text) const override;
  std::string name() const override { return "hashed-bag-256"; }
  static std::size_t bucket(std::string_view token);
};

/// Tries `primary` first and falls back when it reports ProviderUnavailable.
class FallbackProvider final : public EmbeddingProvider {
 public:
  FallbackProvider(std::shared_ptr<const EmbeddingProvider> primary,
                   std::shared_ptr<const EmbeddingProvider> fallback)
      : primary_(std::move(primary)), fallback_(std::move(fallback)) {}
  std::vector<double> embed(std::string_view text) const override;
  std::string name() const override;

 private:
  std::shared_ptr<const EmbeddingProvider> primary_;
  std::shared_ptr<const EmbeddingProvider> fallback_;
};

double embedding_similarity(const EmbeddingProvider& provider, std::string_view a,
                            std::string_view b);

struct MetricReport {
  Rouge1 rouge;
  double meteor = 0;
  double cosine_tf = 0;
  std::optional<double> embedding_similarity;

  bool operator==(const MetricReport&) const = default;
};

inline bool operator==(const Rouge1& a, const Rouge1& b) {
  return a.precision == b.precision && a.recall == b.recall && a.f1 == b.f1;
}

/// All text metrics for a candidate/reference pair. The embedding similarity
/// is only computed when a provider is given.
MetricReport compute_metrics(std::string_view candidate, std::string_view reference,
                             const EmbeddingProvider* provider = nullptr);

std::string metric_report_to_json(const MetricReport& report);

}  // namespace reportsmith
