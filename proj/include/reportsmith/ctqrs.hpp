#pragma once

// Rule-based bug report quality score: 13 rules, 17 points, grouped into
// morphological, relational and analytical indicators.

#include <array>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "reportsmith/report.hpp"

namespace reportsmith {

inline constexpr std::string_view kRuleTableVersion = "rule_table_v1";
inline constexpr int kCtqrsMaxTotal = 17;

enum class RuleId { M1, M2, M3, M4, RL1, RL2, RL3, RL4, RL5, A1, A2, A3, A4 };

inline constexpr std::array<RuleId, 13> kAllRules = {
    RuleId::M1,  RuleId::M2,  RuleId::M3,  RuleId::M4, RuleId::RL1, RuleId::RL2, RuleId::RL3,
    RuleId::RL4, RuleId::RL5, RuleId::A1,  RuleId::A2, RuleId::A3,  RuleId::A4};

enum class RuleCategory { morphological, relational, analytical };
enum class QualityProperty { understandability, conciseness, completeness, atomicity, reproducibility };

std::string_view rule_name(RuleId id);
RuleCategory rule_category(RuleId id);
QualityProperty rule_property(RuleId id);
int rule_max_points(RuleId id);

struct RuleResult {
  RuleId rule;
  int points_awarded = 0;
  int points_max = 1;
  std::string evidence;

  bool operator==(const RuleResult&) const = default;
};

struct CtqrsBreakdown {
  std::vector<RuleResult> results;
  int total = 0;
  int max_total = kCtqrsMaxTotal;

  bool operator==(const CtqrsBreakdown&) const = default;
};

/// One lowercase term per entry. Matching is per token and accepts the plain
/// form plus regular inflections (-s, -es, -ed, -ing, -ure).
class Lexicon {
 public:
  Lexicon() = default;
  explicit Lexicon(std::vector<std::string> terms);

  /// Plain-text UTF-8, one term per line, '#' starts a comment.
  static Lexicon load(const std::filesystem::path& path);
  static Lexicon parse(std::string_view text);

  bool matches(std::string_view token) const;
  bool contains(std::string_view term) const { return terms_.count(std::string(term)) > 0; }
  const std::set<std::string, std::less<>>& terms() const { return terms_; }

 private:
  std::set<std::string, std::less<>> terms_;
};

struct Lexicons {
  Lexicon action_verbs;
  Lexicon ui_nouns;
  Lexicon artifact_nouns;
  Lexicon defect_terms;

  static const Lexicons& builtin();
  /// Reads action_verbs.txt, ui_nouns.txt, artifact_nouns.txt and
  /// defect_terms.txt from `dir`.
  static Lexicons load_dir(const std::filesystem::path& dir);
};

class CtqrsEngine {
 public:
  explicit CtqrsEngine(Lexicons lexicons = Lexicons::builtin()) : lex_(std::move(lexicons)) {}

  CtqrsBreakdown score(const StructuredReport& report) const;
  const Lexicons& lexicons() const { return lex_; }

 private:
  Lexicons lex_;
};

/// Scores with the built-in lexicons.
CtqrsBreakdown score(const StructuredReport& report);

/// total / max_total, in [0,1].
double score_percent(const CtqrsBreakdown& breakdown);

std::string breakdown_to_json(const CtqrsBreakdown& breakdown);
CtqrsBreakdown breakdown_from_json(std::string_view text);

/// Distinct environment patterns (version, build, os, user_agent,
/// screenshot) found in `text`.
std::set<std::string> environment_patterns(std::string_view text);

}  // namespace reportsmith
