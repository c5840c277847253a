#pragma once

// Bug-report document model: section parsing, artifact detection,
// template rendering and the structured-report JSON schema.

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace reportsmith {

enum class SectionKind {
  title,
  steps_to_reproduce,
  expected_result,
  actual_result,
  additional_information,
};

// The four flaggable body sections, in template order.
inline constexpr std::array<SectionKind, 4> kBodySections = {
    SectionKind::steps_to_reproduce, SectionKind::expected_result,
    SectionKind::actual_result, SectionKind::additional_information};

std::string_view section_name(SectionKind kind);
std::optional<SectionKind> section_from_name(std::string_view name);

struct StructuredReport {
  std::string title;
  std::vector<std::string> steps_to_reproduce;
  std::string expected_result;
  std::string actual_result;
  std::string additional_information;
  std::set<SectionKind> missing_fields;

  bool section_empty(SectionKind kind) const;
  // Section as plain text; steps are joined with '\n'.
  std::string section_text(SectionKind kind) const;
  void clear_section(SectionKind kind);

  bool operator==(const StructuredReport&) const = default;
};

struct RawReport {
  std::string body;
  std::optional<std::string> source_id;
  std::map<std::string, std::string> source_meta;
};

enum class ArtifactKind { stack_trace, code_snippet };

struct ArtifactSpan {
  ArtifactKind kind;
  std::size_t start;
  std::size_t end;

  bool operator==(const ArtifactSpan&) const = default;
};

std::string_view artifact_kind_name(ArtifactKind kind);

/// Header alias table used by parse_sections. Aliases are lowercase and are
/// matched against the start of a trimmed line, optionally followed by a
/// parenthetical such as "(S2R)", and then either ':' or end of line.
struct HeaderAliases {
  std::vector<std::pair<std::string, SectionKind>> entries;

  static const HeaderAliases& builtin();
};

/// Splits a report body into template sections. Total: text without any
/// recognised header leaves every body section empty and flagged.
StructuredReport parse_sections(std::string_view body,
                                const HeaderAliases& aliases = HeaderAliases::builtin());

/// True when the line is a bare section header with no inline content.
bool is_header_line(std::string_view line, const HeaderAliases& aliases = HeaderAliases::builtin());

/// Stack-trace runs (>= 3 consecutive frame lines), fenced code blocks and
/// dense indented code blocks. Spans are sorted and never overlap.
std::vector<ArtifactSpan> detect_artifacts(std::string_view body);

inline constexpr std::string_view kMissingMarker = "<MISSING>";

std::string render_report(const StructuredReport& report);

/// Splits a steps block: lines opening with "1.", "2)", "-", "*" or a bullet
/// start a new step, other lines continue the previous one.
std::vector<std::string> split_step_lines(std::string_view text);

std::string report_to_json(const StructuredReport& report);
StructuredReport json_to_report(std::string_view text);

/// Trims lines, drops blank ones and flags every empty body section, which is
/// the form parse_sections produces.
StructuredReport normalize_report(StructuredReport report);

namespace detail {
std::string trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);
std::vector<std::string_view> split_lines(std::string_view s);
}  // namespace detail

}  // namespace reportsmith
