#include "reportsmith/report.hpp"

#include <algorithm>
#include <cctype>
#include <deque>

#include "json.hpp"
#include "reportsmith/error.hpp"

namespace reportsmith {

namespace detail {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string_view> split_lines(std::string_view s) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t nl = s.find('\n', pos);
    if (nl == std::string_view::npos) nl = s.size();
    std::string_view line = s.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (nl == s.size()) break;
    pos = nl + 1;
  }
  return lines;
}

}  // namespace detail

using detail::split_lines;
using detail::to_lower_ascii;
using detail::trim;

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedDocument: return "MalformedDocument";
    case ErrorCode::MalformedGeneration: return "MalformedGeneration";
    case ErrorCode::ProviderUnavailable: return "ProviderUnavailable";
    case ErrorCode::AuthFailed: return "AuthFailed";
    case ErrorCode::TimedOut: return "TimedOut";
    case ErrorCode::PartialFetch: return "PartialFetch";
    case ErrorCode::RetentionFailed: return "RetentionFailed";
    case ErrorCode::NothingToMask: return "NothingToMask";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

std::string_view section_name(SectionKind kind) {
  switch (kind) {
    case SectionKind::title: return "title";
    case SectionKind::steps_to_reproduce: return "steps_to_reproduce";
    case SectionKind::expected_result: return "expected_result";
    case SectionKind::actual_result: return "actual_result";
    case SectionKind::additional_information: return "additional_information";
  }
  return "";
}

std::optional<SectionKind> section_from_name(std::string_view name) {
  for (auto k : {SectionKind::title, SectionKind::steps_to_reproduce,
                 SectionKind::expected_result, SectionKind::actual_result,
                 SectionKind::additional_information}) {
    if (section_name(k) == name) return k;
  }
  return std::nullopt;
}

std::string_view artifact_kind_name(ArtifactKind kind) {
  return kind == ArtifactKind::stack_trace ? "stack_trace" : "code_snippet";
}

bool StructuredReport::section_empty(SectionKind kind) const {
  switch (kind) {
    case SectionKind::title: return title.empty();
    case SectionKind::steps_to_reproduce: return steps_to_reproduce.empty();
    case SectionKind::expected_result: return expected_result.empty();
    case SectionKind::actual_result: return actual_result.empty();
    case SectionKind::additional_information: return additional_information.empty();
  }
  return true;
}

std::string StructuredReport::section_text(SectionKind kind) const {
  switch (kind) {
    case SectionKind::title: return title;
    case SectionKind::steps_to_reproduce: {
      std::string out;
      for (std::size_t i = 0; i < steps_to_reproduce.size(); ++i) {
        if (i) out += '\n';
        out += steps_to_reproduce[i];
      }
      return out;
    }
    case SectionKind::expected_result: return expected_result;
    case SectionKind::actual_result: return actual_result;
    case SectionKind::additional_information: return additional_information;
  }
  return {};
}

void StructuredReport::clear_section(SectionKind kind) {
  switch (kind) {
    case SectionKind::title: title.clear(); break;
    case SectionKind::steps_to_reproduce: steps_to_reproduce.clear(); break;
    case SectionKind::expected_result: expected_result.clear(); break;
    case SectionKind::actual_result: actual_result.clear(); break;
    case SectionKind::additional_information: additional_information.clear(); break;
  }
}

const HeaderAliases& HeaderAliases::builtin() {
  static const HeaderAliases table = [] {
    HeaderAliases t;
    using K = SectionKind;
    t.entries = {
        {"steps to reproduce", K::steps_to_reproduce},
        {"reproduction steps", K::steps_to_reproduce},
        {"str", K::steps_to_reproduce},
        {"steps", K::steps_to_reproduce},
        {"expected results", K::expected_result},
        {"expected result", K::expected_result},
        {"expected behavior", K::expected_result},
        {"expected behaviour", K::expected_result},
        {"expected", K::expected_result},
        {"actual results", K::actual_result},
        {"actual result", K::actual_result},
        {"actual behavior", K::actual_result},
        {"actual behaviour", K::actual_result},
        {"observed behavior", K::actual_result},
        {"observed behaviour", K::actual_result},
        {"actual", K::actual_result},
        {"additional information", K::additional_information},
        {"additional info", K::additional_information},
        {"environment", K::additional_information},
    };
    // Longest alias first so "expected results" wins over "expected".
    std::stable_sort(t.entries.begin(), t.entries.end(), [](const auto& a, const auto& b) {
      return a.first.size() > b.first.size();
    });
    return t;
  }();
  return table;
}

namespace {

bool is_markup(char c) { return c == '#' || c == '*' || c == '_' || c == '>'; }

std::string_view strip_markup(std::string_view s) {
  while (!s.empty() && (is_markup(s.front()) || std::isspace(static_cast<unsigned char>(s.front()))))
    s.remove_prefix(1);
  return s;
}

// If `rest` (the text following an alias) closes a header, returns the inline
// content after the colon.
std::optional<std::string> header_tail(std::string_view rest, bool colon_required) {
  auto skip_ws_markup = [](std::string_view& v) {
    while (!v.empty() && (v.front() == '*' || v.front() == '_' ||
                          std::isspace(static_cast<unsigned char>(v.front()))))
      v.remove_prefix(1);
  };
  skip_ws_markup(rest);
  if (!rest.empty() && rest.front() == '(') {
    auto close = rest.find(')');
    if (close == std::string_view::npos) return std::nullopt;
    rest.remove_prefix(close + 1);
    skip_ws_markup(rest);
  }
  if (rest.empty()) {
    if (colon_required) return std::nullopt;
    return std::string();
  }
  if (rest.front() != ':') return std::nullopt;
  rest.remove_prefix(1);
  skip_ws_markup(rest);
  return trim(rest);
}

struct HeaderMatch {
  bool is_title = false;
  SectionKind kind = SectionKind::title;
  std::string inline_text;
};

std::optional<HeaderMatch> match_header(std::string_view line, const HeaderAliases& aliases) {
  std::string_view stripped = strip_markup(line);
  if (stripped.empty()) return std::nullopt;
  // Header lines are short; avoid lowercasing whole paragraphs.
  std::string lower = to_lower_ascii(stripped.substr(0, std::min<std::size_t>(stripped.size(), 64)));
  if (lower.rfind("title", 0) == 0) {
    if (auto tail = header_tail(stripped.substr(5), true)) {
      return HeaderMatch{true, SectionKind::title, *tail};
    }
  }
  for (const auto& [alias, kind] : aliases.entries) {
    if (lower.rfind(alias, 0) != 0) continue;
    if (auto tail = header_tail(stripped.substr(alias.size()), false)) {
      return HeaderMatch{false, kind, *tail};
    }
  }
  return std::nullopt;
}

// Returns the length of a step prefix ("1. ", "2) ", "- ", "* ", "• ") or 0.
std::size_t step_prefix_length(std::string_view line) {
  std::size_t i = 0;
  while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
  std::size_t start = i;
  if (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) {
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    if (i >= line.size() || (line[i] != '.' && line[i] != ')')) return 0;
    ++i;
  } else if (i < line.size() && (line[i] == '-' || line[i] == '*')) {
    ++i;
  } else if (line.substr(i).rfind("\xE2\x80\xA2", 0) == 0) {  // U+2022 bullet
    i += 3;
  } else {
    return 0;
  }
  if (i == start) return 0;
  std::size_t ws = i;
  while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
  if (i == ws || i == line.size()) return 0;
  return i;
}

std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

std::string join_section_lines(const std::vector<std::string_view>& lines) {
  std::string out;
  for (auto raw : lines) {
    std::string line = trim(raw);
    if (line.empty() || line == kMissingMarker) continue;
    if (!out.empty()) out += '\n';
    out += line;
  }
  return out;
}

std::vector<std::string> split_steps(const std::vector<std::string_view>& lines) {
  std::vector<std::string> steps;
  for (auto raw : lines) {
    std::string line = trim(raw);
    if (line.empty() || line == kMissingMarker) continue;
    if (std::size_t p = step_prefix_length(line)) {
      steps.push_back(trim(std::string_view(line).substr(p)));
    } else if (steps.empty()) {
      steps.push_back(line);
    } else {
      steps.back() += ' ';
      steps.back() += line;
    }
  }
  return steps;
}

}  // namespace

bool is_header_line(std::string_view line, const HeaderAliases& aliases) {
  auto m = match_header(line, aliases);
  return m && trim(m->inline_text).empty();
}

StructuredReport parse_sections(std::string_view body, const HeaderAliases& aliases) {
  enum class Target { preamble, section, unassigned };
  StructuredReport report;
  std::map<SectionKind, std::vector<std::string_view>> blocks;
  std::vector<std::string_view> preamble;
  std::deque<std::string> inline_store;  // owns inline header content
  bool title_found = false;
  Target target = Target::preamble;
  SectionKind current = SectionKind::title;

  for (std::string_view line : split_lines(body)) {
    auto header = match_header(line, aliases);
    if (header && header->is_title && !title_found) {
      title_found = true;
      report.title = header->inline_text;
      target = Target::unassigned;
      continue;
    }
    if (header && !header->is_title && !blocks.count(header->kind)) {
      current = header->kind;
      target = Target::section;
      auto& block = blocks[current];
      if (!header->inline_text.empty()) {
        inline_store.push_back(header->inline_text);
        block.push_back(inline_store.back());
      }
      continue;
    }
    switch (target) {
      case Target::preamble: preamble.push_back(line); break;
      case Target::section: blocks[current].push_back(line); break;
      case Target::unassigned: break;
    }
  }

  if (!title_found && !blocks.empty()) {
    for (auto line : preamble) {
      std::string t = trim(line);
      if (t.empty()) continue;
      if (utf8_length(t) <= 120) report.title = t;
      break;
    }
  }

  for (auto kind : kBodySections) {
    auto it = blocks.find(kind);
    if (it == blocks.end()) continue;
    if (kind == SectionKind::steps_to_reproduce) {
      report.steps_to_reproduce = split_steps(it->second);
    } else {
      std::string text = join_section_lines(it->second);
      if (kind == SectionKind::expected_result) report.expected_result = std::move(text);
      if (kind == SectionKind::actual_result) report.actual_result = std::move(text);
      if (kind == SectionKind::additional_information)
        report.additional_information = std::move(text);
    }
  }
  for (auto kind : kBodySections) {
    if (report.section_empty(kind)) report.missing_fields.insert(kind);
  }
  return report;
}

namespace {

bool is_ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$' || c == '.' ||
         c == '<' || c == '>' || c == '/' || c == '-';
}

// "at org.foo.Bar.baz(Bar.java:10)" or "#3 0x00007f..."
bool is_frame_line(std::string_view line) {
  std::size_t i = 0;
  while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
  std::string_view s = line.substr(i);
  if (s.rfind("at ", 0) == 0) {
    std::size_t j = 3;
    while (j < s.size() && s[j] == ' ') ++j;
    std::size_t ident_start = j;
    while (j < s.size() && is_ident_char(s[j])) ++j;
    if (j == ident_start || j >= s.size() || s[j] != '(') return false;
    return s.find(')', j) != std::string_view::npos;
  }
  if (!s.empty() && s[0] == '#') {
    std::size_t j = 1;
    std::size_t digits = j;
    while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
    if (j == digits) return false;
    if (j >= s.size() || !std::isspace(static_cast<unsigned char>(s[j]))) return false;
    while (j < s.size() && std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (s.substr(j, 2) != "0x") return false;
    j += 2;
    return j < s.size() && std::isxdigit(static_cast<unsigned char>(s[j]));
  }
  return false;
}

bool is_indented(std::string_view line) {
  if (!line.empty() && line[0] == '\t') return true;
  std::size_t n = 0;
  while (n < line.size() && line[n] == ' ') ++n;
  return n >= 4 && n < line.size();
}

int code_punctuation(std::string_view line) {
  int n = 0;
  for (char c : line) {
    if (c == ';' || c == '{' || c == '}' || c == '=' || c == '(') ++n;
  }
  return n;
}

struct LineInfo {
  std::string_view text;
  std::size_t start;
  std::size_t end;  // exclusive, before the newline
  bool used = false;
};

}  // namespace

std::vector<ArtifactSpan> detect_artifacts(std::string_view body) {
  std::vector<LineInfo> lines;
  {
    std::size_t pos = 0;
    while (pos < body.size()) {
      std::size_t nl = body.find('\n', pos);
      if (nl == std::string_view::npos) nl = body.size();
      std::size_t end = nl;
      if (end > pos && body[end - 1] == '\r') --end;
      lines.push_back({body.substr(pos, end - pos), pos, end});
      pos = nl + 1;
    }
  }
  std::vector<ArtifactSpan> spans;
  auto emit = [&](ArtifactKind kind, std::size_t first, std::size_t last) {
    std::size_t start = lines[first].start;
    std::size_t end = lines[last].end;
    if (end <= start) end = std::min(body.size(), start + 1);
    if (end > start) spans.push_back({kind, start, end});
    for (std::size_t i = first; i <= last; ++i) lines[i].used = true;
  };

  // Fenced blocks; an unclosed fence runs to the end of the body.
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i].text).rfind("```", 0) != 0) continue;
    std::size_t j = i + 1;
    while (j < lines.size() && trim(lines[j].text).rfind("```", 0) != 0) ++j;
    std::size_t last = std::min(j, lines.size() - 1);
    emit(ArtifactKind::code_snippet, i, last);
    i = last;
  }

  auto runs = [&](auto predicate, std::size_t min_len, auto on_run) {
    std::size_t i = 0;
    while (i < lines.size()) {
      if (lines[i].used || !predicate(lines[i].text)) {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j + 1 < lines.size() && !lines[j + 1].used && predicate(lines[j + 1].text)) ++j;
      if (j - i + 1 >= min_len) on_run(i, j);
      i = j + 1;
    }
  };

  runs(is_frame_line, 3, [&](std::size_t a, std::size_t b) { emit(ArtifactKind::stack_trace, a, b); });
  runs(is_indented, 3, [&](std::size_t a, std::size_t b) {
    int punct = 0;
    for (std::size_t k = a; k <= b; ++k) punct += code_punctuation(lines[k].text);
    if (static_cast<double>(punct) / static_cast<double>(b - a + 1) >= 2.0)
      emit(ArtifactKind::code_snippet, a, b);
  });

  std::sort(spans.begin(), spans.end(),
            [](const ArtifactSpan& x, const ArtifactSpan& y) { return x.start < y.start; });
  return spans;
}

std::vector<std::string> split_step_lines(std::string_view text) {
  return split_steps(split_lines(text));
}

std::string render_report(const StructuredReport& report) {
  std::string out;
  auto body = [&](SectionKind kind, const std::string& text) {
    if (report.missing_fields.count(kind)) {
      out += kMissingMarker;
      out += '\n';
    } else if (!text.empty()) {
      out += text;
      out += '\n';
    }
  };
  out += "Title: " + report.title + "\n";
  out += "Steps to Reproduce:\n";
  if (report.missing_fields.count(SectionKind::steps_to_reproduce)) {
    out += kMissingMarker;
    out += '\n';
  } else {
    for (std::size_t i = 0; i < report.steps_to_reproduce.size(); ++i) {
      out += std::to_string(i + 1) + ". " + report.steps_to_reproduce[i] + "\n";
    }
  }
  out += "Expected Results:\n";
  body(SectionKind::expected_result, report.expected_result);
  out += "Actual Results:\n";
  body(SectionKind::actual_result, report.actual_result);
  out += "Additional Information:\n";
  body(SectionKind::additional_information, report.additional_information);
  return out;
}

StructuredReport normalize_report(StructuredReport report) {
  auto norm_block = [](const std::string& text) { return join_section_lines(split_lines(text)); };
  auto collapse = [](const std::string& text) {
    std::string out;
    for (auto line : split_lines(text)) {
      std::string t = trim(line);
      if (t.empty()) continue;
      if (!out.empty()) out += ' ';
      out += t;
    }
    return out;
  };
  report.title = collapse(report.title);
  std::vector<std::string> steps;
  for (const auto& s : report.steps_to_reproduce) {
    std::string t = collapse(s);
    if (!t.empty() && t != kMissingMarker) steps.push_back(std::move(t));
  }
  report.steps_to_reproduce = std::move(steps);
  report.expected_result = norm_block(report.expected_result);
  report.actual_result = norm_block(report.actual_result);
  report.additional_information = norm_block(report.additional_information);
  report.missing_fields.erase(SectionKind::title);
  for (auto kind : kBodySections) {
    if (report.missing_fields.count(kind)) report.clear_section(kind);
    if (report.section_empty(kind)) report.missing_fields.insert(kind);
  }
  return report;
}

std::string report_to_json(const StructuredReport& report) {
  nlohmann::ordered_json j;
  j["title"] = report.title;
  j["steps_to_reproduce"] = report.steps_to_reproduce;
  j["expected_result"] = report.expected_result;
  j["actual_result"] = report.actual_result;
  j["additional_information"] = report.additional_information;
  auto missing = nlohmann::ordered_json::array();
  for (auto kind : kBodySections) {
    if (report.missing_fields.count(kind)) missing.push_back(section_name(kind));
  }
  j["missing_fields"] = std::move(missing);
  return j.dump();
}

StructuredReport json_to_report(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::MalformedDocument, e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::MalformedDocument, "expected a JSON object");

  StructuredReport r;
  auto get_string = [&](const char* key, std::string& out) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return;
    if (!it->is_string())
      throw Error(ErrorCode::MalformedDocument, std::string(key) + " must be a string");
    out = it->get<std::string>();
  };
  get_string("title", r.title);
  get_string("expected_result", r.expected_result);
  get_string("actual_result", r.actual_result);
  get_string("additional_information", r.additional_information);
  if (auto it = j.find("steps_to_reproduce"); it != j.end() && !it->is_null()) {
    if (!it->is_array())
      throw Error(ErrorCode::MalformedDocument, "steps_to_reproduce must be an array");
    for (const auto& step : *it) {
      if (!step.is_string())
        throw Error(ErrorCode::MalformedDocument, "steps_to_reproduce entries must be strings");
      r.steps_to_reproduce.push_back(step.get<std::string>());
    }
  }
  if (auto it = j.find("missing_fields"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw Error(ErrorCode::MalformedDocument, "missing_fields must be an array");
    for (const auto& name : *it) {
      if (!name.is_string())
        throw Error(ErrorCode::MalformedDocument, "missing_fields entries must be strings");
      auto kind = section_from_name(name.get<std::string>());
      if (!kind) throw Error(ErrorCode::MalformedDocument, "unknown section " + name.dump());
      if (*kind != SectionKind::title) r.missing_fields.insert(*kind);
    }
  }
  for (auto kind : r.missing_fields) r.clear_section(kind);
  return r;
}

}  // namespace reportsmith
