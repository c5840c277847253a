#include "reportsmith/ctqrs.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <sstream>

#include "json.hpp"
#include "reportsmith/error.hpp"
#include "reportsmith/metrics.hpp"

namespace reportsmith {

std::string_view rule_name(RuleId id) {
  switch (id) {
    case RuleId::M1: return "M1";
    case RuleId::M2: return "M2";
    case RuleId::M3: return "M3";
    case RuleId::M4: return "M4";
    case RuleId::RL1: return "RL1";
    case RuleId::RL2: return "RL2";
    case RuleId::RL3: return "RL3";
    case RuleId::RL4: return "RL4";
    case RuleId::RL5: return "RL5";
    case RuleId::A1: return "A1";
    case RuleId::A2: return "A2";
    case RuleId::A3: return "A3";
    case RuleId::A4: return "A4";
  }
  return "";
}

RuleCategory rule_category(RuleId id) {
  switch (id) {
    case RuleId::M1: case RuleId::M2: case RuleId::M3: case RuleId::M4:
      return RuleCategory::morphological;
    case RuleId::RL1: case RuleId::RL2: case RuleId::RL3: case RuleId::RL4: case RuleId::RL5:
      return RuleCategory::relational;
    default:
      return RuleCategory::analytical;
  }
}

QualityProperty rule_property(RuleId id) {
  switch (id) {
    case RuleId::M1: case RuleId::M4: return QualityProperty::conciseness;
    case RuleId::M2: case RuleId::M3: return QualityProperty::understandability;
    case RuleId::RL2: return QualityProperty::atomicity;
    case RuleId::RL1: case RuleId::RL3: case RuleId::RL4: case RuleId::RL5:
      return QualityProperty::completeness;
    default: return QualityProperty::reproducibility;
  }
}

int rule_max_points(RuleId id) {
  switch (id) {
    case RuleId::RL1: case RuleId::RL5: case RuleId::A1: case RuleId::A3: return 2;
    default: return 1;
  }
}

Lexicon::Lexicon(std::vector<std::string> terms) {
  for (auto& t : terms) terms_.insert(detail::to_lower_ascii(t));
}

Lexicon Lexicon::parse(std::string_view text) {
  std::vector<std::string> terms;
  for (auto line : detail::split_lines(text)) {
    auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    std::string term = detail::trim(line);
    if (!term.empty()) terms.push_back(std::move(term));
  }
  return Lexicon(std::move(terms));
}

Lexicon Lexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read lexicon " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

bool Lexicon::matches(std::string_view token) const {
  if (terms_.find(token) != terms_.end()) return true;
  static constexpr std::string_view kSuffixes[] = {"s", "es", "d", "ed", "ing", "ure", "ures"};
  for (auto suffix : kSuffixes) {
    if (token.size() > suffix.size() && token.substr(token.size() - suffix.size()) == suffix &&
        terms_.find(token.substr(0, token.size() - suffix.size())) != terms_.end())
      return true;
  }
  return false;
}

const Lexicons& Lexicons::builtin() {
  // Kept identical to data/lexicons/*.txt (checked by the lexicon tests).
  static const Lexicons lex = [] {
    Lexicons l;
    l.action_verbs = Lexicon({
        "add",     "attempt", "change",   "check",    "choose",  "clear",   "click",  "close",
        "collapse", "copy",   "create",   "delete",   "disable", "double",  "download", "drag",
        "drop",    "edit",    "enable",   "enter",    "expand",  "fill",    "find",   "go",
        "hover",   "install", "launch",   "load",     "log",     "login",   "move",   "navigate",
        "open",    "paste",   "pause",    "play",     "press",   "print",   "refresh", "reload",
        "remove",  "rename",  "resize",   "restart",  "right",   "run",     "save",   "scroll",
        "search",  "select",  "send",     "set",      "sign",    "start",   "stop",   "submit",
        "switch",  "tap",     "toggle",   "try",      "turn",    "type",    "uncheck", "update",
        "upload",  "use",     "visit",    "wait",     "zoom",
    });
    l.ui_nouns = Lexicon({
        "address",  "bar",      "button",  "checkbox", "dialog",    "dropdown", "editor",
        "field",    "form",     "header",  "icon",     "input",     "label",    "link",
        "list",     "menu",     "modal",   "option",   "page",      "panel",    "popup",
        "preferences", "screen", "scrollbar", "settings", "sidebar", "slider",  "tab",
        "textbox",  "toolbar",  "url",     "view",     "webpage",   "website",  "window",
    });
    l.artifact_nouns = Lexicon({
        "attachment", "data", "document", "download", "email", "file", "image", "log",
        "message",    "output", "pdf",    "preview",  "report", "text", "video",
    });
    l.defect_terms = Lexicon({
        "fail", "crash", "error", "incorrect", "not", "broken", "wrong", "unexpected",
        // contraction stems left by the tokenizer ("doesn't" -> "doesn", "t")
        "doesn", "didn", "isn", "wasn", "won", "cannot",
    });
    return l;
  }();
  return lex;
}

Lexicons Lexicons::load_dir(const std::filesystem::path& dir) {
  Lexicons l;
  l.action_verbs = Lexicon::load(dir / "action_verbs.txt");
  l.ui_nouns = Lexicon::load(dir / "ui_nouns.txt");
  l.artifact_nouns = Lexicon::load(dir / "artifact_nouns.txt");
  l.defect_terms = Lexicon::load(dir / "defect_terms.txt");
  return l;
}

std::set<std::string> environment_patterns(std::string_view text) {
  static const std::vector<std::pair<std::string, std::regex>> kPatterns = [] {
    auto flags = std::regex::ECMAScript | std::regex::optimize;
    return std::vector<std::pair<std::string, std::regex>>{
        {"version", std::regex(R"(\bversion\b|\bv?\d+\.\d+\.\d+|\brv:\d)", flags)},
        {"build", std::regex(R"(\bbuild\s*(id|number|no\.?)?\s*[:#]?\s*\d{3,})", flags)},
        {"os", std::regex(R"(\b(windows|win(7|8|10|11)|linux|ubuntu|debian|fedora|macos|mac os|os x|osx|android|ios|ipados|chromeos|chrome os|freebsd|os/2|x11)\b)",
                          flags)},
        {"user_agent", std::regex(R"(user[ -]?agent|mozilla/\d)", flags)},
        {"screenshot", std::regex(R"(screen ?shot|attachment|\.(png|jpe?g|gif|bmp|webp)\b)", flags)},
    };
  }();
  std::string lower = detail::to_lower_ascii(text);
  std::set<std::string> found;
  for (const auto& [name, re] : kPatterns) {
    if (std::regex_search(lower, re)) found.insert(name);
  }
  return found;
}

namespace {

bool ends_with_terminal(std::string_view sentence) {
  while (!sentence.empty() && (sentence.back() == '"' || sentence.back() == '\'' ||
                               sentence.back() == ')' || sentence.back() == ']'))
    sentence.remove_suffix(1);
  if (sentence.empty()) return false;
  char c = sentence.back();
  return c == '.' || c == '!' || c == '?';
}

bool has_punctuation_run(std::string_view text) {
  int run = 0;
  char prev = 0;
  for (char c : text) {
    if (std::ispunct(static_cast<unsigned char>(c)) && c == prev) {
      if (++run >= 3) return true;
    } else {
      run = std::ispunct(static_cast<unsigned char>(c)) ? 1 : 0;
    }
    prev = c;
  }
  return false;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::fixed << v;
  return os.str();
}

bool any_match(const Lexicon& lex, const TokenSequence& tokens) {
  return std::any_of(tokens.begin(), tokens.end(), [&](const auto& t) { return lex.matches(t); });
}

}  // namespace

CtqrsBreakdown CtqrsEngine::score(const StructuredReport& report) const {
  CtqrsBreakdown b;
  b.results.reserve(kAllRules.size());
  auto add = [&](RuleId id, int points, std::string evidence) {
    b.results.push_back({id, points, rule_max_points(id), std::move(evidence)});
  };

  const std::string steps_text = report.section_text(SectionKind::steps_to_reproduce);
  const TokenSequence step_tokens = tokenize(steps_text);
  const TokenSequence er_tokens = tokenize(report.expected_result);
  const TokenSequence ar_tokens = tokenize(report.actual_result);

  // Morphological rules. Size counts the narrative sections; sentence-level
  // rules look at the prose result descriptions.
  const std::size_t words = step_tokens.size() + er_tokens.size() + ar_tokens.size();
  add(RuleId::M1, (words >= 10 && words <= 500) ? 1 : 0, "words=" + std::to_string(words));

  std::vector<std::string> sentences = split_sentences(report.expected_result);
  for (auto& s : split_sentences(report.actual_result)) sentences.push_back(std::move(s));
  std::size_t token_sum = 0, longest = 0, terminated = 0;
  for (const auto& s : sentences) {
    std::size_t n = tokenize(s).size();
    token_sum += n;
    longest = std::max(longest, n);
    terminated += ends_with_terminal(s) ? 1 : 0;
  }
  const bool has_prose = !sentences.empty();
  const double mean_len = has_prose ? static_cast<double>(token_sum) / static_cast<double>(sentences.size()) : 0;
  add(RuleId::M2, (has_prose && mean_len <= 30.0) ? 1 : 0,
      "sentences=" + std::to_string(sentences.size()) + " mean_tokens=" + fmt_double(mean_len));

  const double terminated_frac = has_prose ? static_cast<double>(terminated) / static_cast<double>(sentences.size()) : 0;
  const bool punct_run = has_punctuation_run(report.expected_result) ||
                         has_punctuation_run(report.actual_result);
  add(RuleId::M3, (has_prose && terminated_frac >= 0.9 && !punct_run) ? 1 : 0,
      "terminated=" + fmt_double(terminated_frac) + (punct_run ? " punctuation_run" : ""));
  add(RuleId::M4, (has_prose && longest <= 60) ? 1 : 0, "longest_sentence=" + std::to_string(longest));

  // Relational rules.
  const std::size_t n_steps = report.steps_to_reproduce.size();
  add(RuleId::RL1, n_steps > 0 ? 2 : 0, n_steps > 0 ? "steps present" : "steps missing");
  add(RuleId::RL2, n_steps >= 2 ? 1 : 0, "steps=" + std::to_string(n_steps));
  add(RuleId::RL3, report.expected_result.empty() ? 0 : 1,
      report.expected_result.empty() ? "expected result missing" : "expected result present");
  add(RuleId::RL4, report.actual_result.empty() ? 0 : 1,
      report.actual_result.empty() ? "actual result missing" : "actual result present");

  std::string env_text = report.additional_information;
  for (auto kind : {SectionKind::steps_to_reproduce, SectionKind::expected_result, SectionKind::actual_result}) {
    env_text += '\n';
    env_text += report.section_text(kind);
  }
  const auto env = environment_patterns(env_text);
  std::string env_evidence = "patterns=";
  for (const auto& p : env) env_evidence += (env_evidence.back() == '=' ? "" : ",") + p;
  add(RuleId::RL5, env.size() >= 2 ? 2 : (env.empty() ? 0 : 1), env_evidence);

  // Analytical rules.
  std::size_t actionable = 0;
  for (const auto& step : report.steps_to_reproduce) {
    auto toks = tokenize(step);
    if (!toks.empty() && lex_.action_verbs.matches(toks.front())) ++actionable;
  }
  const double action_frac = n_steps ? static_cast<double>(actionable) / static_cast<double>(n_steps) : 0;
  add(RuleId::A1, action_frac >= 0.8 ? 2 : (action_frac >= 0.5 ? 1 : 0),
      "actionable=" + std::to_string(actionable) + "/" + std::to_string(n_steps));

  const bool ui_in_steps = any_match(lex_.ui_nouns, step_tokens);
  add(RuleId::A2, ui_in_steps ? 1 : 0, ui_in_steps ? "interface element named" : "no interface element");

  const bool defect = any_match(lex_.defect_terms, ar_tokens);
  const bool object = any_match(lex_.ui_nouns, ar_tokens) || any_match(lex_.artifact_nouns, ar_tokens);
  add(RuleId::A3, defect ? (object ? 2 : 1) : 0,
      defect ? (object ? "defect term with object" : "defect term") : "no defect term");

  int a4 = 0;
  std::string a4_evidence = "expected/actual missing";
  if (!report.expected_result.empty() && !report.actual_result.empty()) {
    std::set<std::string_view> er(er_tokens.begin(), er_tokens.end());
    std::set<std::string_view> ar(ar_tokens.begin(), ar_tokens.end());
    std::size_t inter = 0;
    for (auto t : er) inter += ar.count(t);
    std::size_t uni = er.size() + ar.size() - inter;
    double jaccard = uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
    a4 = jaccard <= 0.8 ? 1 : 0;
    a4_evidence = "jaccard=" + fmt_double(jaccard);
  }
  add(RuleId::A4, a4, a4_evidence);

  for (const auto& r : b.results) b.total += r.points_awarded;
  return b;
}

CtqrsBreakdown score(const StructuredReport& report) {
  static const CtqrsEngine engine;
  return engine.score(report);
}

double score_percent(const CtqrsBreakdown& breakdown) {
  return static_cast<double>(breakdown.total) / static_cast<double>(breakdown.max_total);
}

std::string breakdown_to_json(const CtqrsBreakdown& breakdown) {
  nlohmann::ordered_json j;
  j["total"] = breakdown.total;
  j["max_total"] = breakdown.max_total;
  j["rule_table"] = kRuleTableVersion;
  auto rules = nlohmann::ordered_json::array();
  for (const auto& r : breakdown.results) {
    nlohmann::ordered_json rj;
    rj["rule"] = rule_name(r.rule);
    rj["points"] = r.points_awarded;
    rj["max"] = r.points_max;
    rj["evidence"] = r.evidence;
    rules.push_back(std::move(rj));
  }
  j["rules"] = std::move(rules);
  return j.dump();
}

CtqrsBreakdown breakdown_from_json(std::string_view text) {
  CtqrsBreakdown b;
  try {
    auto j = nlohmann::json::parse(text);
    b.total = j.at("total").get<int>();
    b.max_total = j.at("max_total").get<int>();
    for (const auto& rj : j.at("rules")) {
      auto name = rj.at("rule").get<std::string>();
      auto it = std::find_if(kAllRules.begin(), kAllRules.end(),
                             [&](RuleId id) { return rule_name(id) == name; });
      if (it == kAllRules.end()) throw Error(ErrorCode::MalformedDocument, "unknown rule " + name);
      b.results.push_back({*it, rj.at("points").get<int>(), rj.at("max").get<int>(),
                           rj.at("evidence").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedDocument, e.what());
  }
  return b;
}

}  // namespace reportsmith
