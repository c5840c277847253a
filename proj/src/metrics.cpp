#include "reportsmith/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <unordered_map>

#include "json.hpp"
#include "reportsmith/error.hpp"

namespace reportsmith {

namespace {

// Decodes one UTF-8 code point at s[i]; invalid bytes decode as U+FFFD and
// advance by one.
char32_t decode_utf8(std::string_view s, std::size_t& i) {
  auto byte = [&](std::size_t k) { return static_cast<unsigned char>(s[k]); };
  unsigned char c = byte(i);
  if (c < 0x80) {
    ++i;
    return c;
  }
  int extra = 0;
  char32_t cp = 0;
  if ((c & 0xE0) == 0xC0) {
    extra = 1;
    cp = c & 0x1F;
  } else if ((c & 0xF0) == 0xE0) {
    extra = 2;
    cp = c & 0x0F;
  } else if ((c & 0xF8) == 0xF0) {
    extra = 3;
    cp = c & 0x07;
  } else {
    ++i;
    return 0xFFFD;
  }
  if (i + static_cast<std::size_t>(extra) >= s.size()) {
    ++i;
    return 0xFFFD;
  }
  for (int k = 1; k <= extra; ++k) {
    unsigned char cc = byte(i + static_cast<std::size_t>(k));
    if ((cc & 0xC0) != 0x80) {
      ++i;
      return 0xFFFD;
    }
    cp = (cp << 6) | (cc & 0x3F);
  }
  i += static_cast<std::size_t>(extra) + 1;
  return cp;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

bool is_word_char(char32_t cp) {
  if (cp < 0x80) return std::isalnum(static_cast<int>(cp)) != 0;
  if (cp == 0xFFFD) return false;
  if (cp <= 0xBF) return cp == 0xAA || cp == 0xB5 || cp == 0xBA;  // Latin-1 punctuation
  if (cp == 0xD7 || cp == 0xF7) return false;                      // × ÷
  if (cp >= 0x2000 && cp <= 0x2BFF) return false;                  // punctuation, symbols, arrows
  if (cp >= 0x3000 && cp <= 0x303F) return false;                  // CJK punctuation
  if (cp >= 0xFE30 && cp <= 0xFE4F) return false;
  if (cp >= 0xFF00 && cp <= 0xFF0F) return false;
  if (cp >= 0x1F000 && cp <= 0x1FAFF) return false;                // emoji
  return true;
}

char32_t to_lower(char32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 32;
  if (cp < 0x80) return cp;
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 32;
  if (cp >= 0x391 && cp <= 0x3A9 && cp != 0x3A2) return cp + 32;
  if (cp >= 0x410 && cp <= 0x42F) return cp + 32;
  if (cp >= 0x400 && cp <= 0x40F) return cp + 80;
  return cp;
}

}  // namespace

TokenSequence tokenize(std::string_view text) {
  TokenSequence tokens;
  std::string current;
  std::size_t i = 0;
  while (i < text.size()) {
    char32_t cp = decode_utf8(text, i);
    if (is_word_char(cp)) {
      append_utf8(current, to_lower(cp));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::vector<std::pair<std::size_t, std::size_t>> sentence_spans(std::string_view line) {
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  std::size_t start = 0;
  while (start < line.size() && is_space(line[start])) ++start;
  for (std::size_t i = start; i < line.size(); ++i) {
    char c = line[i];
    if (c != '.' && c != '!' && c != '?') continue;
    if (i + 1 < line.size() && !is_space(line[i + 1])) continue;
    // "1." or "12." at the start of a sentence is an enumerator.
    bool enumerator = c == '.' && i > start;
    for (std::size_t k = start; k < i && enumerator; ++k)
      enumerator = std::isdigit(static_cast<unsigned char>(line[k])) != 0;
    if (enumerator) continue;
    spans.emplace_back(start, i + 1);
    start = i + 1;
    while (start < line.size() && is_space(line[start])) ++start;
    i = start - 1;
  }
  std::size_t end = line.size();
  while (end > start && is_space(line[end - 1])) --end;
  if (end > start) spans.emplace_back(start, end);
  return spans;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    for (auto [a, b] : sentence_spans(line)) {
      std::string_view s = line.substr(a, b - a);
      while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
      if (!s.empty()) out.emplace_back(s);
    }
    if (nl == text.size()) break;
    pos = nl + 1;
  }
  return out;
}

Rouge1 rouge1(const TokenSequence& candidate, const TokenSequence& reference) {
  std::unordered_map<std::string_view, long> ref_counts;
  for (const auto& t : reference) ++ref_counts[t];
  std::size_t overlap = 0;
  for (const auto& t : candidate) {
    auto it = ref_counts.find(t);
    if (it != ref_counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  Rouge1 r;
  if (!candidate.empty()) r.precision = static_cast<double>(overlap) / static_cast<double>(candidate.size());
  if (!reference.empty()) r.recall = static_cast<double>(overlap) / static_cast<double>(reference.size());
  if (r.precision + r.recall > 0) r.f1 = 2 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

namespace {

constexpr double kMeteorAlpha = 0.9;
constexpr double kMeteorBeta = 3.0;
constexpr double kMeteorGamma = 0.5;

// Greedy tiling: repeatedly aligns the longest run of unmatched, equal
// positions (ties: closest positions, then leftmost). Every stage ends only
// when no equal unmatched pair is left, so the match count is maximal.
template <typename Equal>
void tile(std::size_t n, std::size_t m, std::vector<long>& align_c, std::vector<char>& used_r,
          Equal equal) {
  while (true) {
    std::size_t best_len = 0, best_i = 0, best_j = 0, best_dist = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (align_c[i] >= 0) continue;
      for (std::size_t j = 0; j < m; ++j) {
        if (used_r[j] || !equal(i, j)) continue;
        std::size_t len = 1;
        while (i + len < n && j + len < m && align_c[i + len] < 0 && !used_r[j + len] &&
               equal(i + len, j + len))
          ++len;
        std::size_t dist = i > j ? i - j : j - i;
        if (len > best_len || (len == best_len && dist < best_dist)) {
          best_len = len;
          best_i = i;
          best_j = j;
          best_dist = dist;
        }
      }
    }
    if (best_len == 0) return;
    for (std::size_t t = 0; t < best_len; ++t) {
      align_c[best_i + t] = static_cast<long>(best_j + t);
      used_r[best_j + t] = 1;
    }
  }
}

// Exhaustive refinement of a maximal alignment. The match counts are fixed by
// the two stages (per token type for exact matches, per stem for the rest), so
// fewest chunks means most adjacent continuations. Branch and bound over the
// candidate positions, seeded with the greedy tiling; gives up after
// kAlignNodeBudget nodes and keeps the best alignment found so far.
constexpr std::size_t kAlignNodeBudget = 200000;

class AlignmentSearch {
 public:
  AlignmentSearch(const TokenSequence& cand, const TokenSequence& ref, const std::vector<std::string>& stem_c,
                  const std::vector<std::string>& stem_r)
      : n_(cand.size()), m_(ref.size()) {
    std::unordered_map<std::string_view, int> type_id, stem_id;
    auto id_of = [](std::unordered_map<std::string_view, int>& ids, std::string_view s) {
      return ids.emplace(s, static_cast<int>(ids.size())).first->second;
    };
    type_c_.resize(n_);
    type_r_.resize(m_);
    std::vector<int> sc(n_), sr(m_);
    for (std::size_t i = 0; i < n_; ++i) type_c_[i] = id_of(type_id, cand[i]);
    for (std::size_t j = 0; j < m_; ++j) type_r_[j] = id_of(type_id, ref[j]);
    for (std::size_t i = 0; i < n_; ++i) sc[i] = id_of(stem_id, stem_c[i]);
    for (std::size_t j = 0; j < m_; ++j) sr[j] = id_of(stem_id, stem_r[j]);

    std::vector<int> cnt_c(type_id.size()), cnt_r(type_id.size());
    for (int t : type_c_) ++cnt_c[t];
    for (int t : type_r_) ++cnt_r[t];
    need_exact_.resize(type_id.size());
    unused_r_ = cnt_r;
    left_c_ = cnt_c;
    for (std::size_t t = 0; t < type_id.size(); ++t) need_exact_[t] = std::min(cnt_c[t], cnt_r[t]);

    // Leftovers of the exact stage are the surplus side of each type.
    std::vector<int> surplus_c(stem_id.size()), surplus_r(stem_id.size());
    std::vector<int> stem_of_type(type_id.size());
    for (std::size_t i = 0; i < n_; ++i) stem_of_type[type_c_[i]] = sc[i];
    for (std::size_t j = 0; j < m_; ++j) stem_of_type[type_r_[j]] = sr[j];
    for (std::size_t t = 0; t < type_id.size(); ++t) {
      if (cnt_c[t] > cnt_r[t]) surplus_c[stem_of_type[t]] += cnt_c[t] - cnt_r[t];
      if (cnt_r[t] > cnt_c[t]) surplus_r[stem_of_type[t]] += cnt_r[t] - cnt_c[t];
    }
    need_stem_.resize(stem_id.size());
    for (std::size_t s = 0; s < stem_id.size(); ++s) need_stem_[s] = std::min(surplus_c[s], surplus_r[s]);

    stem_c_ = sc;
    options_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      const int t = type_c_[i];
      for (std::size_t j = 0; j < m_; ++j) {
        if (type_r_[j] == t) {
          options_[i].push_back({j, false});
        } else if (sr[j] == sc[i] && cnt_c[t] > cnt_r[t] && cnt_r[type_r_[j]] > cnt_c[type_r_[j]] &&
                   need_stem_[sc[i]] > 0) {
          options_[i].push_back({j, true});
        }
      }
    }
    // continuation_possible[k]: positions k-1 and k could align to adjacent
    // reference positions under some choice.
    std::vector<int> possible(n_ + 1, 0);
    for (std::size_t k = 1; k < n_; ++k) {
      for (const auto& a : options_[k - 1]) {
        for (const auto& b : options_[k]) {
          if (b.j == a.j + 1) {
            possible[k] = 1;
            break;
          }
        }
        if (possible[k]) break;
      }
    }
    bound_.assign(n_ + 1, 0);
    for (std::size_t k = n_; k-- > 0;) bound_[k] = bound_[k + 1] + possible[k];
    used_.assign(m_, 0);
    align_.assign(n_, -1);
  }

  // Improves `best` in place; returns true when the search was exhaustive.
  bool refine(std::vector<long>& best) {
    best_ = best;
    best_cont_ = continuations(best);
    dfs(0, 0);
    best = best_;
    return nodes_ <= kAlignNodeBudget;
  }

  static std::size_t continuations(const std::vector<long>& a) {
    std::size_t c = 0;
    for (std::size_t k = 1; k < a.size(); ++k)
      if (a[k] >= 0 && a[k - 1] >= 0 && a[k] == a[k - 1] + 1) ++c;
    return c;
  }

 private:
  struct Option {
    std::size_t j;
    bool stem;
  };

  void dfs(std::size_t i, std::size_t cont) {
    if (++nodes_ > kAlignNodeBudget) return;
    if (cont + bound_[i] <= best_cont_) return;
    if (i == n_) {
      for (int need : need_exact_)
        if (need) return;
      for (int need : need_stem_)
        if (need) return;
      best_ = align_;
      best_cont_ = cont;
      return;
    }
    const int t = type_c_[i];
    const long prev = i > 0 ? align_[i - 1] : -2;
    --left_c_[t];
    auto try_option = [&](const Option& o) {
      if (used_[o.j]) return;
      const int rt = type_r_[o.j];
      if (o.stem) {
        if (need_stem_[stem_c_[i]] == 0) return;
        // The candidate and reference types must still cover their exact quotas.
        if (left_c_[t] < need_exact_[t] || unused_r_[rt] - 1 < need_exact_[rt]) return;
        --need_stem_[stem_c_[i]];
      } else {
        if (need_exact_[t] == 0) return;
        --need_exact_[t];
      }
      used_[o.j] = 1;
      --unused_r_[rt];
      align_[i] = static_cast<long>(o.j);
      dfs(i + 1, cont + (prev >= 0 && static_cast<long>(o.j) == prev + 1 ? 1 : 0));
      align_[i] = -1;
      ++unused_r_[rt];
      used_[o.j] = 0;
      if (o.stem) {
        ++need_stem_[stem_c_[i]];
      } else {
        ++need_exact_[t];
      }
    };
    // Continuations first, then nearest positions.
    for (const auto& o : options_[i])
      if (prev >= 0 && static_cast<long>(o.j) == prev + 1) try_option(o);
    for (const auto& o : options_[i])
      if (!(prev >= 0 && static_cast<long>(o.j) == prev + 1)) try_option(o);
    if (left_c_[t] >= need_exact_[t]) dfs(i + 1, cont);
    ++left_c_[t];
  }

  std::size_t n_, m_;
  std::vector<int> type_c_, type_r_, stem_c_;
  std::vector<int> need_exact_, need_stem_, unused_r_, left_c_;
  std::vector<std::vector<Option>> options_;
  std::vector<std::size_t> bound_;
  std::vector<char> used_;
  std::vector<long> align_, best_;
  std::size_t best_cont_ = 0;
  std::size_t nodes_ = 0;
};

}  // namespace

MeteorDetail meteor_detail(const TokenSequence& candidate, const TokenSequence& reference) {
  MeteorDetail d;
  const std::size_t n = candidate.size();
  const std::size_t m = reference.size();
  if (n == 0 || m == 0) return d;

  std::vector<long> align_c(n, -1);
  std::vector<char> used_r(m, 0);
  tile(n, m, align_c, used_r, [&](std::size_t i, std::size_t j) { return candidate[i] == reference[j]; });

  std::vector<std::string> stem_c(n), stem_r(m);
  for (std::size_t i = 0; i < n; ++i) stem_c[i] = porter_stem(candidate[i]);
  for (std::size_t j = 0; j < m; ++j) stem_r[j] = porter_stem(reference[j]);
  tile(n, m, align_c, used_r, [&](std::size_t i, std::size_t j) { return stem_c[i] == stem_r[j]; });
  AlignmentSearch(candidate, reference, stem_c, stem_r).refine(align_c);

  long prev = -2;
  bool prev_matched = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (align_c[i] < 0) {
      prev_matched = false;
      continue;
    }
    ++d.matches;
    if (!prev_matched || align_c[i] != prev + 1) ++d.chunks;
    prev = align_c[i];
    prev_matched = true;
  }
  if (d.matches == 0) return d;

  const double mm = static_cast<double>(d.matches);
  d.precision = mm / static_cast<double>(n);
  d.recall = mm / static_cast<double>(m);
  d.fmean = d.precision * d.recall / (kMeteorAlpha * d.precision + (1 - kMeteorAlpha) * d.recall);
  d.penalty = kMeteorGamma * std::pow(static_cast<double>(d.chunks) / mm, kMeteorBeta);
  d.score = d.fmean * (1 - d.penalty);
  return d;
}

double meteor(const TokenSequence& candidate, const TokenSequence& reference) {
  return meteor_detail(candidate, reference).score;
}

double cosine_tf(const TokenSequence& candidate, const TokenSequence& reference) {
  if (candidate.empty() || reference.empty()) return 0;
  std::unordered_map<std::string_view, std::pair<double, double>> tf;
  for (const auto& t : candidate) tf[t].first += 1;
  for (const auto& t : reference) tf[t].second += 1;
  double dot = 0, na = 0, nb = 0;
  for (const auto& [_, v] : tf) {
    dot += v.first * v.second;
    na += v.first * v.first;
    nb += v.second * v.second;
  }
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), 0.0, 1.0);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::ProviderUnavailable, "embedding dimensions differ");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::size_t HashedBagProvider::bucket(std::string_view token) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : token) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return static_cast<std::size_t>(h % kDimensions);
}

std::vector<double> HashedBagProvider::embed(std::string_view text) const {
  std::vector<double> v(kDimensions, 0.0);
  for (const auto& t : tokenize(text)) v[bucket(t)] += 1.0;
  double norm = 0;
  for (double x : v) norm += x * x;
  if (norm > 0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

std::vector<double> FallbackProvider::embed(std::string_view text) const {
  if (primary_) {
    try {
      return primary_->embed(text);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ProviderUnavailable && e.code() != ErrorCode::TimedOut) throw;
    }
  }
  if (!fallback_) throw Error(ErrorCode::ProviderUnavailable, "no embedding provider reachable");
  return fallback_->embed(text);
}

std::string FallbackProvider::name() const {
  std::string n = primary_ ? primary_->name() : "none";
  if (fallback_) n += "|" + fallback_->name();
  return n;
}

double embedding_similarity(const EmbeddingProvider& provider, std::string_view a, std::string_view b) {
  return cosine(provider.embed(a), provider.embed(b));
}

MetricReport compute_metrics(std::string_view candidate, std::string_view reference,
                             const EmbeddingProvider* provider) {
  TokenSequence c = tokenize(candidate);
  TokenSequence r = tokenize(reference);
  MetricReport out;
  out.rouge = rouge1(c, r);
  out.meteor = meteor(c, r);
  out.cosine_tf = cosine_tf(c, r);
  if (provider) out.embedding_similarity = embedding_similarity(*provider, candidate, reference);
  return out;
}

std::string metric_report_to_json(const MetricReport& report) {
  nlohmann::ordered_json j;
  j["rouge1"] = {{"p", report.rouge.precision}, {"r", report.rouge.recall}, {"f", report.rouge.f1}};
  j["meteor"] = report.meteor;
  j["cosine_tf"] = report.cosine_tf;
  if (report.embedding_similarity) {
    j["embedding_similarity"] = *report.embedding_similarity;
  } else {
    j["embedding_similarity"] = nullptr;
  }
  return j.dump();
}

}  // namespace reportsmith
