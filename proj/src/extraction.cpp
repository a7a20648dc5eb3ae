#include "moralmatch/extraction.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <unordered_set>

#include "moralmatch/common.hpp"
#include "moralmatch/io.hpp"

namespace moralmatch::extraction {

namespace {

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

// Token with leading and trailing punctuation (markdown, quotes, ...) removed.
std::string_view word_core(std::string_view token) {
  while (!token.empty() && !is_alnum(token.front())) token.remove_prefix(1);
  while (!token.empty() && !is_alnum(token.back())) token.remove_suffix(1);
  return token;
}

bool is_upper_word(std::string_view w) {
  bool any = false;
  for (char c : w) {
    if (is_alpha(c)) {
      any = true;
      if (!std::isupper(static_cast<unsigned char>(c))) return false;
    }
  }
  return any;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == '\n') {
      std::string_view line = text.substr(start, i - start);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      out.push_back(line);
      start = i + 1;
    }
  }
  return out;
}

// Sentences end at . ! or ? followed by whitespace or end of line.
std::vector<std::string_view> split_sentences(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if ((c == '.' || c == '!' || c == '?') && (i + 1 == line.size() || is_space(line[i + 1]))) {
      auto s = io::trim(line.substr(start, i + 1 - start));
      if (!s.empty()) out.push_back(s);
      start = i + 1;
    }
  }
  auto rest = io::trim(line.substr(std::min(start, line.size())));
  if (!rest.empty()) out.push_back(rest);
  return out;
}

bool is_hypothetical(std::string_view sentence) {
  sentence = io::trim(sentence);
  if (!sentence.empty() && sentence.back() == '?') return true;
  for (auto tok : io::split_whitespace(sentence))
    if (io::to_lower(word_core(tok)) == "if") return true;
  return false;
}

// "Nah"/"nah" is informal "no"; only the upper-case form is trusted outside rule 1.
bool ambiguous_nah(RawTag tag, std::string_view written) {
  return tag == RawTag::NAH && !is_upper_word(written);
}

std::optional<TagExtraction> rule1(const std::vector<std::string_view>& lines) {
  TagExtraction out;
  for (auto line : lines) {
    auto tokens = io::split_whitespace(line);
    if (tokens.size() != 1) continue;
    if (auto tag = parse_tag(word_core(tokens[0]))) {
      if (std::find(out.tags.begin(), out.tags.end(), *tag) == out.tags.end())
        out.tags.push_back(*tag);
    }
  }
  if (out.tags.empty()) return std::nullopt;
  out.rule = 1;
  return out;
}

std::optional<TagExtraction> rule2(const std::vector<std::string_view>& lines) {
  for (auto line : lines) {
    for (auto sentence : split_sentences(line)) {
      auto tokens = io::split_whitespace(sentence);
      if (tokens.size() != 1) continue;
      auto core = word_core(tokens[0]);
      auto tag = parse_tag(core);
      if (tag && !ambiguous_nah(*tag, core)) return TagExtraction{{*tag}, 2};
    }
  }
  return std::nullopt;
}

std::optional<TagExtraction> rule3(const std::vector<std::string_view>& lines) {
  for (auto line : lines) {
    // leading list / quote / emphasis markers do not count as words
    std::size_t pos = 0;
    while (pos < line.size() && (is_space(line[pos]) || line[pos] == '*' || line[pos] == '_' ||
                                 line[pos] == '>' || line[pos] == '#'))
      ++pos;
    std::size_t end = pos;
    while (end < line.size() && is_alnum(line[end])) ++end;
    if (end == pos) continue;
    std::string_view word = line.substr(pos, end - pos);
    auto tag = parse_tag(word);
    if (!tag) continue;
    if (end < line.size() && !is_space(line[end]) && line[end] != '*' && line[end] != '_' &&
        std::string_view(".-;:").find(line[end]) == std::string_view::npos)
      continue;  // glued to something else, e.g. "NTA's"
    std::size_t after = end;
    while (after < line.size() && (line[after] == '*' || line[after] == '_')) ++after;
    std::string_view rest = line.substr(after);
    bool special = false;
    if (!rest.empty() && std::string_view(".-;:").find(rest[0]) != std::string_view::npos)
      special = true;
    else if (rest.size() >= 2 && rest[0] == ' ' && (rest[1] == '-' || rest[1] == ':' || rest[1] == ' '))
      special = true;
    bool fires = is_upper_word(word) || (special && !ambiguous_nah(*tag, word));
    if (!fires) continue;
    auto sentences = split_sentences(line.substr(pos));
    if (!sentences.empty() && is_hypothetical(sentences.front())) continue;
    return TagExtraction{{*tag}, 3};
  }
  return std::nullopt;
}

std::optional<TagExtraction> rule4(const std::vector<std::string_view>& lines) {
  for (auto line : lines) {
    for (auto sentence : split_sentences(line)) {
      auto tokens = io::split_whitespace(sentence);
      if (tokens.empty() || tokens.size() > 6) continue;
      if (is_hypothetical(sentence)) continue;
      for (auto tok : tokens) {
        auto core = word_core(tok);
        auto tag = parse_tag(core);
        if (tag && is_upper_word(core)) return TagExtraction{{*tag}, 4};
      }
    }
  }
  return std::nullopt;
}

}  // namespace

std::string_view to_string(RawTag tag) {
  switch (tag) {
    case RawTag::YTA: return "YTA";
    case RawTag::ESH: return "ESH";
    case RawTag::NTA: return "NTA";
    case RawTag::NAH: return "NAH";
  }
  return "?";
}

std::optional<RawTag> parse_tag(std::string_view word) {
  if (word.size() != 3) return std::nullopt;
  const std::string w = io::to_lower(word);
  if (w == "yta") return RawTag::YTA;
  if (w == "esh") return RawTag::ESH;
  if (w == "nta") return RawTag::NTA;
  if (w == "nah") return RawTag::NAH;
  return std::nullopt;
}

std::string_view to_string(VerdictClass v) { return v == VerdictClass::AH ? "AH" : "N_AH"; }

TagExtraction extract_judgment_tags_detailed(std::string_view comment_body) {
  const auto lines = split_lines(comment_body);
  if (auto r = rule1(lines)) return *r;
  if (auto r = rule2(lines)) return *r;
  if (auto r = rule3(lines)) return *r;
  if (auto r = rule4(lines)) return *r;
  return {};
}

std::vector<RawTag> extract_judgment_tags(std::string_view comment_body) {
  return extract_judgment_tags_detailed(comment_body).tags;
}

Aggregation aggregate_verdict_detailed(std::span<const TaggedComment> tagged,
                                       std::int64_t min_weight) {
  Aggregation out;
  for (const auto& tc : tagged) {
    if (tc.tag == RawTag::YTA || tc.tag == RawTag::ESH)
      out.ah_weight += tc.score;
    else
      out.n_ah_weight += tc.score;
  }
  const std::int64_t total = out.ah_weight + out.n_ah_weight;
  if (total < min_weight) {
    out.status = AggregationStatus::below_min_weight;
  } else if (out.ah_weight == out.n_ah_weight) {
    out.status = AggregationStatus::tied;
  } else {
    out.verdict = Verdict{out.ah_weight > out.n_ah_weight ? VerdictClass::AH : VerdictClass::N_AH,
                          total};
  }
  return out;
}

std::optional<Verdict> aggregate_verdict(std::span<const TaggedComment> tagged,
                                         std::int64_t min_weight) {
  return aggregate_verdict_detailed(tagged, min_weight).verdict;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Gender g) { return g == Gender::M ? "M" : "F"; }

namespace {

std::optional<Gender> gender_letter(char c) {
  switch (c) {
    case 'M': case 'm': return Gender::M;
    case 'F': case 'f': return Gender::F;
    default: return std::nullopt;
  }
}

bool two_digit_age(std::string_view text, std::size_t at) {
  return at + 1 < text.size() && is_digit(text[at]) && text[at] != '0' && is_digit(text[at + 1]);
}

bool boundary_after(std::string_view text, std::size_t at) {
  return at >= text.size() || !is_alnum(text[at]);
}

const std::array<std::string_view, 7> kNonBinaryTags = {"nb", "enby", "mtf", "ftm", "m2f", "f2m", "nby"};

// Letters (and digits inside, as in "M2F") starting at `at`, up to four.
std::size_t gender_word_end(std::string_view text, std::size_t at) {
  std::size_t e = at;
  while (e < text.size() && e - at < 5 && is_alnum(text[e]) && !(e == at && is_digit(text[e]))) ++e;
  return e;
}

bool is_non_binary_word(std::string_view w) {
  const std::string lw = io::to_lower(w);
  return std::find(kNonBinaryTags.begin(), kNonBinaryTags.end(), lw) != kNonBinaryTags.end();
}

// Tag body (without brackets) at `j`; returns end offset or npos.
std::size_t match_tag_body(std::string_view text, std::size_t j, TagSpan& out) {
  // letter(s) then age
  if (j < text.size() && is_alpha(text[j])) {
    if (auto g = gender_letter(text[j])) {
      std::size_t k = j + 1;
      if (k < text.size() && text[k] == ' ') ++k;
      if (two_digit_age(text, k) && boundary_after(text, k + 2)) {
        out.age = (text[k] - '0') * 10 + (text[k + 1] - '0');
        out.gender = g;
        return k + 2;
      }
    }
    std::size_t we = gender_word_end(text, j);
    if (we > j + 1 && is_non_binary_word(text.substr(j, we - j))) {
      std::size_t k = we;
      if (k < text.size() && text[k] == ' ') ++k;
      if (two_digit_age(text, k) && boundary_after(text, k + 2)) {
        out.age = (text[k] - '0') * 10 + (text[k + 1] - '0');
        out.gender.reset();
        return k + 2;
      }
    }
    return std::string_view::npos;
  }
  // age then letter(s)
  if (two_digit_age(text, j) && (j + 2 >= text.size() || !is_digit(text[j + 2]))) {
    std::size_t k = j + 2;
    if (k < text.size() && text[k] == ' ') ++k;
    if (k < text.size()) {
      if (auto g = gender_letter(text[k]); g && boundary_after(text, k + 1)) {
        out.age = (text[j] - '0') * 10 + (text[j + 1] - '0');
        out.gender = g;
        return k + 1;
      }
      std::size_t we = gender_word_end(text, k);
      if (we > k + 1 && boundary_after(text, we) && is_non_binary_word(text.substr(k, we - k))) {
        out.age = (text[j] - '0') * 10 + (text[j + 1] - '0');
        out.gender.reset();
        return we;
      }
    }
  }
  return std::string_view::npos;
}

struct Token {
  std::size_t begin;
  std::size_t end;
  std::string core;  // lowercase, punctuation stripped, curly apostrophes normalized
};

std::vector<Token> tokenize_with_offsets(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) {
      std::string raw(text.substr(i, j - i));
      for (std::size_t p; (p = raw.find("\xE2\x80\x99")) != std::string::npos;) raw.replace(p, 3, "'");
      out.push_back({i, j, io::to_lower(word_core(raw))});
    }
    i = j;
  }
  return out;
}

bool is_first_person(const std::string& w) {
  return w == "i" || w == "me" || w == "my" || w == "i'm" || w == "im";
}

// Words that may sit between the pronoun and its tag ("I am a 22 M ...").
bool is_linker(const std::string& w) {
  static const std::unordered_set<std::string> kLinkers = {
      "am", "a", "an", "was", "is", "currently", "just", "now", "turned", "here", "aged", "age", ""};
  return kLinkers.count(w) > 0;
}

bool near_first_person(const std::vector<Token>& tokens, const TagSpan& tag, std::size_t window) {
  std::size_t first = tokens.size(), last = 0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t].end > tag.begin && tokens[t].begin < tag.end) {
      first = std::min(first, t);
      last = std::max(last, t);
    }
  }
  if (first == tokens.size()) return false;
  // a pronoun glued to the tag token, e.g. "I(26F)"
  for (std::size_t t = first; t <= last; ++t) {
    if (is_first_person(tokens[t].core)) return true;
  }
  for (std::size_t step = 1; step <= window && step <= first; ++step) {
    const auto& w = tokens[first - step].core;
    if (is_first_person(w)) return true;
    if (!is_linker(w)) break;
  }
  for (std::size_t step = 1; step <= window && last + step < tokens.size(); ++step) {
    const auto& w = tokens[last + step].core;
    if (is_first_person(w)) return true;
    if (!is_linker(w)) break;
  }
  return false;
}

void scan_first_person(std::string_view text, std::size_t window, DemographicsResult& result) {
  const auto tokens = tokenize_with_offsets(text);
  for (const auto& tag : find_demographic_tags(text)) {
    if (!near_first_person(tokens, tag, window)) continue;
    if (!tag.gender) {
      result.non_binary = true;
      continue;
    }
    Demographics d{tag.age, *tag.gender};
    if (!result.demographics)
      result.demographics = d;
    else if (!(*result.demographics == d))
      result.conflict = true;
  }
}

}  // namespace

std::vector<TagSpan> find_demographic_tags(std::string_view text) {
  std::vector<TagSpan> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (i > 0 && is_alnum(text[i - 1])) {
      ++i;
      continue;
    }
    TagSpan span;
    span.begin = i;
    std::size_t end = std::string_view::npos;
    if (text[i] == '(' || text[i] == '[') {
      const char close = text[i] == '(' ? ')' : ']';
      std::size_t j = i + 1;
      while (j < text.size() && text[j] == ' ') ++j;
      std::size_t body_end = match_tag_body(text, j, span);
      if (body_end != std::string_view::npos) {
        std::size_t k = body_end;
        while (k < text.size() && text[k] == ' ') ++k;
        if (k < text.size() && text[k] == close) {
          end = k + 1;
        } else {
          span.begin = j;
          end = body_end;
        }
      }
    } else {
      end = match_tag_body(text, i, span);
    }
    if (end == std::string_view::npos) {
      ++i;
      continue;
    }
    span.end = end;
    out.push_back(span);
    i = end;
  }
  return out;
}

DemographicsResult extract_demographics_detailed(std::string_view title, std::string_view body,
                                                 const DemographicsOptions& options) {
  DemographicsResult result;
  scan_first_person(title, options.pronoun_window, result);
  scan_first_person(body, options.pronoun_window, result);
  return result;
}

std::optional<Demographics> extract_demographics(std::string_view title, std::string_view body,
                                                 const DemographicsOptions& options) {
  return extract_demographics_detailed(title, body, options).demographics;
}

std::string strip_demographic_tags(std::string_view text) {
  std::string current(text);
  for (;;) {
    auto tags = find_demographic_tags(current);
    if (tags.empty()) return current;
    std::string next;
    next.reserve(current.size());
    std::size_t cursor = 0;
    for (const auto& tag : tags) {
      std::size_t left = tag.begin;
      while (left > cursor && is_space(current[left - 1])) --left;
      next.append(current, cursor, left - cursor);
      std::size_t right = tag.end;
      while (right < current.size() && is_space(current[right])) ++right;
      const bool has_left = !next.empty();
      const bool has_right = right < current.size();
      const bool punct_next =
          has_right && std::string_view(".,;:!?)]").find(current[right]) != std::string_view::npos;
      const bool next_is_tag = has_right && (current[right] == '(' || current[right] == '[');
      if (has_left && has_right && !punct_next && !next_is_tag) next += ' ';
      cursor = right;
    }
    next.append(current, cursor, std::string::npos);
    if (next == current) return current;
    current = std::move(next);
  }
}

// ---------------------------------------------------------------------------

GenderLexicon GenderLexicon::from_pairs(std::vector<std::pair<std::string, std::string>> pairs) {
  GenderLexicon lex;
  for (const auto& [male, female] : pairs) {
    for (const auto* w : {&male, &female}) {
      if (w->empty() || io::to_lower(*w) != *w)
        throw Error("gender lexicon entry '" + *w + "' must be a non-empty lowercase word");
      if (lex.map_.count(*w)) throw Error("gender lexicon word '" + *w + "' appears twice");
    }
    if (male == female) throw Error("gender lexicon pair maps '" + male + "' to itself");
    lex.map_.emplace(male, female);
    lex.map_.emplace(female, male);
  }
  lex.pairs_ = std::move(pairs);
  return lex;
}

GenderLexicon GenderLexicon::load(const std::filesystem::path& path) {
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& line : io::read_list_file(path)) {
    auto cols = io::split_whitespace(line);
    if (cols.size() != 2)
      throw Error("gender lexicon " + path.string() + ": expected two columns in '" + line + "'");
    pairs.emplace_back(std::string(cols[0]), std::string(cols[1]));
  }
  return from_pairs(std::move(pairs));
}

GenderLexicon GenderLexicon::load_default() {
  return load(std::filesystem::path(MORALMATCH_DATA_DIR) / "gender_lexicon.txt");
}

std::optional<std::string_view> GenderLexicon::counterpart(std::string_view lowercase_word) const {
  auto it = map_.find(std::string(lowercase_word));
  if (it == map_.end()) return std::nullopt;
  return std::string_view(it->second);
}

std::string swap_all_gendered_words(std::string_view text, const GenderLexicon& lexicon) {
  std::string out;
  out.reserve(text.size() + 16);
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_alpha(text[i])) {
      out += text[i++];
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && is_alpha(text[j])) ++j;
    std::string_view word = text.substr(i, j - i);
    auto repl = lexicon.counterpart(io::to_lower(word));
    if (!repl) {
      out.append(word);
    } else {
      std::string r(*repl);
      if (word.size() > 1 && is_upper_word(word)) {
        for (char& c : r) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      } else if (std::isupper(static_cast<unsigned char>(word[0]))) {
        r[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(r[0])));
      }
      out += r;
    }
    i = j;
  }
  return out;
}

std::string swap_gendered_words(std::string_view text, const GenderLexicon& lexicon,
                                double probability, std::uint64_t seed) {
  if (probability <= 0.0) return std::string(text);
  if (probability < 1.0 && unit_interval(seed) >= probability) return std::string(text);
  return swap_all_gendered_words(text, lexicon);
}

}  // namespace moralmatch::extraction
