#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace moralmatch::extraction {

// ---------------------------------------------------------------------------
// Judgment tags and verdicts
// ---------------------------------------------------------------------------

enum class RawTag { YTA, ESH, NTA, NAH };
std::string_view to_string(RawTag tag);
std::optional<RawTag> parse_tag(std::string_view word);  // case-insensitive

enum class VerdictClass { AH, N_AH };
std::string_view to_string(VerdictClass v);

struct Verdict {
  VerdictClass value = VerdictClass::N_AH;
  std::int64_t total_weight = 0;

  friend bool operator==(const Verdict&, const Verdict&) = default;
};

struct TagExtraction {
  std::vector<RawTag> tags;
  int rule = 0;  // 1..4, or 0 when nothing matched
};

/// Rules, first one that fires wins:
///  1. the tag is the only word on a line (any case); every such line counts
///  2. the tag is the only word of a sentence (any case, lowercase "nah" skipped)
///  3. the tag opens a line and is upper case, or is followed by one of
///     ".", "-", " -", ";", ":", " :" or a double space
///  4. an upper-case tag inside a sentence of at most six words
/// Rules 3 and 4 ignore sentences containing "if" or ending with "?".
TagExtraction extract_judgment_tags_detailed(std::string_view comment_body);
std::vector<RawTag> extract_judgment_tags(std::string_view comment_body);

struct TaggedComment {
  RawTag tag;
  std::int64_t score = 0;
};

enum class AggregationStatus { ok, below_min_weight, tied };

struct Aggregation {
  std::optional<Verdict> verdict;
  AggregationStatus status = AggregationStatus::ok;
  std::int64_t ah_weight = 0;
  std::int64_t n_ah_weight = 0;
};

/// Score-weighted vote: YTA/ESH count for AH, NTA/NAH for N_AH.
Aggregation aggregate_verdict_detailed(std::span<const TaggedComment> tagged,
                                       std::int64_t min_weight = 10);
std::optional<Verdict> aggregate_verdict(std::span<const TaggedComment> tagged,
                                         std::int64_t min_weight = 10);

// ---------------------------------------------------------------------------
// Demographics
// ---------------------------------------------------------------------------

enum class Gender { M, F };
std::string_view to_string(Gender g);

struct Demographics {
  int age = 0;
  Gender gender = Gender::F;

  friend bool operator==(const Demographics&, const Demographics&) = default;
};

struct DemographicsResult {
  std::optional<Demographics> demographics;
  bool conflict = false;    // another first-person tag disagreed with the first
  bool non_binary = false;  // a first-person tag outside M/F was seen
};

/// Span of a demographic tag such as "F26", "26 F" or "(26F)" in `text`.
struct TagSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  int age = 0;
  std::optional<Gender> gender;  // empty for non-binary tags
};

std::vector<TagSpan> find_demographic_tags(std::string_view text);

struct DemographicsOptions {
  std::size_t pronoun_window = 3;
};

/// Title first, then body; a tag counts only near a first-person pronoun.
DemographicsResult extract_demographics_detailed(std::string_view title, std::string_view body,
                                                 const DemographicsOptions& options = {});
std::optional<Demographics> extract_demographics(std::string_view title, std::string_view body,
                                                 const DemographicsOptions& options = {});

/// Removes every demographic tag, whoever it refers to.
std::string strip_demographic_tags(std::string_view text);

// ---------------------------------------------------------------------------
// Gender swapping
// ---------------------------------------------------------------------------

class GenderLexicon {
 public:
  GenderLexicon() = default;

  /// Throws moralmatch::Error unless the pairs form a lowercase bijection.
  static GenderLexicon from_pairs(std::vector<std::pair<std::string, std::string>> pairs);
  static GenderLexicon load(const std::filesystem::path& path);
  static GenderLexicon load_default();

  std::optional<std::string_view> counterpart(std::string_view lowercase_word) const;
  const std::vector<std::pair<std::string, std::string>>& pairs() const { return pairs_; }
  bool empty() const { return pairs_.empty(); }

 private:
  std::vector<std::pair<std::string, std::string>> pairs_;
  std::unordered_map<std::string, std::string> map_;
};

/// Swaps every lexicon word, keeping lowercase / Capitalized / UPPER forms.
std::string swap_all_gendered_words(std::string_view text, const GenderLexicon& lexicon);

/// One Bernoulli(probability) draw for the whole text, keyed by `seed`.
std::string swap_gendered_words(std::string_view text, const GenderLexicon& lexicon,
                                double probability, std::uint64_t seed);

}  // namespace moralmatch::extraction
