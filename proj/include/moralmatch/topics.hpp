#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace moralmatch::topics {

using TokenDoc = std::vector<std::int32_t>;

struct Vocabulary {
  std::vector<std::string> terms;  // sorted
  std::vector<std::size_t> doc_freq;

  std::size_t size() const { return terms.size(); }
  std::optional<std::int32_t> index_of(std::string_view term) const;
};

struct VocabularyOptions {
  double max_doc_fraction = 0.5;  // prune terms in more than this share of documents
  std::size_t min_doc_count = 10;  // prune terms in fewer documents than this
};

/// Lowercasing, punctuation stripping, lemma lookup and stopword removal.
class TextNormalizer {
 public:
  TextNormalizer() = default;
  TextNormalizer(std::unordered_set<std::string> stopwords,
                 std::unordered_map<std::string, std::string> stems);

  static TextNormalizer load(const std::filesystem::path& stopword_file,
                             const std::filesystem::path& stem_table);

  std::vector<std::string> tokens(std::string_view text) const;

 private:
  std::unordered_set<std::string> stopwords_;
  std::unordered_map<std::string, std::string> stems_;
};

struct PreprocessedCorpus {
  Vocabulary vocabulary;
  std::vector<TokenDoc> documents;
  std::vector<std::size_t> source_index;  // position of each kept document in the input
  std::size_t excluded_empty = 0;
};

PreprocessedCorpus preprocess(std::span<const std::string> texts, const TextNormalizer& normalizer,
                              const VocabularyOptions& options = {});

/// Maps a new text onto an existing vocabulary; unknown terms are dropped.
TokenDoc encode(const Vocabulary& vocabulary, const TextNormalizer& normalizer,
                std::string_view text);

struct TopicModel {
  int num_topics = 0;
  std::vector<double> alpha;  // per topic
  double beta = 0.01;
  std::size_t vocab_size = 0;
  // word-major: count of word w in topic k at [w * num_topics + k]
  std::vector<std::int64_t> word_topic_counts;
  std::vector<std::int64_t> topic_totals;
  std::uint64_t seed = 0;
  std::vector<std::string> terms;  // optional, for reports and persistence

  std::int64_t count(int k, std::int32_t w) const {
    return word_topic_counts[static_cast<std::size_t>(w) * num_topics + k];
  }
  double phi(int k, std::int32_t w) const {
    return (static_cast<double>(count(k, w)) + beta) /
           (static_cast<double>(topic_totals[k]) + static_cast<double>(vocab_size) * beta);
  }

  void save(const std::filesystem::path& path) const;
  static TopicModel load(const std::filesystem::path& path);
  std::string serialize() const;
  static TopicModel deserialize(std::string_view text);

  friend bool operator==(const TopicModel&, const TopicModel&) = default;
};

struct LdaOptions {
  int num_topics = 6;
  std::optional<double> alpha;  // symmetric; defaults to 50 / K
  double beta = 0.01;
  int iterations = 1000;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct LdaFit {
  TopicModel model;
  std::vector<std::vector<int>> assignments;
  std::vector<std::string> warnings;
};

/// Collapsed Gibbs sampling. Within a sweep each document is resampled
/// against the topic-word counts frozen at the start of the sweep, with random
/// numbers keyed by (document content, token position, sweep), so the result
/// does not depend on document order or thread count.
LdaFit lda_fit(std::span<const TokenDoc> documents, std::size_t vocab_size,
               const LdaOptions& options);

struct InferOptions {
  int burn_in = 100;
  int samples = 20;
  std::uint64_t seed = 0;
};

struct Inference {
  std::vector<double> distribution;
  bool prior_fallback = false;  // no in-vocabulary tokens
};

Inference lda_infer(const TopicModel& model, const TokenDoc& document,
                    const InferOptions& options = {});

/// Document completion: topic weights are inferred from the even token
/// positions of each held-out document and the odd positions are scored.
double perplexity(const TopicModel& model, std::span<const TokenDoc> heldout,
                  const InferOptions& options = {});

struct KScore {
  int num_topics = 0;
  double mean = 0.0;
  double std_error = 0.0;
  std::vector<double> per_fold;
};

struct KSelection {
  int best = 0;
  std::vector<KScore> scores;
};

/// K-fold cross-validated perplexity; ties go to the smaller K.
KSelection select_k(std::span<const TokenDoc> documents, std::size_t vocab_size,
                    std::vector<int> candidates, int folds, const LdaOptions& base,
                    const InferOptions& infer);

inline constexpr int kOtherTopic = -1;

struct TopicAssignment {
  std::string doc_id;
  std::vector<double> distribution;
  int label = kOtherTopic;
  double threshold = 0.4;
};

/// Argmax when it reaches `threshold` (ties to the lower index), else kOtherTopic.
/// Accepts unnormalized weights.
int assign_label(std::span<const double> weights, double threshold);

TopicAssignment assign_topic(const TopicModel& model, std::string doc_id, const TokenDoc& document,
                             double threshold = 0.4, const InferOptions& options = {});

std::vector<std::vector<std::string>> top_words(const TopicModel& model, std::size_t n);

}  // namespace moralmatch::topics
