#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace moralmatch::corpus {

struct Document {
  std::string id;
  std::string author_id;
  std::int64_t created_at = 0;
  std::string title;
  std::string body;
  std::size_t word_count = 0;  // whitespace tokens of body
};

struct Comment {
  std::string id;
  std::string document_id;
  std::string author_id;
  std::string body;
  std::int64_t score = 0;  // upvotes minus downvotes
};

struct BotList {
  std::unordered_set<std::string> user_ids;

  bool contains(std::string_view author_id) const {
    return user_ids.count(std::string(author_id)) > 0;
  }
};

/// Record field names, overridable from the run configuration.
struct SubmissionFields {
  std::string id = "id";
  std::string author = "author";
  std::string created_utc = "created_utc";
  std::string title = "title";
  std::string selftext = "selftext";
};

struct CommentFields {
  std::string id = "id";
  std::string link_id = "link_id";
  std::string author = "author";
  std::string body = "body";
  std::string score = "score";
};

struct LoadOptions {
  SubmissionFields submission_fields;
  CommentFields comment_fields;
  // bodies equal to one of these count as missing
  std::vector<std::string> missing_body_sentinels = {"[deleted]", "[removed]"};
};

struct Diagnostic {
  std::string file;
  std::size_t line = 0;
  std::string message;
};

struct LoadedCorpus {
  std::vector<Document> documents;
  std::vector<Comment> comments;
  std::vector<Diagnostic> errors;
};

std::size_t count_words(std::string_view text);

/// Parses line-delimited JSON submissions and comments. Bad lines are
/// reported in `errors` and skipped; an unreadable file throws.
LoadedCorpus load_corpus(const std::filesystem::path& submissions_path,
                         const std::filesystem::path& comments_path,
                         const LoadOptions& options = {});

/// One user id per line, `#` comments allowed.
BotList load_bot_list(const std::filesystem::path& path);

enum class RemovalReason { bot, title_prefix, too_short, too_long, orphan };
std::string_view to_string(RemovalReason reason);

struct FilterOptions {
  std::size_t min_words = 100;
  std::size_t max_words = 3000;
};

struct FilterReport {
  std::map<RemovalReason, std::size_t> documents_removed;
  std::map<RemovalReason, std::size_t> comments_removed;

  std::size_t total_documents_removed() const;
  std::size_t total_comments_removed() const;
};

struct FilteredCorpus {
  std::vector<Document> documents;
  std::vector<Comment> comments;
  FilterReport report;
};

/// True when the title starts with AITA or WIBTA (case-insensitive, leading
/// whitespace ignored).
bool has_judgment_prefix(std::string_view title);

/// Checks, in order: bot author, title prefix, body length. Comments are
/// dropped for bot authorship, then when their document did not survive.
FilteredCorpus filter_corpus(const std::vector<Document>& documents,
                             const std::vector<Comment>& comments, const BotList& bots,
                             const FilterOptions& options = {});

}  // namespace moralmatch::corpus
