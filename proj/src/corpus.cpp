#include "moralmatch/corpus.hpp"

#include <algorithm>
#include <optional>
#include <json.hpp>

#include "moralmatch/common.hpp"
#include "moralmatch/io.hpp"

namespace moralmatch::corpus {

using nlohmann::json;

std::size_t count_words(std::string_view text) { return io::split_whitespace(text).size(); }

namespace {

struct FieldError {
  std::string message;
};

std::string require_string(const json& rec, const std::string& field) {
  auto it = rec.find(field);
  if (it == rec.end() || it->is_null()) throw FieldError{"missing required field '" + field + "'"};
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<long long>());
  throw FieldError{"field '" + field + "' is not a string"};
}

std::int64_t require_int(const json& rec, const std::string& field) {
  auto it = rec.find(field);
  if (it == rec.end() || it->is_null()) throw FieldError{"missing required field '" + field + "'"};
  if (it->is_number_integer()) return it->get<std::int64_t>();
  if (it->is_number_float()) return static_cast<std::int64_t>(it->get<double>());
  if (it->is_string()) {
    try {
      return static_cast<std::int64_t>(parse_double(it->get<std::string>()));
    } catch (const Error&) {
    }
  }
  throw FieldError{"field '" + field + "' is not a number"};
}

// Reddit link ids carry a type prefix ("t3_") that submission ids do not.
std::string strip_link_prefix(std::string id) {
  if (id.size() > 3 && id[0] == 't' && id[2] == '_') id.erase(0, 3);
  return id;
}

template <typename Parse>
void load_records(const std::filesystem::path& path, std::vector<Diagnostic>& errors,
                  Parse&& parse) {
  const std::string file = path.string();
  io::for_each_line(path, [&](std::size_t line_no, std::string_view line) {
    if (io::trim(line).empty()) return;
    json rec = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (rec.is_discarded() || !rec.is_object()) {
      errors.push_back({file, line_no, "malformed record"});
      return;
    }
    try {
      parse(rec, line_no);
    } catch (const FieldError& e) {
      errors.push_back({file, line_no, e.message});
    }
  });
}

}  // namespace

LoadedCorpus load_corpus(const std::filesystem::path& submissions_path,
                         const std::filesystem::path& comments_path,
                         const LoadOptions& options) {
  LoadedCorpus out;
  std::unordered_set<std::string> seen_docs;
  const auto& sf = options.submission_fields;
  load_records(submissions_path, out.errors, [&](const json& rec, std::size_t line_no) {
    Document doc;
    doc.id = require_string(rec, sf.id);
    doc.author_id = require_string(rec, sf.author);
    doc.created_at = require_int(rec, sf.created_utc);
    doc.title = require_string(rec, sf.title);
    doc.body = require_string(rec, sf.selftext);
    if (io::trim(doc.title).empty()) throw FieldError{"empty title"};
    const auto& sentinels = options.missing_body_sentinels;
    if (std::find(sentinels.begin(), sentinels.end(), io::trim(doc.body)) != sentinels.end())
      throw FieldError{"missing required field '" + sf.selftext + "' (deleted or removed)"};
    if (!seen_docs.insert(doc.id).second) {
      out.errors.push_back({submissions_path.string(), line_no, "duplicate id '" + doc.id + "'"});
      return;
    }
    doc.word_count = count_words(doc.body);
    out.documents.push_back(std::move(doc));
  });

  std::unordered_set<std::string> seen_comments;
  const auto& cf = options.comment_fields;
  load_records(comments_path, out.errors, [&](const json& rec, std::size_t line_no) {
    Comment c;
    c.id = require_string(rec, cf.id);
    c.document_id = strip_link_prefix(require_string(rec, cf.link_id));
    c.author_id = require_string(rec, cf.author);
    c.body = require_string(rec, cf.body);
    c.score = require_int(rec, cf.score);
    if (!seen_comments.insert(c.id).second) {
      out.errors.push_back({comments_path.string(), line_no, "duplicate id '" + c.id + "'"});
      return;
    }
    out.comments.push_back(std::move(c));
  });
  return out;
}

BotList load_bot_list(const std::filesystem::path& path) {
  BotList bots;
  for (auto& id : io::read_list_file(path)) bots.user_ids.insert(std::move(id));
  return bots;
}

std::string_view to_string(RemovalReason reason) {
  switch (reason) {
    case RemovalReason::bot: return "bot";
    case RemovalReason::title_prefix: return "title-prefix";
    case RemovalReason::too_short: return "too-short";
    case RemovalReason::too_long: return "too-long";
    case RemovalReason::orphan: return "orphan";
  }
  return "unknown";
}

std::size_t FilterReport::total_documents_removed() const {
  std::size_t n = 0;
  for (auto& [_, c] : documents_removed) n += c;
  return n;
}

std::size_t FilterReport::total_comments_removed() const {
  std::size_t n = 0;
  for (auto& [_, c] : comments_removed) n += c;
  return n;
}

bool has_judgment_prefix(std::string_view title) {
  title = io::trim(title);
  auto starts = [&](std::string_view prefix) {
    if (title.size() < prefix.size()) return false;
    return io::to_lower(title.substr(0, prefix.size())) == prefix;
  };
  return starts("aita") || starts("wibta");
}

FilteredCorpus filter_corpus(const std::vector<Document>& documents,
                             const std::vector<Comment>& comments, const BotList& bots,
                             const FilterOptions& options) {
  FilteredCorpus out;
  std::unordered_set<std::string> kept;
  for (const auto& doc : documents) {
    std::optional<RemovalReason> reason;
    if (bots.contains(doc.author_id))
      reason = RemovalReason::bot;
    else if (!has_judgment_prefix(doc.title))
      reason = RemovalReason::title_prefix;
    else if (doc.word_count < options.min_words)
      reason = RemovalReason::too_short;
    else if (doc.word_count > options.max_words)
      reason = RemovalReason::too_long;
    if (reason) {
      ++out.report.documents_removed[*reason];
      continue;
    }
    kept.insert(doc.id);
    out.documents.push_back(doc);
  }
  for (const auto& c : comments) {
    if (bots.contains(c.author_id)) {
      ++out.report.comments_removed[RemovalReason::bot];
    } else if (!kept.count(c.document_id)) {
      ++out.report.comments_removed[RemovalReason::orphan];
    } else {
      out.comments.push_back(c);
    }
  }
  return out;
}

}  // namespace moralmatch::corpus
