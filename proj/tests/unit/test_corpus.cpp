#include <doctest.h>

#include "../support/tempdir.hpp"
#include "moralmatch/common.hpp"
#include "moralmatch/corpus.hpp"
#include "moralmatch/io.hpp"

using namespace moralmatch;
using namespace moralmatch::corpus;
using testing_support::TempDir;

namespace {

std::string words(std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? " w" : "w") + std::to_string(i);
  return s;
}

Document doc(std::string id, std::string title, std::size_t n_words, std::string author = "human") {
  Document d;
  d.id = std::move(id);
  d.author_id = std::move(author);
  d.title = std::move(title);
  d.body = words(n_words);
  d.word_count = n_words;
  return d;
}

Comment comment(std::string id, std::string doc_id, std::string author = "reader") {
  return {std::move(id), std::move(doc_id), std::move(author), "NTA", 5};
}

}  // namespace

TEST_CASE("load_corpus: empty files give nothing and no errors") {
  TempDir dir;
  io::write_file_atomic(dir / "s.jsonl", "");
  io::write_file_atomic(dir / "c.jsonl", "");
  const auto c = load_corpus(dir / "s.jsonl", dir / "c.jsonl");
  CHECK(c.documents.empty());
  CHECK(c.comments.empty());
  CHECK(c.errors.empty());
}

TEST_CASE("load_corpus: one record") {
  TempDir dir;
  io::write_file_atomic(dir / "s.jsonl",
                        R"({"id":"a1","author":"u","created_utc":1600000000,"title":"AITA for x?","selftext":"one two three"})"
                        "\n");
  io::write_file_atomic(dir / "c.jsonl", R"({"id":"c1","link_id":"t3_a1","author":"v","body":"NTA","score":-3})" "\n");
  const auto c = load_corpus(dir / "s.jsonl", dir / "c.jsonl");
  REQUIRE(c.documents.size() == 1);
  CHECK(c.documents[0].id == "a1");
  CHECK(c.documents[0].created_at == 1600000000);
  CHECK(c.documents[0].word_count == 3);
  REQUIRE(c.comments.size() == 1);
  CHECK(c.comments[0].document_id == "a1");
  CHECK(c.comments[0].score == -3);
}

TEST_CASE("load_corpus: a record missing its body is reported with its line") {
  TempDir dir;
  io::write_file_atomic(dir / "s.jsonl",
                        R"({"id":"a","author":"u","created_utc":1,"title":"AITA a","selftext":"x"})" "\n"
                        R"({"id":"b","author":"u","created_utc":2,"title":"AITA b"})" "\n"
                        R"({"id":"c","author":"u","created_utc":3,"title":"AITA c","selftext":"y"})" "\n");
  io::write_file_atomic(dir / "c.jsonl", "");
  const auto c = load_corpus(dir / "s.jsonl", dir / "c.jsonl");
  CHECK(c.documents.size() == 2);
  REQUIRE(c.errors.size() == 1);
  CHECK(c.errors[0].line == 2);
  CHECK(c.errors[0].message.find("selftext") != std::string::npos);
}

TEST_CASE("load_corpus: malformed lines, deleted bodies, duplicates, custom field names") {
  TempDir dir;
  io::write_file_atomic(dir / "s.jsonl",
                        R"({"sid":"a","who":"u","ts":1,"head":"AITA a","text":"x"})" "\n"
                        "{not json\n"
                        R"({"sid":"b","who":"u","ts":1,"head":"AITA b","text":"[deleted]"})" "\n"
                        R"({"sid":"a","who":"u","ts":1,"head":"AITA again","text":"z"})" "\n");
  io::write_file_atomic(dir / "c.jsonl", "");
  LoadOptions o;
  o.submission_fields = {"sid", "who", "ts", "head", "text"};
  const auto c = load_corpus(dir / "s.jsonl", dir / "c.jsonl", o);
  REQUIRE(c.documents.size() == 1);
  CHECK(c.documents[0].title == "AITA a");
  REQUIRE(c.errors.size() == 3);
  CHECK(c.errors[0].line == 2);
  CHECK(c.errors[1].line == 3);
  CHECK(c.errors[2].line == 4);
  CHECK(c.errors[2].message.find("duplicate") != std::string::npos);
}

TEST_CASE("load_corpus: unreadable file is fatal") {
  TempDir dir;
  CHECK_THROWS_AS(load_corpus(dir / "nope.jsonl", dir / "nope2.jsonl"), Error);
}

TEST_CASE("bot list: exact ids, comments ignored") {
  TempDir dir;
  io::write_file_atomic(dir / "bots.txt", "# bots\nAutoModerator\nsome_bot  # flagged\n");
  const auto bots = load_bot_list(dir / "bots.txt");
  CHECK(bots.contains("AutoModerator"));
  CHECK(bots.contains("some_bot"));
  CHECK_FALSE(bots.contains("automoderator"));
}

TEST_CASE("title prefix check") {
  CHECK(has_judgment_prefix("AITA for leaving?"));
  CHECK(has_judgment_prefix("  aita for leaving?"));
  CHECK(has_judgment_prefix("WIBTA if I left"));
  CHECK(has_judgment_prefix("Wibta if I left"));
  CHECK_FALSE(has_judgment_prefix("Story time"));
  CHECK_FALSE(has_judgment_prefix("Am I the asshole"));
}

TEST_CASE("filter_corpus examples") {
  BotList bots;
  bots.user_ids = {"bot"};
  const std::vector<Document> docs{doc("keep", "AITA for leaving?", 150), doc("story", "Story time", 150),
                                   doc("short", "AITA short", 99),         doc("long", "AITA long", 3001),
                                   doc("edge_lo", "AITA lo", 100),         doc("edge_hi", "AITA hi", 3000),
                                   doc("botdoc", "Story by a bot", 10, "bot")};
  const std::vector<Comment> comments{comment("c1", "keep"), comment("c2", "story"), comment("c3", "keep", "bot"),
                                      comment("c4", "gone")};
  const auto f = filter_corpus(docs, comments, bots);
  std::vector<std::string> kept;
  for (const auto& d : f.documents) kept.push_back(d.id);
  CHECK(kept == std::vector<std::string>{"keep", "edge_lo", "edge_hi"});
  REQUIRE(f.comments.size() == 1);
  CHECK(f.comments[0].id == "c1");
  // each removal attributed to the first failing check: bot, title, length
  CHECK(f.report.documents_removed.at(RemovalReason::bot) == 1);
  CHECK(f.report.documents_removed.at(RemovalReason::title_prefix) == 1);
  CHECK(f.report.documents_removed.at(RemovalReason::too_short) == 1);
  CHECK(f.report.documents_removed.at(RemovalReason::too_long) == 1);
  CHECK(f.report.comments_removed.at(RemovalReason::bot) == 1);
  CHECK(f.report.comments_removed.at(RemovalReason::orphan) == 2);
  CHECK(docs.size() - f.documents.size() == f.report.total_documents_removed());
  CHECK(comments.size() - f.comments.size() == f.report.total_comments_removed());

  SUBCASE("idempotent and never orphaned") {
    const auto g = filter_corpus(f.documents, f.comments, bots);
    CHECK(g.documents.size() == f.documents.size());
    CHECK(g.comments.size() == f.comments.size());
    CHECK(g.report.total_documents_removed() == 0);
    CHECK(g.report.total_comments_removed() == 0);
    for (const auto& c : g.comments) {
      bool found = false;
      for (const auto& d : g.documents) found = found || d.id == c.document_id;
      CHECK(found);
    }
  }
}

TEST_CASE("word count is whitespace tokens of the body") {
  CHECK(count_words("") == 0);
  CHECK(count_words("  one\ttwo\nthree  ") == 3);
}
