#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "../support/corpora.hpp"
#include "../support/tempdir.hpp"
#include "moralmatch/common.hpp"
#include "moralmatch/topics.hpp"

using namespace moralmatch;
using namespace moralmatch::topics;

namespace {

TopicModel uniform_model(std::size_t v) {
  TopicModel m;
  m.num_topics = 1;
  m.alpha = {1.0};
  m.beta = 1.0;
  m.vocab_size = v;
  m.word_topic_counts.assign(v, 0);
  m.topic_totals = {0};
  return m;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST_CASE("normalizer: lowercase, punctuation, stems, stopwords") {
  const TextNormalizer n({"the"}, {{"cats", "cat"}});
  CHECK(n.tokens("The cats. The cats!") == std::vector<std::string>{"cat", "cat"});
  CHECK(n.tokens("Don't STOP-me") == std::vector<std::string>{"dont", "stopme"});
}

TEST_CASE("vocabulary pruning by document frequency") {
  const TextNormalizer n;
  std::vector<std::string> texts;
  // "common" in 51 of 100 docs, "rare" in 9, "kept" in 10, "half" in exactly 50
  for (int i = 0; i < 100; ++i) {
    std::string t = "base" + std::to_string(i % 4);
    if (i < 51) t += " common";
    if (i < 9) t += " rare";
    if (i < 10) t += " kept";
    if (i >= 50) t += " half";
    texts.push_back(t);
  }
  const auto p = preprocess(texts, n, {0.5, 10});
  CHECK_FALSE(p.vocabulary.index_of("common").has_value());
  CHECK_FALSE(p.vocabulary.index_of("rare").has_value());
  CHECK(p.vocabulary.index_of("kept").has_value());
  CHECK(p.vocabulary.index_of("half").has_value());
  CHECK(std::is_sorted(p.vocabulary.terms.begin(), p.vocabulary.terms.end()));
  for (std::size_t i = 0; i < p.vocabulary.size(); ++i) {
    CHECK(p.vocabulary.doc_freq[i] >= 10);
    CHECK(p.vocabulary.doc_freq[i] <= 50);
  }
}

TEST_CASE("documents left without tokens are excluded and counted") {
  const TextNormalizer n({"the"}, {});
  std::vector<std::string> texts(20, "apple banana");
  texts.push_back("the the");
  const auto p = preprocess(texts, n, {1.0, 1});
  CHECK(p.documents.size() == 20);
  CHECK(p.excluded_empty == 1);
  CHECK(p.source_index.back() == 19);
}

TEST_CASE("lda: deterministic, count-consistent, order independent") {
  const auto c = corpora::two_vocabulary(40, 60, 20, 1);
  LdaOptions o;
  o.num_topics = 3;
  o.iterations = 30;
  o.seed = 11;
  const auto a = lda_fit(c.docs, c.vocab_size, o);
  const auto b = lda_fit(c.docs, c.vocab_size, o);
  CHECK(a.model == b.model);

  std::vector<std::int64_t> freq(c.vocab_size, 0);
  for (const auto& d : c.docs)
    for (auto w : d) ++freq[static_cast<std::size_t>(w)];
  for (std::size_t w = 0; w < c.vocab_size; ++w) {
    std::int64_t s = 0;
    for (int k = 0; k < 3; ++k) s += a.model.count(k, static_cast<std::int32_t>(w));
    CHECK(s == freq[w]);
  }
  for (int k = 0; k < 3; ++k) {
    std::int64_t s = 0;
    for (std::size_t w = 0; w < c.vocab_size; ++w) s += a.model.count(k, static_cast<std::int32_t>(w));
    CHECK(s == a.model.topic_totals[static_cast<std::size_t>(k)]);
  }

  auto reversed = c.docs;
  std::reverse(reversed.begin(), reversed.end());
  CHECK(lda_fit(reversed, c.vocab_size, o).model.word_topic_counts == a.model.word_topic_counts);

  o.threads = 3;
  CHECK(lda_fit(c.docs, c.vocab_size, o).model == a.model);
}

TEST_CASE("lda: one topic gives the degenerate simplex") {
  const auto c = corpora::two_vocabulary(10, 20, 5, 2);
  LdaOptions o;
  o.num_topics = 1;
  o.iterations = 5;
  const auto fit = lda_fit(c.docs, c.vocab_size, o);
  for (const auto& d : c.docs) CHECK(lda_infer(fit.model, d).distribution == std::vector<double>{1.0});
}

TEST_CASE("lda: errors and warnings") {
  const auto c = corpora::two_vocabulary(3, 10, 5, 3);
  LdaOptions o;
  o.num_topics = 5;
  o.iterations = 2;
  CHECK_FALSE(lda_fit(c.docs, c.vocab_size, o).warnings.empty());
  CHECK_THROWS_AS(lda_fit(c.docs, 0, o), Error);
  CHECK_THROWS_AS(lda_fit({}, c.vocab_size, o), Error);
}

TEST_CASE("lda: separable corpus is recovered") {
  const auto c = corpora::two_vocabulary(200, 400, 50, 4);
  LdaOptions o;
  o.num_topics = 2;
  o.iterations = 200;
  o.seed = 5;
  const auto fit = lda_fit(c.docs, c.vocab_size, o);
  InferOptions io{100, 20, 9};
  int separated = 0;
  std::vector<int> topic_of_source(2, -1);
  for (std::size_t d = 0; d < c.docs.size(); ++d) {
    const auto dist = lda_infer(fit.model, c.docs[d], io).distribution;
    CHECK(sum(dist) == doctest::Approx(1.0).epsilon(1e-9));
    const int arg = dist[0] > dist[1] ? 0 : 1;
    if (dist[static_cast<std::size_t>(arg)] > 0.9) {
      if (topic_of_source[static_cast<std::size_t>(c.source[d])] < 0) topic_of_source[static_cast<std::size_t>(c.source[d])] = arg;
      separated += topic_of_source[static_cast<std::size_t>(c.source[d])] == arg;
    }
  }
  CHECK(separated >= 190);
  CHECK(topic_of_source[0] != topic_of_source[1]);

  // a document made only of topic-0 words
  TokenDoc pure;
  for (int i = 0; i < 400; ++i) pure.push_back(i % 50);
  const auto dist = lda_infer(fit.model, pure, io).distribution;
  CHECK(dist[static_cast<std::size_t>(topic_of_source[0])] > 0.9);
}

TEST_CASE("inference: empty document falls back to the prior") {
  auto m = uniform_model(10);
  m.num_topics = 2;
  m.alpha = {1.0, 3.0};
  m.word_topic_counts.assign(20, 0);
  m.topic_totals = {0, 0};
  const auto inf = lda_infer(m, {});
  CHECK(inf.prior_fallback);
  CHECK(inf.distribution[0] == doctest::Approx(0.25));
  CHECK(inf.distribution[1] == doctest::Approx(0.75));
}

TEST_CASE("perplexity: uniform model on uniform data gives V") {
  const std::size_t v = 500;
  const auto m = uniform_model(v);
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::int32_t> w(0, static_cast<std::int32_t>(v) - 1);
  std::vector<TokenDoc> held(500);
  for (auto& d : held)
    for (int i = 0; i < 100; ++i) d.push_back(w(rng));
  const double p = perplexity(m, held);
  CHECK(std::abs(p - static_cast<double>(v)) < 0.05 * static_cast<double>(v));
  CHECK_THROWS_AS(perplexity(m, std::vector<TokenDoc>{}), Error);
}

TEST_CASE("perplexity: at least one, and lower on real than on scrambled text") {
  const auto c = corpora::two_vocabulary(60, 80, 20, 6);
  LdaOptions o;
  o.num_topics = 2;
  o.iterations = 50;
  const auto fit = lda_fit(c.docs, c.vocab_size, o);
  // scramble: each document mixes both vocabularies
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::int32_t> any(0, static_cast<std::int32_t>(c.vocab_size) - 1);
  auto scrambled = c.docs;
  for (auto& d : scrambled)
    for (auto& w : d) w = any(rng);
  const double real = perplexity(fit.model, c.docs);
  const double fake = perplexity(fit.model, scrambled);
  CHECK(real >= 1.0);
  CHECK(real <= fake);
}

TEST_CASE("select_k") {
  const auto c = corpora::two_vocabulary(100, 200, 30, 7);
  LdaOptions base;
  base.iterations = 60;
  base.seed = 3;
  const InferOptions inf{30, 10, 4};
  const auto one = select_k(c.docs, c.vocab_size, {6}, 5, base, inf);
  CHECK(one.best == 6);
  const auto a = select_k(c.docs, c.vocab_size, {2, 4}, 5, base, inf);
  const auto b = select_k(c.docs, c.vocab_size, {2, 4}, 5, base, inf);
  CHECK(a.best == b.best);
  REQUIRE(a.scores.size() == 2);
  CHECK(a.scores[0].mean == b.scores[0].mean);
  CHECK(a.scores[0].per_fold.size() == 5);
  // the held-out tokens are not the ones the topic weights were inferred from,
  // so extra topics that only split a vocabulary do not pay off
  const auto big = corpora::two_vocabulary(200, 400, 50, 7);
  CHECK(select_k(big.docs, big.vocab_size, {2, 4, 8}, 5, base, inf).best == 2);
  CHECK_THROWS_AS(select_k(c.docs, c.vocab_size, {2}, 1, base, inf), Error);
}

TEST_CASE("topic labels") {
  const std::vector<double> a{0.45, 0.30, 0.25};
  CHECK(assign_label(a, 0.4) == 0);
  const std::vector<double> b{0.35, 0.33, 0.32};
  CHECK(assign_label(b, 0.4) == kOtherTopic);
  CHECK(assign_label(b, 0.0) == 0);
  const std::vector<double> tie{0.5, 0.5};
  CHECK(assign_label(tie, 0.4) == 0);
  const std::vector<double> scaled{4.5, 3.0, 2.5};
  CHECK(assign_label(scaled, 0.4) == 0);
  const std::vector<double> scaled_b{35, 33, 32};
  CHECK(assign_label(scaled_b, 0.4) == kOtherTopic);
}

TEST_CASE("topic model persistence is exact") {
  const auto c = corpora::two_vocabulary(20, 30, 10, 8);
  LdaOptions o;
  o.num_topics = 2;
  o.iterations = 10;
  o.alpha = 0.3;
  auto m = lda_fit(c.docs, c.vocab_size, o).model;
  for (std::size_t i = 0; i < c.vocab_size; ++i) m.terms.push_back("t" + std::to_string(i));
  CHECK(TopicModel::deserialize(m.serialize()) == m);
  testing_support::TempDir dir;
  m.save(dir / "m.txt");
  CHECK(TopicModel::load(dir / "m.txt") == m);
  CHECK_THROWS_AS(TopicModel::deserialize("garbage"), Error);
  const auto words = top_words(m, 3);
  CHECK(words.size() == 2);
  CHECK(words[0].size() == 3);
}
