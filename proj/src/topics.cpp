#include "moralmatch/topics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "moralmatch/common.hpp"
#include "moralmatch/io.hpp"

namespace moralmatch::topics {

std::optional<std::int32_t> Vocabulary::index_of(std::string_view term) const {
  auto it = std::lower_bound(terms.begin(), terms.end(), term);
  if (it == terms.end() || *it != term) return std::nullopt;
  return static_cast<std::int32_t>(it - terms.begin());
}

namespace {

std::string strip_punct_lower(std::string_view w) {
  std::string out;
  for (char ch : w) {
    const auto c = static_cast<unsigned char>(ch);
    if (!std::ispunct(c)) out += static_cast<char>(std::tolower(c));
  }
  return out;
}

}  // namespace

// List entries go through the same punctuation stripping as text, so "don't" matches "dont".
TextNormalizer::TextNormalizer(std::unordered_set<std::string> stopwords,
                               std::unordered_map<std::string, std::string> stems) {
  for (const auto& w : stopwords) stopwords_.insert(strip_punct_lower(w));
  for (const auto& [from, to] : stems) stems_.emplace(strip_punct_lower(from), strip_punct_lower(to));
}

TextNormalizer TextNormalizer::load(const std::filesystem::path& stopword_file,
                                    const std::filesystem::path& stem_table) {
  std::unordered_set<std::string> stop;
  for (auto& w : io::read_list_file(stopword_file)) stop.insert(io::to_lower(w));
  std::unordered_map<std::string, std::string> stems;
  for (const auto& line : io::read_list_file(stem_table)) {
    auto cols = io::split_whitespace(line);
    if (cols.size() != 2) throw Error("stem table " + stem_table.string() + ": bad line '" + line + "'");
    stems.emplace(io::to_lower(cols[0]), io::to_lower(cols[1]));
  }
  return TextNormalizer(std::move(stop), std::move(stems));
}

std::vector<std::string> TextNormalizer::tokens(std::string_view text) const {
  std::vector<std::string> out;
  std::string cur;
  bool has_digit = false;
  auto flush = [&] {
    if (cur.size() >= 2 && !has_digit && !stopwords_.count(cur)) {
      auto it = stems_.find(cur);
      std::string lemma = it == stems_.end() ? cur : it->second;
      if (!stopwords_.count(lemma)) out.push_back(std::move(lemma));
    }
    cur.clear();
    has_digit = false;
  };
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      if (std::isdigit(c)) has_digit = true;
      cur += static_cast<char>(std::tolower(c));
    } else if (!std::ispunct(c)) {
      flush();
    }
  }
  flush();
  return out;
}

PreprocessedCorpus preprocess(std::span<const std::string> texts, const TextNormalizer& normalizer,
                              const VocabularyOptions& options) {
  std::vector<std::vector<std::string>> tokenized;
  tokenized.reserve(texts.size());
  std::map<std::string, std::size_t> df;
  for (const auto& text : texts) {
    tokenized.push_back(normalizer.tokens(text));
    std::vector<std::string> uniq = tokenized.back();
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    for (auto& t : uniq) ++df[t];
  }
  PreprocessedCorpus out;
  const double max_df = options.max_doc_fraction * static_cast<double>(texts.size());
  for (const auto& [term, count] : df) {  // std::map keeps terms sorted
    if (static_cast<double>(count) > max_df || count < options.min_doc_count) continue;
    out.vocabulary.terms.push_back(term);
    out.vocabulary.doc_freq.push_back(count);
  }
  for (std::size_t d = 0; d < tokenized.size(); ++d) {
    TokenDoc doc;
    for (const auto& t : tokenized[d])
      if (auto id = out.vocabulary.index_of(t)) doc.push_back(*id);
    if (doc.empty()) {
      ++out.excluded_empty;
      continue;
    }
    out.documents.push_back(std::move(doc));
    out.source_index.push_back(d);
  }
  return out;
}

TokenDoc encode(const Vocabulary& vocabulary, const TextNormalizer& normalizer,
                std::string_view text) {
  TokenDoc doc;
  for (const auto& t : normalizer.tokens(text))
    if (auto id = vocabulary.index_of(t)) doc.push_back(*id);
  return doc;
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t content_key(const TokenDoc& doc) {
  std::uint64_t h = 0x84222325cbf29ce4ULL ^ doc.size();
  for (auto w : doc) h = mix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(w)));
  return h;
}

int sample_discrete(std::vector<double>& cumulative, double u) {
  const double target = u * cumulative.back();
  auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
  if (it == cumulative.end()) --it;
  return static_cast<int>(it - cumulative.begin());
}

std::uint64_t sweep_key(std::uint64_t seed, std::uint64_t doc_key, std::uint64_t sweep) {
  return derive_seed(seed, {doc_key, sweep});
}

double token_uniform(std::uint64_t key, std::size_t position) {
  return unit_interval(key + 0x9e3779b97f4a7c15ULL * (position + 1));
}

void rebuild_counts(TopicModel& model, std::span<const TokenDoc> docs,
                    const std::vector<std::vector<int>>& z) {
  std::fill(model.word_topic_counts.begin(), model.word_topic_counts.end(), 0);
  std::fill(model.topic_totals.begin(), model.topic_totals.end(), 0);
  const auto K = static_cast<std::size_t>(model.num_topics);
  for (std::size_t d = 0; d < docs.size(); ++d) {
    for (std::size_t i = 0; i < docs[d].size(); ++i) {
      ++model.word_topic_counts[static_cast<std::size_t>(docs[d][i]) * K + z[d][i]];
      ++model.topic_totals[z[d][i]];
    }
  }
}

}  // namespace

LdaFit lda_fit(std::span<const TokenDoc> documents, std::size_t vocab_size,
               const LdaOptions& options) {
  const int K = options.num_topics;
  if (K < 1) throw Error("lda_fit: number of topics must be at least 1");
  if (options.iterations < 1) throw Error("lda_fit: iterations must be at least 1");
  if (vocab_size == 0) throw Error("lda_fit: empty vocabulary");
  if (documents.empty()) throw Error("lda_fit: empty corpus");
  for (const auto& doc : documents)
    for (auto w : doc)
      if (w < 0 || static_cast<std::size_t>(w) >= vocab_size)
        throw Error("lda_fit: token id out of vocabulary range");

  LdaFit fit;
  if (static_cast<std::size_t>(K) > documents.size())
    fit.warnings.push_back("more topics (" + std::to_string(K) + ") than documents (" +
                           std::to_string(documents.size()) + ")");
  TopicModel& model = fit.model;
  model.num_topics = K;
  model.alpha.assign(K, options.alpha.value_or(50.0 / K));
  model.beta = options.beta;
  model.vocab_size = vocab_size;
  model.seed = options.seed;
  model.word_topic_counts.assign(vocab_size * K, 0);
  model.topic_totals.assign(K, 0);

  std::vector<std::uint64_t> keys(documents.size());
  auto& z = fit.assignments;
  z.resize(documents.size());
  for (std::size_t d = 0; d < documents.size(); ++d) {
    keys[d] = content_key(documents[d]);
    const auto key = sweep_key(options.seed, keys[d], 0);
    z[d].resize(documents[d].size());
    for (std::size_t i = 0; i < documents[d].size(); ++i)
      z[d][i] = std::min(K - 1, static_cast<int>(token_uniform(key, i) * K));
  }
  rebuild_counts(model, documents, z);

  const double vbeta = static_cast<double>(vocab_size) * options.beta;
  const auto& nkw = model.word_topic_counts;
  const auto& nk = model.topic_totals;

  auto sweep_docs = [&](std::size_t begin, std::size_t end, int sweep) {
    std::vector<double> cumulative(K);
    std::vector<std::int64_t> ndk(K);
    for (std::size_t d = begin; d < end; ++d) {
      const auto& doc = documents[d];
      std::fill(ndk.begin(), ndk.end(), 0);
      for (int t : z[d]) ++ndk[t];
      const auto key = sweep_key(options.seed, keys[d], static_cast<std::uint64_t>(sweep));
      for (std::size_t i = 0; i < doc.size(); ++i) {
        const int old = z[d][i];
        const std::size_t row = static_cast<std::size_t>(doc[i]) * K;
        --ndk[old];
        double acc = 0.0;
        for (int k = 0; k < K; ++k) {
          const double own = k == old ? 1.0 : 0.0;
          acc += (static_cast<double>(ndk[k]) + model.alpha[k]) *
                 (static_cast<double>(nkw[row + k]) - own + options.beta) /
                 (static_cast<double>(nk[k]) - own + vbeta);
          cumulative[k] = acc;
        }
        const int t = sample_discrete(cumulative, token_uniform(key, i));
        z[d][i] = t;
        ++ndk[t];
      }
    }
  };

  const unsigned threads = std::max(1u, options.threads);
  for (int sweep = 1; sweep <= options.iterations; ++sweep) {
    if (threads == 1) {
      sweep_docs(0, documents.size(), sweep);
    } else {
      std::vector<std::jthread> pool;
      const std::size_t chunk = (documents.size() + threads - 1) / threads;
      for (unsigned t = 0; t < threads; ++t) {
        const std::size_t b = std::min(documents.size(), t * chunk);
        const std::size_t e = std::min(documents.size(), b + chunk);
        if (b < e) pool.emplace_back(sweep_docs, b, e, sweep);
      }
    }
    rebuild_counts(model, documents, z);
  }
  return fit;
}

Inference lda_infer(const TopicModel& model, const TokenDoc& document,
                    const InferOptions& options) {
  const int K = model.num_topics;
  Inference out;
  const double alpha_sum = std::accumulate(model.alpha.begin(), model.alpha.end(), 0.0);
  TokenDoc doc;
  for (auto w : document)
    if (w >= 0 && static_cast<std::size_t>(w) < model.vocab_size) doc.push_back(w);
  if (doc.empty()) {
    out.prior_fallback = true;
    for (double a : model.alpha) out.distribution.push_back(a / alpha_sum);
    return out;
  }
  // phi restricted to this document's tokens
  std::vector<double> phi(doc.size() * K);
  for (std::size_t i = 0; i < doc.size(); ++i)
    for (int k = 0; k < K; ++k) phi[i * K + k] = model.phi(k, doc[i]);

  const std::uint64_t doc_key = content_key(doc);
  std::vector<int> z(doc.size());
  std::vector<std::int64_t> ndk(K, 0);
  {
    const auto key = sweep_key(options.seed, doc_key, 0);
    for (std::size_t i = 0; i < doc.size(); ++i) {
      z[i] = std::min(K - 1, static_cast<int>(token_uniform(key, i) * K));
      ++ndk[z[i]];
    }
  }
  std::vector<double> cumulative(K);
  std::vector<double> theta(K, 0.0);
  const int total_sweeps = options.burn_in + std::max(1, options.samples);
  const double denom = static_cast<double>(doc.size()) + alpha_sum;
  for (int sweep = 1; sweep <= total_sweeps; ++sweep) {
    const auto key = sweep_key(options.seed, doc_key, static_cast<std::uint64_t>(sweep));
    for (std::size_t i = 0; i < doc.size(); ++i) {
      --ndk[z[i]];
      double acc = 0.0;
      for (int k = 0; k < K; ++k) {
        acc += (static_cast<double>(ndk[k]) + model.alpha[k]) * phi[i * K + k];
        cumulative[k] = acc;
      }
      z[i] = sample_discrete(cumulative, token_uniform(key, i));
      ++ndk[z[i]];
    }
    if (sweep > options.burn_in)
      for (int k = 0; k < K; ++k) theta[k] += (static_cast<double>(ndk[k]) + model.alpha[k]) / denom;
  }
  const double norm = std::accumulate(theta.begin(), theta.end(), 0.0);
  for (double& t : theta) t /= norm;
  out.distribution = std::move(theta);
  return out;
}

double perplexity(const TopicModel& model, std::span<const TokenDoc> heldout,
                  const InferOptions& options) {
  double log_lik = 0.0;
  std::size_t n_tokens = 0;
  // document completion: theta from the even positions, scored on the odd ones
  for (const auto& doc : heldout) {
    TokenDoc observed, scored;
    for (std::size_t i = 0; i < doc.size(); ++i) (i % 2 == 0 && doc.size() > 1 ? observed : scored).push_back(doc[i]);
    auto theta = lda_infer(model, observed, options).distribution;
    for (auto w : scored) {
      if (w < 0 || static_cast<std::size_t>(w) >= model.vocab_size) continue;
      double p = 0.0;
      for (int k = 0; k < model.num_topics; ++k) p += theta[k] * model.phi(k, w);
      log_lik += std::log(p);
      ++n_tokens;
    }
  }
  if (n_tokens == 0) throw Error("perplexity: held-out set has no in-vocabulary tokens");
  return std::exp(-log_lik / static_cast<double>(n_tokens));
}

KSelection select_k(std::span<const TokenDoc> documents, std::size_t vocab_size,
                    std::vector<int> candidates, int folds, const LdaOptions& base,
                    const InferOptions& infer) {
  if (candidates.empty()) throw Error("select_k: no candidate topic counts");
  if (folds < 2) throw Error("select_k: need at least 2 folds");
  if (documents.size() < static_cast<std::size_t>(folds))
    throw Error("select_k: fewer documents than folds");
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  std::vector<std::size_t> order(documents.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(base.seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> fold_of(documents.size());
  for (std::size_t i = 0; i < order.size(); ++i) fold_of[order[i]] = static_cast<int>(i % folds);

  KSelection out;
  for (int K : candidates) {
    KScore score;
    score.num_topics = K;
    for (int f = 0; f < folds; ++f) {
      std::vector<TokenDoc> train, test;
      for (std::size_t d = 0; d < documents.size(); ++d)
        (fold_of[d] == f ? test : train).push_back(documents[d]);
      LdaOptions opts = base;
      opts.num_topics = K;
      auto fit = lda_fit(train, vocab_size, opts);
      score.per_fold.push_back(perplexity(fit.model, test, infer));
    }
    const double n = static_cast<double>(folds);
    score.mean = std::accumulate(score.per_fold.begin(), score.per_fold.end(), 0.0) / n;
    double ss = 0.0;
    for (double p : score.per_fold) ss += (p - score.mean) * (p - score.mean);
    score.std_error = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    out.scores.push_back(std::move(score));
  }
  auto best = std::min_element(out.scores.begin(), out.scores.end(),
                               [](const KScore& a, const KScore& b) { return a.mean < b.mean; });
  out.best = best->num_topics;
  return out;
}

int assign_label(std::span<const double> weights, double threshold) {
  if (weights.empty()) return kOtherTopic;
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0)) return kOtherTopic;
  auto it = std::max_element(weights.begin(), weights.end());
  return *it / total >= threshold ? static_cast<int>(it - weights.begin()) : kOtherTopic;
}

TopicAssignment assign_topic(const TopicModel& model, std::string doc_id, const TokenDoc& document,
                             double threshold, const InferOptions& options) {
  TopicAssignment out;
  out.doc_id = std::move(doc_id);
  out.distribution = lda_infer(model, document, options).distribution;
  out.threshold = threshold;
  out.label = assign_label(out.distribution, threshold);
  return out;
}

std::vector<std::vector<std::string>> top_words(const TopicModel& model, std::size_t n) {
  std::vector<std::vector<std::string>> out(model.num_topics);
  for (int k = 0; k < model.num_topics; ++k) {
    std::vector<std::int32_t> ids(model.vocab_size);
    std::iota(ids.begin(), ids.end(), 0);
    std::stable_sort(ids.begin(), ids.end(),
                     [&](auto a, auto b) { return model.count(k, a) > model.count(k, b); });
    for (std::size_t i = 0; i < std::min(n, ids.size()); ++i)
      out[k].push_back(model.terms.empty() ? std::to_string(ids[i]) : model.terms[ids[i]]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// persistence

namespace {
constexpr std::string_view kModelMagic = "moralmatch-topic-model";
constexpr int kModelVersion = 1;
}  // namespace

std::string TopicModel::serialize() const {
  std::ostringstream out;
  out << kModelMagic << ' ' << kModelVersion << '\n';
  out << "K " << num_topics << '\n';
  out << "V " << vocab_size << '\n';
  out << "beta " << format_double(beta) << '\n';
  out << "seed " << seed << '\n';
  out << "alpha";
  for (double a : alpha) out << ' ' << format_double(a);
  out << '\n';
  out << "terms " << terms.size() << '\n';
  for (const auto& t : terms) out << t << '\n';
  out << "counts\n";
  for (int k = 0; k < num_topics; ++k) {
    for (std::size_t w = 0; w < vocab_size; ++w) {
      if (w) out << ' ';
      out << count(k, static_cast<std::int32_t>(w));
    }
    out << '\n';
  }
  return out.str();
}

TopicModel TopicModel::deserialize(std::string_view text) {
  std::istringstream in{std::string(text)};
  auto fail = [](const std::string& what) -> TopicModel {
    throw Error("topic model: " + what);
  };
  std::string magic, key;
  int version = 0;
  if (!(in >> magic >> version) || magic != kModelMagic) return fail("bad header");
  if (version != kModelVersion) return fail("unsupported version " + std::to_string(version));
  TopicModel m;
  std::string num;
  if (!(in >> key >> m.num_topics) || key != "K" || m.num_topics < 1) return fail("bad K");
  if (!(in >> key >> m.vocab_size) || key != "V") return fail("bad V");
  if (!(in >> key >> num) || key != "beta") return fail("bad beta");
  m.beta = parse_double(num);
  if (!(in >> key >> m.seed) || key != "seed") return fail("bad seed");
  if (!(in >> key) || key != "alpha") return fail("bad alpha");
  for (int k = 0; k < m.num_topics; ++k) {
    if (!(in >> num)) return fail("bad alpha");
    m.alpha.push_back(parse_double(num));
  }
  std::size_t n_terms = 0;
  if (!(in >> key >> n_terms) || key != "terms") return fail("bad terms");
  if (n_terms != 0 && n_terms != m.vocab_size) return fail("term count does not match V");
  m.terms.resize(n_terms);
  for (auto& t : m.terms)
    if (!(in >> t)) return fail("truncated terms");
  if (!(in >> key) || key != "counts") return fail("missing counts");
  m.word_topic_counts.assign(m.vocab_size * m.num_topics, 0);
  m.topic_totals.assign(m.num_topics, 0);
  for (int k = 0; k < m.num_topics; ++k) {
    for (std::size_t w = 0; w < m.vocab_size; ++w) {
      std::int64_t c = 0;
      if (!(in >> c) || c < 0) return fail("bad count");
      m.word_topic_counts[w * m.num_topics + k] = c;
      m.topic_totals[k] += c;
    }
  }
  return m;
}

void TopicModel::save(const std::filesystem::path& path) const {
  io::write_file_atomic(path, serialize());
}

TopicModel TopicModel::load(const std::filesystem::path& path) {
  return deserialize(io::read_file(path));
}

}  // namespace moralmatch::topics
