#include "moralmatch/config.hpp"

#include <set>

#include "moralmatch/common.hpp"
#include "moralmatch/io.hpp"

namespace moralmatch::config {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw Error("config: " + where() + " must be an object");
  }

  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, _] : node_.items())
      if (!known_.count(key)) throw Error("config: unknown key '" + child(key) + "'");
  }

  bool has(const std::string& key) {
    known_.insert(key);
    return node_.contains(key) && !node_.at(key).is_null();
  }

  Section section(const std::string& key) {
    known_.insert(key);
    static const json empty = json::object();
    return Section(node_.contains(key) ? node_.at(key) : empty, child(key));
  }

  void read(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const auto& v = node_.at(key);
    if (!v.is_string()) fail(key, "a string");
    out = v.get<std::string>();
  }
  void read(const std::string& key, bool& out) {
    if (!has(key)) return;
    const auto& v = node_.at(key);
    if (!v.is_boolean()) fail(key, "true or false");
    out = v.get<bool>();
  }
  void read(const std::string& key, double& out) {
    if (!has(key)) return;
    const auto& v = node_.at(key);
    if (!v.is_number()) fail(key, "a number");
    out = v.get<double>();
  }
  void read(const std::string& key, std::optional<double>& out) {
    if (!has(key)) return;
    double v = 0;
    read(key, v);
    out = v;
  }
  template <typename Int>
    requires std::is_integral_v<Int>
  void read(const std::string& key, Int& out) {
    if (!has(key)) return;
    const auto& v = node_.at(key);
    if (!v.is_number_integer()) fail(key, "an integer");
    if constexpr (std::is_unsigned_v<Int>) {
      if (v.is_number_unsigned() || v.get<long long>() >= 0)
        out = v.get<Int>();
      else
        fail(key, "a nonnegative integer");
    } else {
      out = v.get<Int>();
    }
  }
  void read(const std::string& key, std::optional<std::size_t>& out) {
    known_.insert(key);
    if (!node_.contains(key)) return;
    if (node_.at(key).is_null()) {
      out.reset();
      return;
    }
    std::size_t v = 0;
    read(key, v);
    out = v;
  }
  void read(const std::string& key, std::vector<double>& out) { read_array(key, out, "numbers", &json::is_number); }
  void read(const std::string& key, std::vector<int>& out) { read_array(key, out, "integers", &json::is_number_integer); }
  void read(const std::string& key, std::vector<std::string>& out) { read_array(key, out, "strings", &json::is_string); }

  void read_path(const std::string& key, fs::path& out, const fs::path& base) {
    std::string s;
    read(key, s);
    if (s.empty()) return;
    fs::path p(s);
    out = p.is_absolute() || base.empty() ? p : base / p;
  }

  [[noreturn]] void fail(const std::string& key, const std::string& expected) const {
    throw Error("config: " + child(key) + ": expected " + expected);
  }
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  template <typename T>
  void read_array(const std::string& key, std::vector<T>& out, const char* what, bool (json::*check)() const noexcept) {
    if (!has(key)) return;
    const auto& v = node_.at(key);
    if (!v.is_array()) fail(key, std::string("an array of ") + what);
    std::vector<T> tmp;
    for (const auto& e : v) {
      if (!(e.*check)()) fail(key, std::string("an array of ") + what);
      tmp.push_back(e.get<T>());
    }
    out = std::move(tmp);
  }
  std::string where() const { return path_.empty() ? "the top level" : path_; }

  const json& node_;
  std::string path_;
  std::set<std::string> known_;
};

void check(bool ok, const std::string& message) {
  if (!ok) throw Error("config: " + message);
}

void validate(const RunConfig& c) {
  check(!c.output_dir.empty(), "output_dir is required");
  check(c.threads >= 1, "threads must be at least 1");
  check(c.filter.min_words <= c.filter.max_words, "filter.min_words exceeds filter.max_words");
  check(c.extract.min_weight >= 0, "extract.min_weight must be nonnegative");
  check(!c.topics.k_candidates.empty(), "topics.k_candidates must not be empty");
  for (int k : c.topics.k_candidates) check(k >= 1, "topics.k_candidates entries must be positive");
  check(c.topics.folds >= 2, "topics.folds must be at least 2");
  check(c.topics.iterations >= 1, "topics.iterations must be positive");
  check(!c.topics.alpha || *c.topics.alpha > 0, "topics.alpha must be positive");
  check(c.topics.beta > 0, "topics.beta must be positive");
  check(c.topics.threshold >= 0 && c.topics.threshold <= 1, "topics.threshold must lie in [0, 1]");
  check(c.topics.burn_in >= 0 && c.topics.samples >= 1, "topics.burn_in must be >= 0 and topics.samples >= 1");
  check(c.topics.max_doc_fraction > 0 && c.topics.max_doc_fraction <= 1, "topics.max_doc_fraction must lie in (0, 1]");
  check(c.embed.source == "builtin" || c.embed.source == "external", "embed.source must be \"builtin\" or \"external\"");
  check(c.embed.source != "external" || !c.paths.embeddings.empty(), "embed.source is external but paths.embeddings is empty");
  check(c.embed.dims >= 16, "embed.dims must be at least 16");
  check(!c.embed.reduce_to || (*c.embed.reduce_to >= 1 && *c.embed.reduce_to < c.embed.dims),
        "embed.reduce_to must lie in [1, embed.dims)");
  check(c.propensity.epochs >= 1, "propensity.epochs must be positive");
  check(c.propensity.learning_rate > 0, "propensity.learning_rate must be positive");
  check(c.propensity.aug_prob >= 0 && c.propensity.aug_prob <= 1, "propensity.aug_prob must lie in [0, 1]");
  check(c.propensity.holdout_fraction >= 0 && c.propensity.holdout_fraction < 1,
        "propensity.holdout_fraction must lie in [0, 1)");
  check(c.propensity.patience >= 1, "propensity.patience must be positive");
  check(c.match.d_max > 0 && c.match.d_max <= 2, "match.d_max must lie in (0, 2]");
  check(c.match.age_delta >= 0, "match.age_delta must be nonnegative");
  check(!c.estimate.d_max_values.empty(), "estimate.d_max_values must not be empty");
  for (double d : c.estimate.d_max_values) check(d > 0 && d <= 2, "estimate.d_max_values entries must lie in (0, 2]");
  check(c.estimate.bootstrap >= 1, "estimate.bootstrap must be positive");
  check(c.estimate.level > 0 && c.estimate.level < 1, "estimate.level must lie in (0, 1)");
  check(c.report.age_bins >= 1, "report.age_bins must be positive");
  check(c.report.min_cell >= 0, "report.min_cell must be nonnegative");
  check(c.annotate.raters_per_pair >= 1, "annotate.raters_per_pair must be positive");
  check(c.annotate.port >= 0 && c.annotate.port <= 65535, "annotate.port out of range");
}

}  // namespace

synth::SynthConfig Synth::to_synth_config(std::uint64_t seed) const {
  auto cfg = synth::make_config(situation_skew.size(), words_per_situation, filler_words, seed);
  cfg.n_docs = n_docs;
  cfg.direct_effect = direct_effect;
  cfg.situation_skew = situation_skew;
  cfg.situation_base_rates = situation_base_rates;
  cfg.situation_prior = situation_prior;
  cfg.filler_fraction = filler_fraction;
  cfg.partner_probability = partner_probability;
  cfg.treated_fraction = treated_fraction;
  cfg.age = age;
  for (auto& s : cfg.situations) {
    s.min_words = min_words;
    s.max_words = max_words;
  }
  cfg.seed = seed;
  return cfg;
}

RunConfig parse_config(std::string_view json_text, const fs::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(std::string("config: not valid JSON: ") + e.what());
  }
  RunConfig c;
  {
    Section top(root, "");
    top.read_path("output_dir", c.output_dir, base_dir);
    top.read("seed", c.seed);
    top.read("threads", c.threads);
    {
      auto s = top.section("paths");
      s.read_path("submissions", c.paths.submissions, base_dir);
      s.read_path("comments", c.paths.comments, base_dir);
      s.read_path("bots", c.paths.bots, base_dir);
      s.read_path("lexicon", c.paths.lexicon, base_dir);
      s.read_path("stopwords", c.paths.stopwords, base_dir);
      s.read_path("stems", c.paths.stems, base_dir);
      s.read_path("embeddings", c.paths.embeddings, base_dir);
    }
    {
      auto f = top.section("fields");
      auto s = f.section("submission");
      s.read("id", c.submission_fields.id);
      s.read("author", c.submission_fields.author);
      s.read("created_utc", c.submission_fields.created_utc);
      s.read("title", c.submission_fields.title);
      s.read("selftext", c.submission_fields.selftext);
      auto m = f.section("comment");
      m.read("id", c.comment_fields.id);
      m.read("link_id", c.comment_fields.link_id);
      m.read("author", c.comment_fields.author);
      m.read("body", c.comment_fields.body);
      m.read("score", c.comment_fields.score);
    }
    {
      auto s = top.section("filter");
      s.read("min_words", c.filter.min_words);
      s.read("max_words", c.filter.max_words);
    }
    {
      auto s = top.section("extract");
      s.read("min_weight", c.extract.min_weight);
      s.read("pronoun_window", c.extract.pronoun_window);
    }
    {
      auto s = top.section("topics");
      s.read("k_candidates", c.topics.k_candidates);
      s.read("folds", c.topics.folds);
      s.read("iterations", c.topics.iterations);
      s.read("alpha", c.topics.alpha);
      s.read("beta", c.topics.beta);
      s.read("threshold", c.topics.threshold);
      s.read("burn_in", c.topics.burn_in);
      s.read("samples", c.topics.samples);
      s.read("max_doc_fraction", c.topics.max_doc_fraction);
      s.read("min_doc_count", c.topics.min_doc_count);
    }
    {
      auto s = top.section("embed");
      s.read("source", c.embed.source);
      s.read("dims", c.embed.dims);
      s.read("reduce_to", c.embed.reduce_to);
      s.read("include_title", c.embed.include_title);
    }
    {
      auto s = top.section("propensity");
      s.read("epochs", c.propensity.epochs);
      s.read("learning_rate", c.propensity.learning_rate);
      s.read("aug_prob", c.propensity.aug_prob);
      s.read("holdout_fraction", c.propensity.holdout_fraction);
      s.read("patience", c.propensity.patience);
    }
    {
      auto s = top.section("match");
      s.read("d_max", c.match.d_max);
      s.read("age_delta", c.match.age_delta);
    }
    {
      auto s = top.section("estimate");
      s.read("d_max_values", c.estimate.d_max_values);
      s.read("bootstrap", c.estimate.bootstrap);
      s.read("level", c.estimate.level);
    }
    {
      auto s = top.section("report");
      s.read("age_bins", c.report.age_bins);
      s.read("age_edges", c.report.age_edges);
      s.read("min_cell", c.report.min_cell);
    }
    {
      auto s = top.section("synth");
      s.read("n_docs", c.synth.n_docs);
      s.read("direct_effect", c.synth.direct_effect);
      s.read("situation_skew", c.synth.situation_skew);
      s.read("situation_base_rates", c.synth.situation_base_rates);
      s.read("situation_prior", c.synth.situation_prior);
      s.read("words_per_situation", c.synth.words_per_situation);
      s.read("filler_words", c.synth.filler_words);
      s.read("filler_fraction", c.synth.filler_fraction);
      s.read("partner_probability", c.synth.partner_probability);
      s.read("treated_fraction", c.synth.treated_fraction);
      s.read("min_words", c.synth.min_words);
      s.read("max_words", c.synth.max_words);
      auto a = s.section("age");
      a.read("treated_mean", c.synth.age.treated_mean);
      a.read("treated_sd", c.synth.age.treated_sd);
      a.read("control_mean", c.synth.age.control_mean);
      a.read("control_sd", c.synth.age.control_sd);
      a.read("min_age", c.synth.age.min_age);
      a.read("max_age", c.synth.age.max_age);
    }
    {
      auto s = top.section("annotate");
      s.read("pairs", c.annotate.pairs);
      s.read("raters_per_pair", c.annotate.raters_per_pair);
      s.read("annotators", c.annotate.annotators);
      s.read("host", c.annotate.host);
      s.read("port", c.annotate.port);
      s.read("admin_key", c.annotate.admin_key);
    }
  }
  validate(c);
  return c;
}

RunConfig load_config(const fs::path& path) {
  return parse_config(io::read_file(path), fs::absolute(path).parent_path());
}

ojson to_json(const RunConfig& c) {
  ojson j;
  j["seed"] = c.seed;
  j["paths"] = {{"submissions", c.paths.submissions.string()}, {"comments", c.paths.comments.string()},
                {"bots", c.paths.bots.string()},               {"lexicon", c.paths.lexicon.string()},
                {"stopwords", c.paths.stopwords.string()},     {"stems", c.paths.stems.string()},
                {"embeddings", c.paths.embeddings.string()}};
  const auto& sf = c.submission_fields;
  const auto& cf = c.comment_fields;
  j["fields"] = {{"submission", {{"id", sf.id}, {"author", sf.author}, {"created_utc", sf.created_utc},
                                 {"title", sf.title}, {"selftext", sf.selftext}}},
                 {"comment", {{"id", cf.id}, {"link_id", cf.link_id}, {"author", cf.author}, {"body", cf.body},
                              {"score", cf.score}}}};
  j["filter"] = {{"min_words", c.filter.min_words}, {"max_words", c.filter.max_words}};
  j["extract"] = {{"min_weight", c.extract.min_weight}, {"pronoun_window", c.extract.pronoun_window}};
  const auto& t = c.topics;
  j["topics"] = {{"k_candidates", t.k_candidates}, {"folds", t.folds}, {"iterations", t.iterations},
                 {"alpha", t.alpha ? ojson(*t.alpha) : ojson(nullptr)}, {"beta", t.beta},
                 {"threshold", t.threshold}, {"burn_in", t.burn_in}, {"samples", t.samples},
                 {"max_doc_fraction", t.max_doc_fraction}, {"min_doc_count", t.min_doc_count}};
  j["embed"] = {{"source", c.embed.source}, {"dims", c.embed.dims},
                {"reduce_to", c.embed.reduce_to ? ojson(*c.embed.reduce_to) : ojson(nullptr)},
                {"include_title", c.embed.include_title}};
  const auto& p = c.propensity;
  j["propensity"] = {{"epochs", p.epochs}, {"learning_rate", p.learning_rate}, {"aug_prob", p.aug_prob},
                     {"holdout_fraction", p.holdout_fraction}, {"patience", p.patience}};
  j["match"] = {{"d_max", c.match.d_max}, {"age_delta", c.match.age_delta}};
  j["estimate"] = {{"d_max_values", c.estimate.d_max_values}, {"bootstrap", c.estimate.bootstrap},
                   {"level", c.estimate.level}};
  j["report"] = {{"age_bins", c.report.age_bins}, {"age_edges", c.report.age_edges}, {"min_cell", c.report.min_cell}};
  const auto& s = c.synth;
  j["synth"] = {{"n_docs", s.n_docs},
                {"direct_effect", s.direct_effect},
                {"situation_skew", s.situation_skew},
                {"situation_base_rates", s.situation_base_rates},
                {"situation_prior", s.situation_prior},
                {"words_per_situation", s.words_per_situation},
                {"filler_words", s.filler_words},
                {"filler_fraction", s.filler_fraction},
                {"partner_probability", s.partner_probability},
                {"treated_fraction", s.treated_fraction},
                {"min_words", s.min_words},
                {"max_words", s.max_words},
                {"age",
                 {{"treated_mean", s.age.treated_mean},
                  {"treated_sd", s.age.treated_sd},
                  {"control_mean", s.age.control_mean},
                  {"control_sd", s.age.control_sd},
                  {"min_age", s.age.min_age},
                  {"max_age", s.age.max_age}}}};
  j["annotate"] = {{"pairs", c.annotate.pairs},
                   {"raters_per_pair", c.annotate.raters_per_pair},
                   {"annotators", c.annotate.annotators}};
  return j;
}

}  // namespace moralmatch::config
