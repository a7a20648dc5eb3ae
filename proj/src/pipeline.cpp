#include "moralmatch/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <functional>
#include <limits>
#include <map>
#include <set>

#include "moralmatch/common.hpp"
#include "moralmatch/corpus.hpp"
#include "moralmatch/embedding.hpp"
#include "moralmatch/extraction.hpp"
#include "moralmatch/io.hpp"
#include "moralmatch/matching.hpp"
#include "moralmatch/propensity.hpp"
#include "moralmatch/stats.hpp"
#include "moralmatch/synth.hpp"
#include "moralmatch/topics.hpp"

namespace moralmatch::pipeline {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;
using config::RunConfig;

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::ingest: return "ingest";
    case Stage::extract: return "extract";
    case Stage::topics: return "topics";
    case Stage::embed: return "embed";
    case Stage::propensity: return "propensity";
    case Stage::match: return "match";
    case Stage::estimate: return "estimate";
    case Stage::report: return "report";
    case Stage::synth: return "synth";
    case Stage::annotate_serve: return "annotate-serve";
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  for (Stage s : {Stage::ingest, Stage::extract, Stage::topics, Stage::embed, Stage::propensity, Stage::match,
                  Stage::estimate, Stage::report, Stage::synth, Stage::annotate_serve})
    if (to_string(s) == name) return s;
  throw Error("unknown stage '" + std::string(name) + "'");
}

const std::vector<Stage>& analysis_stages() {
  static const std::vector<Stage> stages{Stage::ingest,     Stage::extract, Stage::topics,   Stage::embed,
                                         Stage::propensity, Stage::match,   Stage::estimate, Stage::report};
  return stages;
}

// ---------------------------------------------------------------------------

OutputLock::OutputLock(const fs::path& dir) : path_(dir / ".moralmatch.lock") {
  fs::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST)
      throw Error("output directory " + dir.string() + " is locked by another run; remove " + path_.string() +
                  " if no run is active");
    throw Error("cannot create lock file " + path_.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

std::vector<int> age_bin_edges(std::vector<int> ages, int bins, const std::vector<int>& explicit_edges) {
  if (!explicit_edges.empty()) {
    auto e = explicit_edges;
    std::sort(e.begin(), e.end());
    e.erase(std::unique(e.begin(), e.end()), e.end());
    return e;
  }
  if (ages.empty() || bins < 2) return {};
  std::sort(ages.begin(), ages.end());
  std::vector<int> edges;
  for (int i = 1; i < bins; ++i) {
    const auto k = static_cast<std::size_t>(static_cast<double>(i) / bins * static_cast<double>(ages.size()));
    const int e = ages[std::min(k, ages.size() - 1)];
    if (e > ages.front() && (edges.empty() || e > edges.back())) edges.push_back(e);
  }
  return edges;
}

std::string age_bin_label(int age, const std::vector<int>& edges, int max_age) {
  auto it = std::upper_bound(edges.begin(), edges.end(), age);
  if (it == edges.begin()) {
    if (edges.empty()) return "all";
    return "<" + std::to_string(edges.front());
  }
  const int lo = *(it - 1);
  if (it == edges.end()) return std::to_string(lo) + "-" + std::to_string(std::max(lo, max_age));
  return std::to_string(lo) + "-" + std::to_string(*it - 1);
}

// ---------------------------------------------------------------------------

namespace {

struct Input {
  std::string name;
  fs::path path;
  std::string producer;  // stage that writes it; empty for user-supplied files
};

struct Context {
  const RunConfig& cfg;
  const RunOptions& opts;
  StageOutcome& outcome;
  fs::path out;

  fs::path at(std::string_view rel) const { return out / rel; }
  void note(const std::string& msg) {
    outcome.notes.push_back(msg);
    if (opts.log) *opts.log << "  " << msg << '\n';
  }
};

fs::path data_file(const fs::path& configured, const char* name) {
  return configured.empty() ? fs::path(MORALMATCH_DATA_DIR) / name : configured;
}

Input artifact(const RunConfig& cfg, std::string rel, std::string producer) {
  return {rel, cfg.output_dir / rel, std::move(producer)};
}

Input user_file(const std::string& name, const fs::path& configured, const RunConfig& cfg, const char* synth_rel) {
  if (configured.empty()) return artifact(cfg, synth_rel, "synth");
  return {name, configured, ""};
}

fs::path manifest_path(const RunConfig& cfg, Stage s) {
  return cfg.output_dir / "manifests" / (std::string(to_string(s)) + ".json");
}

void require_inputs(Stage stage, const std::vector<Input>& inputs) {
  for (const auto& in : inputs) {
    if (fs::exists(in.path)) continue;
    if (!in.producer.empty())
      throw Error(std::string(to_string(stage)) + ": missing " + in.name + "; run the '" + in.producer +
                  "' stage first");
    throw Error(std::string(to_string(stage)) + ": input file not found: " + in.path.string() + " (" + in.name + ")");
  }
}

using Body = std::function<std::vector<std::string>(Context&)>;

StageOutcome with_manifest(Stage stage, const RunConfig& cfg, const RunOptions& opts, const std::vector<Input>& inputs,
                           const ojson& params, const Body& body) {
  StageOutcome outcome;
  outcome.stage = stage;
  require_inputs(stage, inputs);
  ojson hashes = ojson::object();
  for (const auto& in : inputs) hashes[in.name] = io::sha256_file(in.path);

  const auto mpath = manifest_path(cfg, stage);
  if (!opts.force && fs::exists(mpath)) {
    try {
      const auto old = ojson::parse(io::read_file(mpath));
      bool same = old.at("version") == kVersion && old.at("params") == params && old.at("inputs") == hashes;
      for (const auto& [rel, h] : old.at("outputs").items()) {
        if (!same) break;
        same = fs::exists(cfg.output_dir / rel) && io::sha256_file(cfg.output_dir / rel) == h.get<std::string>();
      }
      if (same) {
        outcome.skipped = true;
        if (opts.log) *opts.log << to_string(stage) << ": up to date\n";
        return outcome;
      }
    } catch (const std::exception&) {
      // unreadable manifest: rerun the stage
    }
  }

  if (opts.log) *opts.log << to_string(stage) << ": running\n";
  Context ctx{cfg, opts, outcome, cfg.output_dir};
  const auto outputs = body(ctx);
  ojson manifest;
  manifest["stage"] = to_string(stage);
  manifest["version"] = kVersion;
  manifest["seed"] = cfg.seed;
  manifest["params"] = params;
  manifest["inputs"] = hashes;
  ojson out_hashes = ojson::object();
  for (const auto& rel : outputs) out_hashes[rel] = io::sha256_file(cfg.output_dir / rel);
  manifest["outputs"] = out_hashes;
  manifest["notes"] = outcome.notes;
  fs::create_directories(mpath.parent_path());
  io::write_file_atomic(mpath, manifest.dump(2) + "\n");
  return outcome;
}

std::uint64_t stage_seed(const RunConfig& cfg, std::string_view name) { return derive_seed(cfg.seed, {fnv1a(name)}); }

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  fs::create_directories(path.parent_path());
  std::string out = io::csv_row(header);
  for (const auto& r : rows) out += io::csv_row(r);
  io::write_file_atomic(path, out);
}

std::string fmt(double v) { return format_double(v); }

std::string topic_name(int label) { return label == topics::kOtherTopic ? "other" : std::to_string(label); }

// --- shared artifact readers ----------------------------------------------

struct Unit {
  std::string id;
  bool treated = false;
  int age = 0;
  int outcome = 0;
};

std::vector<Unit> read_units(const fs::path& path) {
  const auto t = io::read_csv(path);
  const auto id = t.column("doc_id"), treated = t.column("treated"), age = t.column("age"),
             outcome = t.column("outcome");
  std::vector<Unit> out;
  for (const auto& r : t.rows)
    out.push_back({r[id], r[treated] == "1", static_cast<int>(parse_int(r[age])), static_cast<int>(parse_int(r[outcome]))});
  return out;
}

struct Text {
  std::string id, title, body;
};

std::vector<Text> read_texts(const fs::path& path) {
  std::vector<Text> out;
  io::for_each_line(path, [&](std::size_t, std::string_view line) {
    if (io::trim(line).empty()) return;
    const auto j = json::parse(line);
    out.push_back({j.at("id").get<std::string>(), j.at("title").get<std::string>(), j.at("body").get<std::string>()});
  });
  return out;
}

std::string unit_text(const Text& t, bool include_title) { return include_title ? t.title + "\n" + t.body : t.body; }

std::map<std::string, int> read_topic_labels(const fs::path& path) {
  const auto t = io::read_csv(path);
  const auto id = t.column("doc_id"), label = t.column("label");
  std::map<std::string, int> out;
  for (const auto& r : t.rows) out[r[id]] = static_cast<int>(parse_int(r[label]));
  return out;
}

std::map<std::string, double> read_logits(const fs::path& path) {
  const auto t = io::read_csv(path);
  const auto id = t.column("doc_id"), logit = t.column("logit");
  std::map<std::string, double> out;
  for (const auto& r : t.rows) out[r[id]] = parse_double(r[logit]);
  return out;
}

propensity::CaliperSpec read_caliper(const fs::path& path) {
  const auto t = io::read_csv(path);
  if (t.rows.size() != 1) throw Error("caliper file must hold one row: " + path.string());
  const auto& r = t.rows[0];
  propensity::CaliperSpec c;
  c.c = parse_double(r[t.column("c")]);
  c.sigma2_treated = parse_double(r[t.column("sigma2_treated")]);
  c.sigma2_control = parse_double(r[t.column("sigma2_control")]);
  c.n_treated = static_cast<std::size_t>(parse_int(r[t.column("n_treated")]));
  c.n_control = static_cast<std::size_t>(parse_int(r[t.column("n_control")]));
  return c;
}

embedding::EmbeddingMatrix read_embeddings(const fs::path& path, const std::vector<std::string>& ids) {
  return embedding::import_embeddings(path, ids).matrix;
}

std::vector<std::string> ids_of(const std::vector<Unit>& units) {
  std::vector<std::string> ids;
  for (const auto& u : units) ids.push_back(u.id);
  return ids;
}

struct MatchInputs {
  std::vector<matching::MatchUnit> treated, control;
  propensity::CaliperSpec caliper;
};

MatchInputs build_match_inputs(const RunConfig& cfg) {
  const auto units = read_units(cfg.output_dir / "extract/units.csv");
  const auto labels = read_topic_labels(cfg.output_dir / "topics/assignments.csv");
  const auto logits = read_logits(cfg.output_dir / "propensity/propensity.csv");
  const auto emb = read_embeddings(cfg.output_dir / "embed/embeddings.bin", ids_of(units));
  std::map<std::string, std::size_t> row;
  for (std::size_t i = 0; i < emb.doc_ids.size(); ++i) row[emb.doc_ids[i]] = i;
  MatchInputs in;
  in.caliper = read_caliper(cfg.output_dir / "propensity/caliper.csv");
  for (const auto& u : units) {
    auto r = row.find(u.id);
    auto l = labels.find(u.id);
    auto g = logits.find(u.id);
    if (r == row.end() || l == labels.end() || g == logits.end()) continue;
    const auto v = emb.row(r->second);
    matching::MatchUnit m{u.id, std::vector<double>(v.begin(), v.end()), g->second, l->second, u.age, u.outcome};
    (u.treated ? in.treated : in.control).push_back(std::move(m));
  }
  return in;
}

std::vector<matching::MatchedPair> read_pairs(const fs::path& path) {
  const auto t = io::read_csv(path);
  std::vector<matching::MatchedPair> out;
  const auto ti = t.column("treated_id"), ci = t.column("control_id"), d = t.column("distance"),
             to = t.column("treated_outcome"), co = t.column("control_outcome"), tp = t.column("topic");
  for (const auto& r : t.rows)
    out.push_back({r[ti], r[ci], parse_double(r[d]), static_cast<int>(parse_int(r[to])),
                   static_cast<int>(parse_int(r[co])), r[tp] == "other" ? topics::kOtherTopic : static_cast<int>(parse_int(r[tp]))});
  return out;
}

// --- stages ------------------------------------------------------------------

StageOutcome stage_synth(const RunConfig& cfg, const RunOptions& opts) {
  const auto j = config::to_json(cfg);
  ojson params{{"seed", cfg.seed}, {"synth", j["synth"]}};
  return with_manifest(Stage::synth, cfg, opts, {}, params, [&](Context& ctx) {
    const auto sc = cfg.synth.to_synth_config(stage_seed(cfg, "synth"));
    const auto corpus = synth::generate(sc);
    synth::write_corpus(corpus, ctx.at("synth"));
    write_csv(ctx.at("synth/oracle.csv"), {"oracle_satt", "analytic_crude_or", "n_docs"},
              {{fmt(synth::oracle_satt(sc)), fmt(synth::analytic_crude_or(sc)), std::to_string(sc.n_docs)}});
    ctx.note("generated " + std::to_string(corpus.documents.size()) + " documents");
    return std::vector<std::string>{"synth/submissions.jsonl", "synth/comments.jsonl", "synth/bots.txt",
                                    "synth/truth.csv", "synth/oracle.csv"};
  });
}

StageOutcome stage_ingest(const RunConfig& cfg, const RunOptions& opts) {
  const std::vector<Input> inputs{user_file("submissions", cfg.paths.submissions, cfg, "synth/submissions.jsonl"),
                                  user_file("comments", cfg.paths.comments, cfg, "synth/comments.jsonl"),
                                  user_file("bots", cfg.paths.bots, cfg, "synth/bots.txt")};
  const auto j = config::to_json(cfg);
  ojson params{{"fields", j["fields"]}, {"filter", j["filter"]}};
  return with_manifest(Stage::ingest, cfg, opts, inputs, params, [&](Context& ctx) {
    corpus::LoadOptions lo;
    lo.submission_fields = cfg.submission_fields;
    lo.comment_fields = cfg.comment_fields;
    const auto loaded = corpus::load_corpus(inputs[0].path, inputs[1].path, lo);
    const auto bots = corpus::load_bot_list(inputs[2].path);
    const auto filtered =
        corpus::filter_corpus(loaded.documents, loaded.comments, bots, {cfg.filter.min_words, cfg.filter.max_words});

    std::string docs, comments;
    for (const auto& d : filtered.documents) {
      ojson rec{{"id", d.id}, {"author", d.author_id}, {"created_utc", d.created_at}, {"title", d.title}, {"selftext", d.body}};
      docs += rec.dump() + "\n";
    }
    for (const auto& c : filtered.comments) {
      ojson rec{{"id", c.id}, {"link_id", c.document_id}, {"author", c.author_id}, {"body", c.body}, {"score", c.score}};
      comments += rec.dump() + "\n";
    }
    fs::create_directories(ctx.at("ingest"));
    io::write_file_atomic(ctx.at("ingest/documents.jsonl"), docs);
    io::write_file_atomic(ctx.at("ingest/comments.jsonl"), comments);

    std::vector<std::vector<std::string>> rows{
        {"documents", "loaded", std::to_string(loaded.documents.size())},
        {"comments", "loaded", std::to_string(loaded.comments.size())}};
    using corpus::RemovalReason;
    for (auto r : {RemovalReason::bot, RemovalReason::title_prefix, RemovalReason::too_short, RemovalReason::too_long})
      rows.push_back({"documents", std::string(corpus::to_string(r)),
                      std::to_string(filtered.report.documents_removed.count(r) ? filtered.report.documents_removed.at(r) : 0)});
    for (auto r : {RemovalReason::bot, RemovalReason::orphan})
      rows.push_back({"comments", std::string(corpus::to_string(r)),
                      std::to_string(filtered.report.comments_removed.count(r) ? filtered.report.comments_removed.at(r) : 0)});
    rows.push_back({"documents", "kept", std::to_string(filtered.documents.size())});
    rows.push_back({"comments", "kept", std::to_string(filtered.comments.size())});
    write_csv(ctx.at("ingest/filter_report.csv"), {"record", "reason", "count"}, rows);

    std::vector<std::vector<std::string>> errs;
    for (const auto& e : loaded.errors)
      errs.push_back({fs::path(e.file).filename().string(), std::to_string(e.line), e.message});
    write_csv(ctx.at("ingest/load_errors.csv"), {"file", "line", "message"}, errs);
    if (!loaded.errors.empty()) ctx.note(std::to_string(loaded.errors.size()) + " malformed records skipped");
    ctx.note("kept " + std::to_string(filtered.documents.size()) + " of " + std::to_string(loaded.documents.size()) +
             " documents");
    return std::vector<std::string>{"ingest/documents.jsonl", "ingest/comments.jsonl", "ingest/filter_report.csv",
                                    "ingest/load_errors.csv"};
  });
}

StageOutcome stage_extract(const RunConfig& cfg, const RunOptions& opts) {
  const std::vector<Input> inputs{artifact(cfg, "ingest/documents.jsonl", "ingest"),
                                  artifact(cfg, "ingest/comments.jsonl", "ingest")};
  const auto j = config::to_json(cfg);
  ojson params{{"extract", j["extract"]}};
  return with_manifest(Stage::extract, cfg, opts, inputs, params, [&](Context& ctx) {
    const auto loaded = corpus::load_corpus(inputs[0].path, inputs[1].path);
    std::map<std::string, std::vector<extraction::TaggedComment>> tagged;
    std::size_t negative = 0;
    for (const auto& c : loaded.comments) {
      if (c.score < 0) {
        ++negative;
        continue;
      }
      for (auto tag : extraction::extract_judgment_tags(c.body)) tagged[c.document_id].push_back({tag, c.score});
    }
    std::size_t below = 0, tied = 0, no_demo = 0, conflict = 0, non_binary = 0;
    std::vector<std::vector<std::string>> units, verdicts;
    std::string texts;
    for (const auto& d : loaded.documents) {
      const auto& tc = tagged[d.id];
      const auto agg = extraction::aggregate_verdict_detailed(tc, cfg.extract.min_weight);
      std::string status = agg.status == extraction::AggregationStatus::ok ? "ok"
                           : agg.status == extraction::AggregationStatus::tied ? "tied"
                                                                                : "below_min_weight";
      verdicts.push_back({d.id, status, std::to_string(agg.ah_weight), std::to_string(agg.n_ah_weight),
                          agg.verdict ? std::string(extraction::to_string(agg.verdict->value)) : ""});
      if (!agg.verdict) {
        (agg.status == extraction::AggregationStatus::tied ? tied : below)++;
        continue;
      }
      const auto demo = extraction::extract_demographics_detailed(d.title, d.body, {cfg.extract.pronoun_window});
      if (demo.non_binary) ++non_binary;
      if (demo.conflict) ++conflict;
      if (!demo.demographics) {
        ++no_demo;
        continue;
      }
      const bool male = demo.demographics->gender == extraction::Gender::M;
      const bool ah = agg.verdict->value == extraction::VerdictClass::AH;
      units.push_back({d.id, male ? "M" : "F", male ? "1" : "0", std::to_string(demo.demographics->age),
                       std::string(extraction::to_string(agg.verdict->value)), ah ? "1" : "0",
                       std::to_string(agg.verdict->total_weight)});
      ojson rec{{"id", d.id},
                {"title", extraction::strip_demographic_tags(d.title)},
                {"body", extraction::strip_demographic_tags(d.body)}};
      texts += rec.dump() + "\n";
    }
    write_csv(ctx.at("extract/units.csv"), {"doc_id", "gender", "treated", "age", "verdict", "outcome", "verdict_weight"},
              units);
    write_csv(ctx.at("extract/verdicts.csv"), {"doc_id", "status", "ah_weight", "n_ah_weight", "verdict"}, verdicts);
    io::write_file_atomic(ctx.at("extract/texts.jsonl"), texts);
    write_csv(ctx.at("extract/extract_report.csv"), {"metric", "count"},
              {{"documents", std::to_string(loaded.documents.size())},
               {"negative_score_comments", std::to_string(negative)},
               {"verdict_below_min_weight", std::to_string(below)},
               {"verdict_tied", std::to_string(tied)},
               {"no_demographics", std::to_string(no_demo)},
               {"demographic_conflict", std::to_string(conflict)},
               {"non_binary", std::to_string(non_binary)},
               {"units", std::to_string(units.size())}});
    ctx.note(std::to_string(units.size()) + " documents with a verdict and binary demographics");
    if (units.empty()) throw Error("extract: no document has both a verdict and demographics");
    return std::vector<std::string>{"extract/units.csv", "extract/verdicts.csv", "extract/texts.jsonl",
                                    "extract/extract_report.csv"};
  });
}

StageOutcome stage_topics(const RunConfig& cfg, const RunOptions& opts) {
  const std::vector<Input> inputs{artifact(cfg, "extract/texts.jsonl", "extract"),
                                  {"stopwords", data_file(cfg.paths.stopwords, "stopwords.txt"), ""},
                                  {"stems", data_file(cfg.paths.stems, "stems.tsv"), ""}};
  const auto j = config::to_json(cfg);
  ojson params{{"seed", cfg.seed}, {"topics", j["topics"]}, {"include_title", cfg.embed.include_title}};
  return with_manifest(Stage::topics, cfg, opts, inputs, params, [&](Context& ctx) {
    const auto texts = read_texts(inputs[0].path);
    const auto normalizer = topics::TextNormalizer::load(inputs[1].path, inputs[2].path);
    std::vector<std::string> raw;
    for (const auto& t : texts) raw.push_back(unit_text(t, cfg.embed.include_title));
    const auto& tc = cfg.topics;
    const auto pre = topics::preprocess(raw, normalizer, {tc.max_doc_fraction, tc.min_doc_count});
    if (pre.vocabulary.size() == 0) throw Error("topics: vocabulary is empty after pruning");
    if (pre.excluded_empty) ctx.note(std::to_string(pre.excluded_empty) + " documents have no in-vocabulary token");

    topics::LdaOptions base;
    base.alpha = tc.alpha;
    base.beta = tc.beta;
    base.iterations = tc.iterations;
    base.seed = stage_seed(cfg, "topics");
    base.threads = cfg.threads;
    const topics::InferOptions infer{tc.burn_in, tc.samples, stage_seed(cfg, "topics-infer")};

    std::vector<int> candidates;
    for (int k : tc.k_candidates)
      if (static_cast<std::size_t>(k) <= pre.documents.size()) candidates.push_back(k);
    if (candidates.empty()) throw Error("topics: every K candidate exceeds the number of documents");
    std::vector<std::vector<std::string>> krows;
    int best = candidates.front();
    if (candidates.size() > 1) {
      const auto sel = topics::select_k(pre.documents, pre.vocabulary.size(), candidates, tc.folds, base, infer);
      best = sel.best;
      for (const auto& s : sel.scores) krows.push_back({std::to_string(s.num_topics), fmt(s.mean), fmt(s.std_error)});
    } else {
      krows.push_back({std::to_string(best), "", ""});
    }
    write_csv(ctx.at("topics/k_selection.csv"), {"num_topics", "mean_perplexity", "std_error"}, krows);
    ctx.note("selected K = " + std::to_string(best));

    base.num_topics = best;
    auto fit = topics::lda_fit(pre.documents, pre.vocabulary.size(), base);
    for (const auto& w : fit.warnings) ctx.note(w);
    fit.model.terms = pre.vocabulary.terms;
    fit.model.save(ctx.at("topics/model.txt"));

    std::vector<std::string> header{"doc_id", "label"};
    for (int k = 0; k < best; ++k) header.push_back("p" + std::to_string(k));
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      const auto doc = topics::encode(pre.vocabulary, normalizer, raw[i]);
      topics::InferOptions o = infer;
      o.seed = derive_seed(infer.seed, {fnv1a(texts[i].id)});
      const auto a = topics::assign_topic(fit.model, texts[i].id, doc, tc.threshold, o);
      std::vector<std::string> r{texts[i].id, std::to_string(a.label)};
      for (double p : a.distribution) r.push_back(fmt(p));
      rows.push_back(std::move(r));
    }
    write_csv(ctx.at("topics/assignments.csv"), header, rows);

    std::vector<std::vector<std::string>> words;
    const auto top = topics::top_words(fit.model, 10);
    for (std::size_t k = 0; k < top.size(); ++k)
      for (std::size_t r = 0; r < top[k].size(); ++r) words.push_back({std::to_string(k), std::to_string(r + 1), top[k][r]});
    write_csv(ctx.at("topics/top_words.csv"), {"topic", "rank", "word"}, words);
    return std::vector<std::string>{"topics/k_selection.csv", "topics/model.txt", "topics/assignments.csv",
                                    "topics/top_words.csv"};
  });
}

embedding::BuiltinOptions builtin_options(const RunConfig& cfg) {
  embedding::BuiltinOptions o;
  o.dims = cfg.embed.dims;
  o.reduce_to = cfg.embed.reduce_to;
  o.seed = stage_seed(cfg, "embed");
  return o;
}

StageOutcome stage_embed(const RunConfig& cfg, const RunOptions& opts) {
  std::vector<Input> inputs{artifact(cfg, "extract/texts.jsonl", "extract"),
                            {"lexicon", data_file(cfg.paths.lexicon, "gender_lexicon.txt"), ""}};
  const bool external = cfg.embed.source == "external";
  if (external) inputs.push_back({"embeddings", cfg.paths.embeddings, ""});
  const auto j = config::to_json(cfg);
  ojson params{{"seed", cfg.seed}, {"embed", j["embed"]}};
  return with_manifest(Stage::embed, cfg, opts, inputs, params, [&](Context& ctx) {
    const auto texts = read_texts(inputs[0].path);
    std::vector<std::string> ids, raw;
    for (const auto& t : texts) {
      ids.push_back(t.id);
      raw.push_back(unit_text(t, cfg.embed.include_title));
    }
    fs::create_directories(ctx.at("embed"));
    std::vector<std::string> outputs{"embed/embeddings.bin"};
    embedding::EmbeddingMatrix m;
    if (external) {
      auto imported = embedding::import_embeddings(cfg.paths.embeddings, ids);
      for (const auto& id : imported.missing_ids) ctx.note("no external vector for " + id + "; left unmatched");
      m = std::move(imported.matrix);
      // swapped variants the external model must also embed for augmentation
      const auto lexicon = extraction::GenderLexicon::load(inputs[1].path);
      std::string listing;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        listing += ojson{{"id", ids[i]}, {"text", raw[i]}}.dump() + "\n";
        listing += ojson{{"id", ids[i] + "#swapped"}, {"text", extraction::swap_all_gendered_words(raw[i], lexicon)}}.dump() + "\n";
      }
      io::write_file_atomic(ctx.at("embed/texts_to_embed.jsonl"), listing);
      outputs.push_back("embed/texts_to_embed.jsonl");
    } else {
      embedding::HashedTfidfEmbedder fitted;
      m = embedding::embed_builtin(ids, raw, builtin_options(cfg), &fitted);
      fitted.save(ctx.at("embed/embedder.bin"));
      outputs.push_back("embed/embedder.bin");
    }
    if (!m.empty_ids.empty()) ctx.note(std::to_string(m.empty_ids.size()) + " documents have an empty embedding");
    embedding::write_embeddings_binary(ctx.at("embed/embeddings.bin"), m, embedding::Precision::float64);
    return outputs;
  });
}

StageOutcome stage_propensity(const RunConfig& cfg, const RunOptions& opts) {
  const bool external = cfg.embed.source == "external";
  std::vector<Input> inputs{artifact(cfg, "extract/units.csv", "extract"), artifact(cfg, "extract/texts.jsonl", "extract"),
                            artifact(cfg, "embed/embeddings.bin", "embed"),
                            {"lexicon", data_file(cfg.paths.lexicon, "gender_lexicon.txt"), ""}};
  if (external) inputs.push_back({"embeddings", cfg.paths.embeddings, ""});
  else inputs.push_back(artifact(cfg, "embed/embedder.bin", "embed"));
  const auto j = config::to_json(cfg);
  ojson params{{"seed", cfg.seed}, {"propensity", j["propensity"]}, {"embed", j["embed"]}};
  return with_manifest(Stage::propensity, cfg, opts, inputs, params, [&](Context& ctx) {
    const auto units = read_units(inputs[0].path);
    const auto texts = read_texts(inputs[1].path);
    const auto lexicon = extraction::GenderLexicon::load(inputs[3].path);
    std::map<std::string, const Text*> by_id;
    for (const auto& t : texts) by_id[t.id] = &t;

    std::vector<std::string> raw, ids;
    std::vector<int> labels;
    for (const auto& u : units) {
      auto it = by_id.find(u.id);
      if (it == by_id.end()) throw Error("propensity: no text for unit " + u.id);
      ids.push_back(u.id);
      raw.push_back(unit_text(*it->second, cfg.embed.include_title));
      labels.push_back(u.treated ? 1 : 0);
    }

    propensity::EmbedFn embed;
    std::shared_ptr<embedding::HashedTfidfEmbedder> builtin;
    std::shared_ptr<std::map<std::string, Eigen::VectorXd>> lookup;
    if (!external) {
      builtin = std::make_shared<embedding::HashedTfidfEmbedder>(embedding::HashedTfidfEmbedder::load(inputs[4].path));
    } else {
      lookup = std::make_shared<std::map<std::string, Eigen::VectorXd>>();
      std::vector<std::string> twin_ids;
      for (const auto& id : ids) twin_ids.push_back(id + "#swapped");
      try {
        const auto originals = embedding::import_embeddings(cfg.paths.embeddings, ids).matrix;
        const auto twins = embedding::import_embeddings(cfg.paths.embeddings, twin_ids).matrix;
        std::map<std::string, std::size_t> pos;
        for (std::size_t i = 0; i < ids.size(); ++i) pos[ids[i]] = i;
        auto add = [&](const embedding::EmbeddingMatrix& m, bool swapped) {
          for (std::size_t r = 0; r < m.rows(); ++r) {
            std::string id = m.doc_ids[r];
            if (swapped) id.resize(id.size() - std::string_view("#swapped").size());
            const auto& text = raw[pos.at(id)];
            const auto key = swapped ? extraction::swap_all_gendered_words(text, lexicon) : text;
            const auto v = m.row(r);
            (*lookup)[key] = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
          }
        };
        add(originals, false);
        add(twins, true);
      } catch (const Error& e) {
        ctx.note(std::string("external vectors for swapped texts unavailable (") + e.what() +
                 "); training on the builtin embedder instead");
        lookup.reset();
        builtin = std::make_shared<embedding::HashedTfidfEmbedder>(
            embedding::HashedTfidfEmbedder::fit(raw, builtin_options(cfg)));
      }
    }
    if (builtin) {
      embed = [builtin](std::string_view text) { return builtin->embed(text); };
    } else {
      const auto dims = lookup->empty() ? 0 : lookup->begin()->second.size();
      embed = [lookup, dims](std::string_view text) -> Eigen::VectorXd {
        auto it = lookup->find(std::string(text));
        return it == lookup->end() ? Eigen::VectorXd::Zero(dims) : it->second;
      };
    }

    propensity::TrainOptions to;
    to.epochs = cfg.propensity.epochs;
    to.learning_rate = cfg.propensity.learning_rate;
    to.aug_prob = cfg.propensity.aug_prob;
    to.holdout_fraction = cfg.propensity.holdout_fraction;
    to.patience = cfg.propensity.patience;
    to.seed = stage_seed(cfg, "propensity");
    to.threads = cfg.threads;
    const auto model = propensity::train_propensity(raw, labels, lexicon, embed, to);
    fs::create_directories(ctx.at("propensity"));
    model.save(ctx.at("propensity/model.txt"));

    std::vector<std::vector<std::string>> rows;
    std::vector<double> lt, lc;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const Eigen::VectorXd v = embed(raw[i]);
      const double z = propensity::predict_logit(model, {v.data(), static_cast<std::size_t>(v.size())});
      rows.push_back({ids[i], fmt(propensity::predict_propensity(model, {v.data(), static_cast<std::size_t>(v.size())})), fmt(z)});
      (labels[i] ? lt : lc).push_back(z);
    }
    write_csv(ctx.at("propensity/propensity.csv"), {"doc_id", "propensity", "logit"}, rows);
    const auto cal = propensity::compute_caliper(lt, lc);
    write_csv(ctx.at("propensity/caliper.csv"), {"c", "sigma2_treated", "sigma2_control", "n_treated", "n_control"},
              {{fmt(cal.c), fmt(cal.sigma2_treated), fmt(cal.sigma2_control), std::to_string(cal.n_treated),
                std::to_string(cal.n_control)}});
    ctx.note("trained " + std::to_string(model.meta.epochs_run) + " epochs; caliper " + fmt(cal.c));
    return std::vector<std::string>{"propensity/model.txt", "propensity/propensity.csv", "propensity/caliper.csv"};
  });
}

std::vector<Input> match_inputs(const RunConfig& cfg) {
  return {artifact(cfg, "extract/units.csv", "extract"), artifact(cfg, "topics/assignments.csv", "topics"),
          artifact(cfg, "embed/embeddings.bin", "embed"), artifact(cfg, "propensity/propensity.csv", "propensity"),
          artifact(cfg, "propensity/caliper.csv", "propensity")};
}

std::vector<std::string> balance_row(const std::string& sample, std::span<const double> t, std::span<const double> c) {
  if (t.empty() || c.empty()) return {sample, std::to_string(t.size()), std::to_string(c.size()), "", "", "false"};
  const auto b = matching::balance_diagnostics(t, c);
  return {sample, std::to_string(t.size()), std::to_string(c.size()), fmt(b.smd), fmt(b.variance_ratio),
          b.pass ? "true" : "false"};
}

StageOutcome stage_match(const RunConfig& cfg, const RunOptions& opts) {
  const auto inputs = match_inputs(cfg);
  const auto j = config::to_json(cfg);
  ojson params{{"match", j["match"]}};
  return with_manifest(Stage::match, cfg, opts, inputs, params, [&](Context& ctx) {
    const auto in = build_match_inputs(cfg);
    const matching::MatchConstraints mc{cfg.match.d_max, in.caliper, cfg.match.age_delta};
    const auto edges = matching::build_edges(in.treated, in.control, mc, cfg.threads);
    const auto chosen = matching::solve_matching(in.treated.size(), in.control.size(), edges);
    const auto pairs = matching::to_pairs(in.treated, in.control, chosen);
    std::vector<std::vector<std::string>> rows;
    for (const auto& p : pairs)
      rows.push_back({p.treated_id, p.control_id, fmt(p.distance), std::to_string(p.treated_outcome),
                      std::to_string(p.control_outcome), topic_name(p.topic)});
    write_csv(ctx.at("match/pairs.csv"),
              {"treated_id", "control_id", "distance", "treated_outcome", "control_outcome", "topic"}, rows);

    std::vector<double> all_t, all_c, m_t, m_c;
    for (const auto& u : in.treated) all_t.push_back(u.logit);
    for (const auto& u : in.control) all_c.push_back(u.logit);
    for (const auto& e : chosen) {
      m_t.push_back(in.treated[e.treated].logit);
      m_c.push_back(in.control[e.control].logit);
    }
    write_csv(ctx.at("match/balance.csv"), {"sample", "n_treated", "n_control", "smd", "variance_ratio", "pass"},
              {balance_row("all", all_t, all_c), balance_row("matched", m_t, m_c)});
    ctx.note(std::to_string(pairs.size()) + " pairs from " + std::to_string(edges.size()) + " feasible edges");
    return std::vector<std::string>{"match/pairs.csv", "match/balance.csv"};
  });
}

std::vector<std::string> satt_row(const std::string& dmax, const std::string& topic, const matching::SattEstimate& e) {
  if (e.n_pairs == 0) return {dmax, topic, "", "", "", "0"};
  return {dmax, topic, fmt(e.satt), fmt(e.ci_low), fmt(e.ci_high), std::to_string(e.n_pairs)};
}

StageOutcome stage_estimate(const RunConfig& cfg, const RunOptions& opts) {
  auto inputs = match_inputs(cfg);
  inputs.push_back(artifact(cfg, "match/pairs.csv", "match"));
  const auto j = config::to_json(cfg);
  ojson params{{"seed", cfg.seed}, {"match", j["match"]}, {"estimate", j["estimate"]}};
  return with_manifest(Stage::estimate, cfg, opts, inputs, params, [&](Context& ctx) {
    const auto pairs = read_pairs(ctx.at("match/pairs.csv"));
    const auto seed = stage_seed(cfg, "estimate");
    std::vector<std::vector<std::string>> satt;
    if (pairs.empty()) {
      ctx.note("no matched pairs; SATT undefined");
      satt.push_back({fmt(cfg.match.d_max), "", "", "", "0", "", "", "", ""});
    } else {
      const auto e = matching::bootstrap_satt(pairs, cfg.estimate.bootstrap, cfg.estimate.level, seed);
      satt.push_back({fmt(cfg.match.d_max), fmt(e.satt), fmt(e.ci_low), fmt(e.ci_high), std::to_string(e.n_pairs),
                      std::to_string(e.bootstrap_b), fmt(e.level), std::to_string(e.seed),
                      e.ci_contains_point ? "true" : "false"});
      if (!e.ci_contains_point) ctx.note("bootstrap interval does not contain the point estimate");
      ctx.note("SATT " + fmt(e.satt) + " [" + fmt(e.ci_low) + ", " + fmt(e.ci_high) + "] on " +
               std::to_string(e.n_pairs) + " pairs");
    }
    write_csv(ctx.at("estimate/satt.csv"),
              {"d_max", "satt", "ci_low", "ci_high", "n_pairs", "bootstrap_b", "level", "seed", "ci_contains_point"}, satt);

    const auto in = build_match_inputs(cfg);
    matching::SweepOptions so;
    so.d_max_values = cfg.estimate.d_max_values;
    so.age_delta = cfg.match.age_delta;
    so.bootstrap_b = cfg.estimate.bootstrap;
    so.level = cfg.estimate.level;
    so.seed = seed;
    so.threads = cfg.threads;
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : matching::sweep_dmax(in.treated, in.control, in.caliper, so))
      rows.push_back(satt_row(fmt(r.d_max), r.topic == matching::kAllTopics ? "ALL" : topic_name(r.topic), r.estimate));
    write_csv(ctx.at("estimate/sweep.csv"), {"d_max", "topic", "satt", "ci_low", "ci_high", "n_pairs"}, rows);
    return std::vector<std::string>{"estimate/satt.csv", "estimate/sweep.csv"};
  });
}

std::vector<std::string> or_row(const std::string& name, const stats::Table2x2& t, const stats::OddsRatio* r) {
  std::vector<std::string> row{name, std::to_string(t.a), std::to_string(t.b), std::to_string(t.c), std::to_string(t.d)};
  if (!r) {
    row.insert(row.end(), {"", "", "", "", "", "", "insufficient"});
    return row;
  }
  row.insert(row.end(), {fmt(r->odds_ratio), fmt(r->ci_low), fmt(r->ci_high), fmt(r->p_value),
                         r->continuity_corrected ? "true" : "false", stats::significance_marker(r->p_value), "ok"});
  return row;
}

const std::vector<std::string> kOrHeader{"stratum", "a", "b", "c", "d", "odds_ratio", "ci_low", "ci_high",
                                         "p_value", "continuity_corrected", "marker", "status"};

StageOutcome stage_report(const RunConfig& cfg, const RunOptions& opts) {
  const std::vector<Input> inputs{artifact(cfg, "extract/units.csv", "extract"),
                                  artifact(cfg, "topics/assignments.csv", "topics"),
                                  artifact(cfg, "match/pairs.csv", "match"), artifact(cfg, "match/balance.csv", "match"),
                                  artifact(cfg, "estimate/sweep.csv", "estimate"),
                                  artifact(cfg, "estimate/satt.csv", "estimate")};
  const auto j = config::to_json(cfg);
  ojson params{{"report", j["report"]}};
  return with_manifest(Stage::report, cfg, opts, inputs, params, [&](Context& ctx) {
    const auto units = read_units(inputs[0].path);
    const auto labels = read_topic_labels(inputs[1].path);
    const auto pairs = read_pairs(inputs[2].path);
    fs::create_directories(ctx.at("report"));

    auto table_of = [](const std::vector<Unit>& us) {
      stats::Table2x2 t;
      for (const auto& u : us) {
        if (u.treated) (u.outcome ? t.a : t.b)++;
        else (u.outcome ? t.c : t.d)++;
      }
      return t;
    };
    std::map<std::string, Unit> by_id;
    for (const auto& u : units) by_id[u.id] = u;
    std::vector<Unit> matched;
    for (const auto& p : pairs) {
      matched.push_back(by_id.at(p.treated_id));
      matched.push_back(by_id.at(p.control_id));
    }

    // crude and matched association, and their homogeneity
    std::vector<std::vector<std::string>> crude;
    std::vector<stats::Table2x2> strata;
    const std::pair<std::string, const std::vector<Unit>*> samples[] = {{"all", &units}, {"matched", &matched}};
    for (const auto& [name, sample] : samples) {
      const auto t = table_of(*sample);
      strata.push_back(t);
      if (t.a + t.b == 0 || t.c + t.d == 0) {
        crude.push_back(or_row(name, t, nullptr));
        continue;
      }
      const auto r = stats::odds_ratio_fisher(t);
      crude.push_back(or_row(name, t, &r));
    }
    write_csv(ctx.at("report/crude_or.csv"), kOrHeader, crude);
    std::vector<std::vector<std::string>> homog;
    try {
      const auto bd = stats::breslow_day(strata);
      homog.push_back({"all_vs_matched", fmt(bd.chi2), std::to_string(bd.df), fmt(bd.p_value), fmt(bd.common_or), "ok"});
      for (const auto& w : bd.warnings) ctx.note(w);
    } catch (const Error& e) {
      homog.push_back({"all_vs_matched", "", "", "", "", e.what()});
    }
    write_csv(ctx.at("report/homogeneity.csv"), {"comparison", "chi2", "df", "p_value", "common_or", "status"}, homog);

  // rows follow the order of the first unit seen in each stratum after sorting by `rank`
    auto stratified = [&](const fs::path& path, const std::function<std::string(const Unit&)>& key,
                          const std::function<int(const Unit&)>& rank) {
      auto sorted = units;
      std::stable_sort(sorted.begin(), sorted.end(), [&](const Unit& a, const Unit& b) { return rank(a) < rank(b); });
      std::vector<stats::StratumUnit> su;
      for (const auto& u : sorted) su.push_back({u.treated, u.outcome == 1, key(u)});
      const auto recs = stats::stratified_or_report(su, cfg.report.min_cell);
      std::vector<std::vector<std::string>> rows;
      for (const auto& r : recs) rows.push_back(or_row(r.stratum, r.table, r.sufficient ? &r.result : nullptr));
      write_csv(path, kOrHeader, rows);
    };
    stratified(ctx.at("report/topic_or.csv"), [&](const Unit& u) {
      auto it = labels.find(u.id);
      return it == labels.end() ? std::string("unassigned") : topic_name(it->second);
    }, [&](const Unit& u) {
      auto it = labels.find(u.id);
      return it == labels.end() ? std::numeric_limits<int>::max() : it->second;
    });
    std::vector<int> ages;
    int max_age = 0;
    for (const auto& u : units) {
      ages.push_back(u.age);
      max_age = std::max(max_age, u.age);
    }
    const auto edges = age_bin_edges(ages, cfg.report.age_bins, cfg.report.age_edges);
    stratified(ctx.at("report/age_or.csv"), [&](const Unit& u) { return age_bin_label(u.age, edges, max_age); },
               [](const Unit& u) { return u.age; });

    std::map<std::pair<int, std::string>, std::size_t> demo;
    for (const auto& u : units) ++demo[{u.age, u.treated ? "M" : "F"}];
    std::vector<std::vector<std::string>> drows;
    for (const auto& [k, n] : demo) drows.push_back({std::to_string(k.first), k.second, std::to_string(n)});
    write_csv(ctx.at("report/demographics.csv"), {"age", "gender", "count"}, drows);

    std::map<int, std::pair<std::size_t, std::size_t>> dist;
    for (const auto& u : units)
      if (auto it = labels.find(u.id); it != labels.end()) (u.treated ? dist[it->second].first : dist[it->second].second)++;
    std::vector<std::vector<std::string>> trows;
    for (const auto& [k, n] : dist)
      trows.push_back({topic_name(k), std::to_string(n.first), std::to_string(n.second), std::to_string(n.first + n.second)});
    write_csv(ctx.at("report/topic_distribution.csv"), {"topic", "treated", "control", "total"}, trows);

    io::write_file_atomic(ctx.at("report/balance.csv"), io::read_file(inputs[3].path));
    io::write_file_atomic(ctx.at("report/sweep.csv"), io::read_file(inputs[4].path));
    io::write_file_atomic(ctx.at("report/satt.csv"), io::read_file(inputs[5].path));
    return std::vector<std::string>{"report/crude_or.csv",     "report/homogeneity.csv", "report/topic_or.csv",
                                    "report/age_or.csv",       "report/demographics.csv", "report/topic_distribution.csv",
                                    "report/balance.csv",      "report/sweep.csv",        "report/satt.csv"};
  });
}

StageOutcome stage_annotate(const RunConfig& cfg, const RunOptions& opts) {
  StageOutcome outcome;
  outcome.stage = Stage::annotate_serve;
  auto service = make_annotation_service(cfg);
  annotation::AnnotationServer server(*service, cfg.output_dir / "annotate/export");
  if (opts.log)
    *opts.log << "annotate-serve: listening on http://" << cfg.annotate.host << ":" << cfg.annotate.port << "\n";
  server.run(cfg.annotate.host, cfg.annotate.port);
  return outcome;
}

}  // namespace

std::unique_ptr<annotation::AnnotationService> make_annotation_service(const RunConfig& cfg) {
  const std::vector<Input> inputs{artifact(cfg, "match/pairs.csv", "match"),
                                  artifact(cfg, "ingest/documents.jsonl", "ingest"),
                                  artifact(cfg, "ingest/comments.jsonl", "ingest")};
  require_inputs(Stage::annotate_serve, inputs);
  if (cfg.annotate.annotators.empty()) throw Error("annotate-serve: annotate.annotators is empty");
  const auto loaded = corpus::load_corpus(inputs[1].path, inputs[2].path);
  std::map<std::string, const corpus::Document*> docs;
  for (const auto& d : loaded.documents) docs[d.id] = &d;
  const auto pairs = read_pairs(inputs[0].path);
  std::vector<annotation::AnnotationPair> items;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto* a = docs.at(pairs[i].treated_id);
    const auto* b = docs.at(pairs[i].control_id);
    items.push_back({"pair" + std::to_string(i), {a->id, a->title, a->body}, {b->id, b->title, b->body}});
  }
  items = annotation::sample_pairs(std::move(items), cfg.annotate.pairs, stage_seed(cfg, "annotate"));
  annotation::ServiceOptions so;
  so.raters_per_pair = cfg.annotate.raters_per_pair;
  so.seed = stage_seed(cfg, "annotate-order");
  so.admin_key = cfg.annotate.admin_key;
  return std::make_unique<annotation::AnnotationService>(std::move(items), cfg.annotate.annotators,
                                                         cfg.output_dir / "annotate/log.jsonl", so);
}

StageOutcome run_stage(Stage stage, const RunConfig& cfg, const RunOptions& opts) {
  OutputLock lock(cfg.output_dir);
  switch (stage) {
    case Stage::synth: return stage_synth(cfg, opts);
    case Stage::ingest: return stage_ingest(cfg, opts);
    case Stage::extract: return stage_extract(cfg, opts);
    case Stage::topics: return stage_topics(cfg, opts);
    case Stage::embed: return stage_embed(cfg, opts);
    case Stage::propensity: return stage_propensity(cfg, opts);
    case Stage::match: return stage_match(cfg, opts);
    case Stage::estimate: return stage_estimate(cfg, opts);
    case Stage::report: return stage_report(cfg, opts);
    case Stage::annotate_serve: return stage_annotate(cfg, opts);
  }
  throw Error("unknown stage");
}

std::vector<StageOutcome> run_stages(const std::vector<Stage>& stages, const RunConfig& cfg, const RunOptions& opts) {
  std::vector<StageOutcome> out;
  for (Stage s : stages) out.push_back(run_stage(s, cfg, opts));
  return out;
}

std::vector<std::string> verify_manifest(const RunConfig& cfg, Stage stage) {
  const auto mpath = manifest_path(cfg, stage);
  if (!fs::exists(mpath)) throw Error("no manifest for stage '" + std::string(to_string(stage)) + "'");
  const auto m = ojson::parse(io::read_file(mpath));
  // input names map back to paths the same way the stage resolved them
  std::map<std::string, fs::path> known{
      {"submissions", cfg.paths.submissions.empty() ? cfg.output_dir / "synth/submissions.jsonl" : cfg.paths.submissions},
      {"comments", cfg.paths.comments.empty() ? cfg.output_dir / "synth/comments.jsonl" : cfg.paths.comments},
      {"bots", cfg.paths.bots.empty() ? cfg.output_dir / "synth/bots.txt" : cfg.paths.bots},
      {"stopwords", data_file(cfg.paths.stopwords, "stopwords.txt")},
      {"stems", data_file(cfg.paths.stems, "stems.tsv")},
      {"lexicon", data_file(cfg.paths.lexicon, "gender_lexicon.txt")},
      {"embeddings", cfg.paths.embeddings}};
  std::vector<std::string> bad;
  for (const auto& [name, h] : m.at("inputs").items()) {
    const fs::path p = known.count(name) ? known[name] : cfg.output_dir / name;
    if (!fs::exists(p) || io::sha256_file(p) != h.get<std::string>()) bad.push_back(name);
  }
  for (const auto& [rel, h] : m.at("outputs").items()) {
    const fs::path p = cfg.output_dir / rel;
    if (!fs::exists(p) || io::sha256_file(p) != h.get<std::string>()) bad.push_back(rel);
  }
  return bad;
}

}  // namespace moralmatch::pipeline
