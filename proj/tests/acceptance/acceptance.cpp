// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../support/corpora.hpp"
#include "../support/oracles.hpp"
#include "../support/tag_fixtures.hpp"
#include "../support/tempdir.hpp"
#include "moralmatch/common.hpp"
#include "moralmatch/config.hpp"
#include "moralmatch/embedding.hpp"
#include "moralmatch/extraction.hpp"
#include "moralmatch/io.hpp"
#include "moralmatch/matching.hpp"
#include "moralmatch/pipeline.hpp"
#include "moralmatch/propensity.hpp"
#include "moralmatch/stats.hpp"
#include "moralmatch/synth.hpp"
#include "moralmatch/topics.hpp"

namespace mm = moralmatch;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  if (!pass) ++failures;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

// --- pipeline runs ----------------------------------------------------------

std::string pipeline_config(const fs::path& out, std::uint64_t seed, double effect) {
  // two situations, skew 0.7/0.3, base rates 0.6/0.2 (the synth defaults), 2000 per arm
  return R"({"output_dir": ")" + out.string() + R"(", "seed": )" + std::to_string(seed) + R"(,
    "synth": {"n_docs": 4000, "direct_effect": )" + fmt(effect, 17) + R"(},
    "topics": {"k_candidates": [2], "iterations": 150}})";
}

std::vector<mm::pipeline::Stage> all_stages() {
  std::vector<mm::pipeline::Stage> s{mm::pipeline::Stage::synth};
  for (auto x : mm::pipeline::analysis_stages()) s.push_back(x);
  return s;
}

struct RunResult {
  double satt = 0, ci_low = 0, ci_high = 0, seconds = 0;
  std::size_t pairs = 0;
  double crude_or = 0, analytic_or = 0, oracle_satt = 0;
};

RunResult run_pipeline(std::uint64_t seed, double effect, const fs::path& out) {
  const auto cfg = mm::config::parse_config(pipeline_config(out, seed, effect));
  const auto start = Clock::now();
  mm::pipeline::run_stages(all_stages(), cfg);
  RunResult r;
  r.seconds = seconds_since(start);
  const auto satt = mm::io::read_csv(out / "estimate/satt.csv");
  const auto& row = satt.rows.at(0);
  r.satt = mm::parse_double(row[satt.column("satt")]);
  r.ci_low = mm::parse_double(row[satt.column("ci_low")]);
  r.ci_high = mm::parse_double(row[satt.column("ci_high")]);
  r.pairs = static_cast<std::size_t>(mm::parse_int(row[satt.column("n_pairs")]));
  const auto crude = mm::io::read_csv(out / "report/crude_or.csv");
  for (const auto& c : crude.rows)
    if (c[crude.column("stratum")] == "all") r.crude_or = mm::parse_double(c[crude.column("odds_ratio")]);
  const auto oracle = mm::io::read_csv(out / "synth/oracle.csv");
  r.analytic_or = mm::parse_double(oracle.rows.at(0)[oracle.column("analytic_crude_or")]);
  r.oracle_satt = mm::parse_double(oracle.rows.at(0)[oracle.column("oracle_satt")]);
  return r;
}

void null_and_mediation() {
  const int runs = 100;
  int covered = 0;
  double slowest = 0, mean_satt = 0;
  RunResult first;
  for (int i = 0; i < runs; ++i) {
    testing_support::TempDir dir("acc-null");
    const auto r = run_pipeline(static_cast<std::uint64_t>(i + 1), 0.0, dir / "out");
    if (i == 0) first = r;
    covered += r.ci_low <= 0.0 && 0.0 <= r.ci_high;
    slowest = std::max(slowest, r.seconds);
    mean_satt += r.satt / runs;
  }
  report("null-effect recovery", covered >= 90 && slowest < 120,
         std::to_string(covered) + "/100 intervals cover 0; mean SATT " + fmt(mean_satt) + "; slowest run " +
             fmt(slowest, 3) + " s");

  const double rel = std::abs(first.crude_or - first.analytic_or) / first.analytic_or;
  const bool ci_covers = first.ci_low <= 0.0 && 0.0 <= first.ci_high;
  report("mediation demonstration", rel <= 0.10 && first.analytic_or > 1.5 && ci_covers,
         "crude OR " + fmt(first.crude_or) + " vs analytic " + fmt(first.analytic_or) + " (" + fmt(100 * rel, 3) +
             "% off); matched SATT " + fmt(first.satt) + " CI [" + fmt(first.ci_low) + ", " + fmt(first.ci_high) +
             "] on " + std::to_string(first.pairs) + " pairs");
}

void planted() {
  const int runs = 20;
  double mean = 0, oracle = 0;
  for (int i = 0; i < runs; ++i) {
    testing_support::TempDir dir("acc-planted");
    const auto r = run_pipeline(static_cast<std::uint64_t>(1001 + i), 0.15, dir / "out");
    mean += r.satt / runs;
    oracle = r.oracle_satt;
  }
  report("planted-effect recovery", std::abs(mean - 0.15) <= 0.05,
         "mean SATT over 20 runs " + fmt(mean) + " (planted 0.15, oracle " + fmt(oracle) + ")");
}

void determinism() {
  testing_support::TempDir a("acc-det"), b("acc-det");
  run_pipeline(77, 0.1, a / "out");
  run_pipeline(77, 0.1, b / "out");
  std::size_t files = 0;
  std::vector<std::string> differing;
  for (const auto& entry : fs::recursive_directory_iterator(a / "out")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a / "out");
    ++files;
    const auto other = b / "out" / rel;
    if (!fs::exists(other) || mm::io::sha256_file(entry.path()) != mm::io::sha256_file(other))
      differing.push_back(rel.string());
  }
  std::size_t files_b = 0;
  for (const auto& entry : fs::recursive_directory_iterator(b / "out")) files_b += entry.is_regular_file();
  std::string detail = std::to_string(files) + " files compared";
  for (const auto& d : differing) detail += "; differs: " + d;
  if (files_b != files) detail += "; file counts differ";
  report("determinism", differing.empty() && files == files_b && files > 0, detail);
}

// --- component criteria -----------------------------------------------------

void matching_optimality() {
  std::mt19937_64 rng(20240601);
  int agree = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t nt = 0, nc = 0;
    const auto edges = oracle::random_instance(rng, nt, nc);
    const auto best = oracle::brute_force_matching(nt, nc, edges);
    const auto m = mm::matching::solve_matching(nt, nc, edges);
    double w = 0;
    for (const auto& e : m) w += e.weight;
    agree += m.size() == best.cardinality && w == best.weight;
  }
  report("matching optimality", agree == 200, std::to_string(agree) + "/200 instances equal exhaustive enumeration");
}

void fisher() {
  std::size_t tables = 0, bad = 0;
  double worst = 0;
  for (long long n = 0; n <= 40; ++n)
    for (long long a = 0; a <= n; ++a)
      for (long long b = 0; a + b <= n; ++b)
        for (long long c = 0; a + b + c <= n; ++c) {
          const long long d = n - a - b - c;
          if (a + b == 0 || c + d == 0 || a + c == 0 || b + d == 0) continue;
          ++tables;
          const double p = mm::stats::fisher_exact_p({a, b, c, d});
          const double o = oracle::fisher_p(a, b, c, d);
          const double rel = std::abs(p - o) / o;
          worst = std::max(worst, rel);
          bad += rel > 1e-12;
        }
  report("fisher exact", bad == 0,
         std::to_string(tables) + " tables, worst relative error " + fmt(worst, 3) + ", " + std::to_string(bad) +
             " above 1e-12");
}

void caliper() {
  const double unit = mm::propensity::caliper_from_moments(1.0, 1.0, 2, 2).c;
  const std::vector<double> t{0, 2}, c{1, 3};
  const double derived = mm::propensity::compute_caliper(t, c).c;
  const double err = std::abs(derived - 0.2 * std::sqrt(2.0));
  report("caliper formula", unit == 0.2 && err <= 1e-12,
         "unit case " + fmt(unit, 17) + "; derived case off by " + fmt(err, 3));
}

void breslow_day() {
  const std::vector<mm::stats::Table2x2> same{{12, 5, 7, 9}, {12, 5, 7, 9}, {12, 5, 7, 9}};
  const auto h = mm::stats::breslow_day(same);
  const std::vector<mm::stats::Table2x2> het{{6, 6, 6, 6}, {10, 2, 2, 10}};
  const auto r = mm::stats::breslow_day(het);
  report("breslow-day", h.chi2 < 1e-9 && r.p_value < 0.05,
         "identical strata chi2 " + fmt(h.chi2, 3) + "; heterogeneous chi2 " + fmt(r.chi2) + ", p " + fmt(r.p_value));
}

void reml() {
  // residual group means are exactly zero
  Eigen::VectorXd y(24);
  Eigen::MatrixXd x(24, 2);
  std::vector<int> g;
  const double noise[3] = {-1.0, 0.25, 0.75};
  for (int i = 0; i < 24; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = i % 3;
    y[i] = 1.5 - 0.4 * (i % 3) + noise[i % 3] * (i / 3 % 2 ? 1 : -1);
    g.push_back(i / 3);
  }
  const auto zero = mm::stats::reml_random_intercept(y, x, {"intercept", "x"}, g);
  const Eigen::VectorXd beta = oracle::ols(y, x);
  const double ols_err = (zero.coefficients - beta).cwiseAbs().maxCoeff();

  std::mt19937_64 rng(99);
  std::normal_distribution<double> n;
  const int groups = 30, per = 8;
  Eigen::VectorXd y2(groups * per);
  Eigen::MatrixXd x2(groups * per, 2);
  std::vector<int> g2;
  for (int k = 0; k < groups; ++k) {
    const double u = 1.3 * n(rng);
    for (int i = 0; i < per; ++i) {
      const int row = k * per + i;
      x2(row, 0) = 1.0;
      x2(row, 1) = n(rng);
      y2[row] = 0.5 + x2(row, 1) + u + n(rng);
      g2.push_back(k);
    }
  }
  const auto fit = mm::stats::reml_random_intercept(y2, x2, {"intercept", "x"}, g2);
  double grid_best = -INFINITY;
  for (int i = 0; i < 100; ++i) grid_best = std::max(grid_best, oracle::reml_loglik(y2, x2, g2, i * 0.05));
  const double own = oracle::reml_loglik(y2, x2, g2, fit.variance_ratio);
  report("reml", ols_err <= 1e-6 && own >= grid_best - 1e-6,
         "zero group variance vs OLS max diff " + fmt(ols_err, 3) + "; optimum loglik " + fmt(own, 10) +
             " vs best of 100 grid points " + fmt(grid_best, 10));
}

void tag_extraction() {
  const auto& cases = fixtures::tag_cases();
  std::size_t ok = 0;
  std::map<int, std::size_t> per_rule;
  for (const auto& c : cases) {
    const bool match = mm::extraction::extract_judgment_tags(c.body) == c.expected;
    ok += match;
    ++per_rule[c.rule];
    if (!match) std::cout << "  mismatch: " << c.body << "\n";
  }
  std::string detail = std::to_string(ok) + "/" + std::to_string(cases.size()) + " fixtures agree (per rule:";
  for (const auto& [rule, count] : per_rule) detail += " " + std::to_string(rule) + "=" + std::to_string(count);
  report("tag extraction", ok == cases.size() && cases.size() >= 40, detail + ")");
}

void neutralization() {
  const auto lexicon = mm::extraction::GenderLexicon::load_default();
  std::string detail;
  bool pass = true;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto train = corpora::gendered_word(1000, seed);
    const auto test = corpora::gendered_word(1000, seed + 500);
    // the vocabulary covers both forms of every gendered word
    std::vector<std::string> fit_texts = train.texts;
    for (const auto& t : train.texts) fit_texts.push_back(mm::extraction::swap_all_gendered_words(t, lexicon));
    mm::embedding::BuiltinOptions eo;
    eo.dims = 1 << 12;
    eo.reduce_to = std::nullopt;
    const auto emb = mm::embedding::HashedTfidfEmbedder::fit(fit_texts, eo);
    const mm::propensity::EmbedFn f = [&](std::string_view t) { return emb.embed(t); };
    double acc[2];
    for (int k = 0; k < 2; ++k) {
      mm::propensity::TrainOptions o;
      o.aug_prob = k == 0 ? 0.5 : 0.0;
      o.seed = seed;
      const auto model = mm::propensity::train_propensity(train.texts, train.labels, lexicon, f, o);
      std::size_t right = 0;
      for (std::size_t i = 0; i < test.texts.size(); ++i) {
        const Eigen::VectorXd v = emb.embed(test.texts[i]);
        const double p = mm::propensity::predict_propensity(model, {v.data(), static_cast<std::size_t>(v.size())});
        right += (p >= 0.5) == (test.labels[i] == 1);
      }
      acc[k] = static_cast<double>(right) / static_cast<double>(test.texts.size());
    }
    pass = pass && acc[0] >= 0.45 && acc[0] <= 0.55 && acc[1] > 0.95;
    detail += (seed > 1 ? "; " : "") + std::string("seed ") + std::to_string(seed) + " aug " + fmt(acc[0], 3) +
              " plain " + fmt(acc[1], 3);
  }
  report("neutralization", pass, detail);
}

void lda() {
  const auto corpus = corpora::two_vocabulary(200, 400, 50, 2024);
  mm::topics::LdaOptions base;
  base.iterations = 200;
  base.seed = 1;
  const mm::topics::InferOptions inf{100, 20, 3};
  const auto sel = mm::topics::select_k(corpus.docs, corpus.vocab_size, {2, 4, 8}, 5, base, inf);
  base.num_topics = sel.best;
  const auto fit = mm::topics::lda_fit(corpus.docs, corpus.vocab_size, base);
  std::size_t separated = 0;
  std::vector<int> topic_of(2, -1);
  for (std::size_t d = 0; d < corpus.docs.size(); ++d) {
    const auto dist = mm::topics::lda_infer(fit.model, corpus.docs[d], inf).distribution;
    const auto arg = static_cast<int>(std::max_element(dist.begin(), dist.end()) - dist.begin());
    if (dist[static_cast<std::size_t>(arg)] <= 0.9) continue;
    auto& t = topic_of[static_cast<std::size_t>(corpus.source[d])];
    if (t < 0) t = arg;
    separated += t == arg;
  }
  const double share = static_cast<double>(separated) / static_cast<double>(corpus.docs.size());
  std::string scores;
  for (const auto& s : sel.scores) scores += " K=" + std::to_string(s.num_topics) + ":" + fmt(s.mean, 5);
  report("lda", sel.best == 2 && share >= 0.95 && topic_of[0] != topic_of[1],
         "selected K=" + std::to_string(sel.best) + " (perplexity" + scores + "); " + fmt(100 * share, 4) +
             "% of documents separated at > 0.9");
}

}  // namespace

// Arguments, when given, name the checks to run (for example "lda neutralization").
int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, void (*)()>> checks{
      {"matching", matching_optimality}, {"fisher", fisher},
      {"caliper", caliper},              {"breslow-day", breslow_day},
      {"reml", reml},                    {"tags", tag_extraction},
      {"neutralization", neutralization}, {"lda", lda},
      {"determinism", determinism},      {"null", null_and_mediation},
      {"planted", planted}};
  const std::vector<std::string> wanted(argv + 1, argv + argc);
  const auto start = Clock::now();
  for (const auto& [name, run] : checks)
    if (wanted.empty() || std::find(wanted.begin(), wanted.end(), name) != wanted.end()) run();
  std::cout << "total time " << fmt(seconds_since(start), 4) << " s; " << failures << " criteria failed" << std::endl;
  return failures == 0 ? 0 : 1;
}
