#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "moralmatch/corpus.hpp"
#include "moralmatch/synth.hpp"

namespace moralmatch::config {

namespace fs = std::filesystem;

struct Paths {
  // empty submissions/comments/bots fall back to the synth stage output
  fs::path submissions, comments, bots;
  // empty lexicon/stopwords/stems fall back to the bundled data files
  fs::path lexicon, stopwords, stems;
  fs::path embeddings;  // external vectors, used when embed.source = "external"
};

struct Filter {
  std::size_t min_words = 100;
  std::size_t max_words = 3000;
};

struct Extract {
  long long min_weight = 10;
  std::size_t pronoun_window = 3;
};

struct Topics {
  std::vector<int> k_candidates = {2, 3, 4, 5, 6, 7, 8, 9, 10};
  int folds = 5;
  int iterations = 1000;
  std::optional<double> alpha;
  double beta = 0.01;
  double threshold = 0.4;
  int burn_in = 100;
  int samples = 20;
  double max_doc_fraction = 0.5;
  std::size_t min_doc_count = 10;
};

struct Embed {
  std::string source = "builtin";  // or "external"
  std::size_t dims = std::size_t{1} << 18;
  std::optional<std::size_t> reduce_to = 256;
  bool include_title = true;
};

struct Propensity {
  int epochs = 30;
  double learning_rate = 0.1;
  double aug_prob = 0.5;
  double holdout_fraction = 0.1;
  int patience = 3;
};

struct Match {
  double d_max = 0.25;
  int age_delta = 5;
};

struct Estimate {
  std::vector<double> d_max_values = {0.15, 0.2, 0.25, 0.3, 0.35};
  std::size_t bootstrap = 1000;
  double level = 0.95;
};

struct Report {
  int age_bins = 5;
  std::vector<int> age_edges;  // explicit lower bounds of bins 2..n; overrides age_bins
  long long min_cell = 5;
};

struct Synth {
  std::size_t n_docs = 4000;
  double direct_effect = 0.0;
  std::vector<double> situation_skew = {0.7, 0.3};
  std::vector<double> situation_base_rates = {0.6, 0.2};
  std::vector<double> situation_prior;
  std::size_t words_per_situation = 40;
  std::size_t filler_words = 25;
  double filler_fraction = 0.3;
  double partner_probability = 0.2;
  double treated_fraction = 0.5;
  int min_words = 100;
  int max_words = 160;
  synth::AgeModel age;

  synth::SynthConfig to_synth_config(std::uint64_t seed) const;
};

struct Annotate {
  std::size_t pairs = 100;
  std::size_t raters_per_pair = 3;
  std::vector<std::string> annotators;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string admin_key;
};

struct RunConfig {
  fs::path output_dir;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  Paths paths;
  corpus::SubmissionFields submission_fields;
  corpus::CommentFields comment_fields;
  Filter filter;
  Extract extract;
  Topics topics;
  Embed embed;
  Propensity propensity;
  Match match;
  Estimate estimate;
  Report report;
  Synth synth;
  Annotate annotate;
};

/// Unknown keys and wrong types are fatal; messages carry the field path.
/// Relative paths resolve against `base_dir`.
RunConfig parse_config(std::string_view json_text, const fs::path& base_dir = {});
RunConfig load_config(const fs::path& path);

/// Every parameter, for manifests.
nlohmann::ordered_json to_json(const RunConfig& config);

}  // namespace moralmatch::config
