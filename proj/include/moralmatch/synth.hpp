#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "moralmatch/corpus.hpp"

namespace moralmatch::synth {

struct Situation {
  std::string name;
  std::vector<std::string> vocabulary;
  int min_words = 100;
  int max_words = 160;
};

/// Normal age model per group, rounded and clamped to [min_age, max_age].
struct AgeModel {
  double treated_mean = 30.0;
  double treated_sd = 6.0;
  double control_mean = 30.0;
  double control_sd = 6.0;
  int min_age = 18;
  int max_age = 80;
};

struct SynthConfig {
  std::size_t n_docs = 1000;
  double direct_effect = 0.0;
  std::vector<double> situation_skew;  // treated share per situation
  std::vector<double> situation_base_rates;
  std::vector<Situation> situations;
  std::vector<double> situation_prior;  // empty means uniform
  double treated_fraction = 0.5;
  AgeModel age;
  std::vector<std::string> filler;
  double filler_fraction = 0.3;
  double partner_probability = 0.2;  // "my wife" / "my husband" in the body
  std::uint64_t seed = 0;

  void validate() const;
};

/// `count` situations with disjoint pseudo-word vocabularies and a shared
/// filler list, skew and base rates left for the caller to fill.
SynthConfig make_config(std::size_t count, std::size_t words_per_situation, std::size_t filler_words,
                        std::uint64_t vocabulary_seed = 0);

struct SynthDocument {
  corpus::Document document;
  bool treated = false;  // male author
  int age = 0;
  std::size_t situation = 0;
  std::string situation_name;
  double outcome_probability = 0.0;
  int outcome = 0;  // 1 = judged at fault
};

struct SynthCorpus {
  std::vector<SynthDocument> documents;
  std::vector<corpus::Comment> comments;
  std::vector<std::string> bots;
};

SynthCorpus generate(const SynthConfig& config);

/// P(situation | treated) and P(situation | control).
std::vector<double> situation_given(const SynthConfig& config, bool treated);

/// Sum over situations of P(s | treated) * (clamped treated rate - clamped control rate).
double oracle_satt(const SynthConfig& config);

/// Population odds ratio of a negative verdict, treated vs control.
double analytic_crude_or(const SynthConfig& config);

/// submissions.jsonl, comments.jsonl, bots.txt and truth.csv in `dir`.
void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir);

}  // namespace moralmatch::synth
