#include "moralmatch/synth.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>
#include <unordered_set>

#include "moralmatch/common.hpp"
#include "moralmatch/io.hpp"

namespace moralmatch::synth {

namespace {

// Keyed stream: the k-th draw for a document depends only on (seed, doc, k).
class Stream {
 public:
  explicit Stream(std::uint64_t key) : key_(key) {}
  double uniform() { return unit_interval(derive_seed(key_, {counter_++})); }
  std::size_t index(std::size_t n) {
    return std::min(n - 1, static_cast<std::size_t>(uniform() * static_cast<double>(n)));
  }
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  std::size_t categorical(const std::vector<double>& p) {
    double u = uniform(), acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc += p[i];
      if (u < acc) return i;
    }
    return p.size() - 1;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

std::vector<std::string> pseudo_words(std::size_t n, std::unordered_set<std::string>& taken, Stream& rng) {
  static constexpr std::string_view consonants = "bdfgklmnprstvz";
  static constexpr std::string_view vowels = "aeiou";
  std::vector<std::string> out;
  while (out.size() < n) {
    std::string w;
    for (int s = 0; s < 3; ++s) {
      w += consonants[rng.index(consonants.size())];
      w += vowels[rng.index(vowels.size())];
    }
    if (taken.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_docs < 10) throw Error("synth: n_docs must be at least 10");
  if (situations.empty()) throw Error("synth: no situations configured");
  const std::size_t k = situations.size();
  if (situation_skew.size() != k || situation_base_rates.size() != k)
    throw Error("synth: need one skew and one base rate per situation");
  if (!situation_prior.empty() && situation_prior.size() != k)
    throw Error("synth: situation_prior must be empty or have one entry per situation");
  auto prob = [](double p, const std::string& what) {
    if (!(p >= 0 && p <= 1)) throw Error("synth: " + what + " must lie in [0, 1]");
  };
  for (std::size_t s = 0; s < k; ++s) {
    prob(situation_skew[s], "situation_skew[" + std::to_string(s) + "]");
    prob(situation_base_rates[s], "situation_base_rates[" + std::to_string(s) + "]");
    if (!situation_prior.empty() && !(situation_prior[s] >= 0)) throw Error("synth: negative situation prior");
    if (situations[s].vocabulary.empty()) throw Error("synth: situation '" + situations[s].name + "' has no words");
    if (situations[s].min_words < 1 || situations[s].max_words < situations[s].min_words)
      throw Error("synth: bad length range for situation '" + situations[s].name + "'");
  }
  if (!(direct_effect >= -1 && direct_effect <= 1)) throw Error("synth: direct_effect must lie in [-1, 1]");
  prob(treated_fraction, "treated_fraction");
  prob(filler_fraction, "filler_fraction");
  prob(partner_probability, "partner_probability");
  if (filler_fraction > 0 && filler.empty()) throw Error("synth: filler_fraction > 0 but no filler words");
  if (age.min_age < 10 || age.max_age > 99 || age.min_age > age.max_age)
    throw Error("synth: ages must lie within 10..99");
  std::unordered_set<std::string> seen;
  for (const auto& s : situations)
    for (const auto& w : s.vocabulary)
      if (!seen.insert(w).second) throw Error("synth: word '" + w + "' appears in more than one situation");
  situation_given(*this, true);
  situation_given(*this, false);
}

SynthConfig make_config(std::size_t count, std::size_t words_per_situation, std::size_t filler_words,
                        std::uint64_t vocabulary_seed) {
  SynthConfig cfg;
  Stream rng(derive_seed(vocabulary_seed, {0x70ca}));
  std::unordered_set<std::string> taken;
  for (std::size_t s = 0; s < count; ++s) {
    Situation sit;
    sit.name = "situation" + std::to_string(s);
    sit.vocabulary = pseudo_words(words_per_situation, taken, rng);
    cfg.situations.push_back(std::move(sit));
  }
  cfg.filler = pseudo_words(filler_words, taken, rng);
  cfg.situation_skew.assign(count, 0.5);
  cfg.situation_base_rates.assign(count, 0.5);
  return cfg;
}

std::vector<double> situation_given(const SynthConfig& config, bool treated) {
  const std::size_t k = config.situations.size();
  std::vector<double> p(k);
  for (std::size_t s = 0; s < k; ++s) {
    const double prior = config.situation_prior.empty() ? 1.0 : config.situation_prior[s];
    p[s] = prior * (treated ? config.situation_skew[s] : 1.0 - config.situation_skew[s]);
  }
  const double z = std::accumulate(p.begin(), p.end(), 0.0);
  if (!(z > 0)) throw Error(std::string("synth: no situation can occur for ") + (treated ? "treated" : "control") + " authors");
  for (auto& v : p) v /= z;
  return p;
}

SynthCorpus generate(const SynthConfig& config) {
  config.validate();
  const auto p_treated = situation_given(config, true);
  const auto p_control = situation_given(config, false);
  SynthCorpus out;
  out.bots = {"AutoModerator"};
  out.documents.reserve(config.n_docs);
  for (std::size_t i = 0; i < config.n_docs; ++i) {
    Stream rng(derive_seed(config.seed, {0xd0c, i}));
    SynthDocument d;
    d.treated = rng.uniform() < config.treated_fraction;
    d.situation = rng.categorical(d.treated ? p_treated : p_control);
    const auto& sit = config.situations[d.situation];
    d.situation_name = sit.name;
    const double mean = d.treated ? config.age.treated_mean : config.age.control_mean;
    const double sd = d.treated ? config.age.treated_sd : config.age.control_sd;
    d.age = std::clamp(static_cast<int>(std::lround(mean + sd * rng.normal())), config.age.min_age, config.age.max_age);
    const double base = config.situation_base_rates[d.situation];
    d.outcome_probability = clamp01(base + (d.treated ? config.direct_effect : 0.0));
    d.outcome = rng.uniform() < d.outcome_probability ? 1 : 0;

    auto word = [&] {
      if (rng.uniform() < config.filler_fraction) return config.filler[rng.index(config.filler.size())];
      return sit.vocabulary[rng.index(sit.vocabulary.size())];
    };
    const auto n_words = static_cast<std::size_t>(sit.min_words) +
                         rng.index(static_cast<std::size_t>(sit.max_words - sit.min_words + 1));
    const bool partner = rng.uniform() < config.partner_probability;
    const std::size_t partner_at = partner ? rng.index(n_words) : n_words;
    std::string body = "I (" + std::to_string(d.age) + (d.treated ? "M" : "F") + ")";
    std::size_t since_stop = 0;
    for (std::size_t w = 0; w < n_words; ++w) {
      if (w == partner_at) {
        body += d.treated ? " my wife" : " my husband";
        since_stop += 2;
      }
      body += ' ';
      body += word();
      if (++since_stop >= 12 && w + 1 < n_words) {
        body += '.';
        since_stop = 0;
      }
    }
    body += '.';
    std::string title = "AITA for";
    for (int w = 0; w < 4; ++w) title += " " + sit.vocabulary[rng.index(sit.vocabulary.size())];
    title += '?';

    d.document.id = "s" + std::to_string(i);
    d.document.author_id = "author" + std::to_string(i);
    d.document.created_at = 1577836800 + static_cast<std::int64_t>(i) * 60;
    d.document.title = std::move(title);
    d.document.body = std::move(body);
    d.document.word_count = corpus::count_words(d.document.body);

    const std::string& id = d.document.id;
    out.comments.push_back({"c" + std::to_string(i) + "a", id, "reader" + std::to_string(i), d.outcome ? "YTA" : "NTA", 10});
    out.comments.push_back({"c" + std::to_string(i) + "b", id, "AutoModerator", "NTA", 50});
    out.documents.push_back(std::move(d));
  }
  return out;
}

double oracle_satt(const SynthConfig& config) {
  config.validate();
  const auto p = situation_given(config, true);
  double sum = 0.0;
  for (std::size_t s = 0; s < p.size(); ++s) {
    const double base = config.situation_base_rates[s];
    sum += p[s] * (clamp01(base + config.direct_effect) - clamp01(base));
  }
  return sum;
}

double analytic_crude_or(const SynthConfig& config) {
  config.validate();
  const auto pt = situation_given(config, true);
  const auto pc = situation_given(config, false);
  double yt = 0.0, yc = 0.0;
  for (std::size_t s = 0; s < pt.size(); ++s) {
    const double base = config.situation_base_rates[s];
    yt += pt[s] * clamp01(base + config.direct_effect);
    yc += pc[s] * clamp01(base);
  }
  return (yt / (1.0 - yt)) / (yc / (1.0 - yc));
}

void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string subs, comments, truth = io::csv_row({"doc_id", "treated", "age", "situation", "outcome_probability", "outcome"});
  for (const auto& d : corpus.documents) {
    nlohmann::ordered_json rec;
    rec["id"] = d.document.id;
    rec["author"] = d.document.author_id;
    rec["created_utc"] = d.document.created_at;
    rec["title"] = d.document.title;
    rec["selftext"] = d.document.body;
    subs += rec.dump() + "\n";
    truth += io::csv_row({d.document.id, d.treated ? "1" : "0", std::to_string(d.age), d.situation_name,
                          format_double(d.outcome_probability), std::to_string(d.outcome)});
  }
  for (const auto& c : corpus.comments) {
    nlohmann::ordered_json rec;
    rec["id"] = c.id;
    rec["link_id"] = "t3_" + c.document_id;
    rec["author"] = c.author_id;
    rec["body"] = c.body;
    rec["score"] = c.score;
    comments += rec.dump() + "\n";
  }
  std::string bots;
  for (const auto& b : corpus.bots) bots += b + "\n";
  io::write_file_atomic(dir / "submissions.jsonl", subs);
  io::write_file_atomic(dir / "comments.jsonl", comments);
  io::write_file_atomic(dir / "bots.txt", bots);
  io::write_file_atomic(dir / "truth.csv", truth);
}

}  // namespace moralmatch::synth
