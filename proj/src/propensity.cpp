#include "moralmatch/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include "moralmatch/common.hpp"
#include "moralmatch/io.hpp"

namespace moralmatch::propensity {

namespace {

constexpr std::size_t kBlock = 256;

double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// log(1 + exp(-z)) without overflow
double softplus_neg(double z) {
  return z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

struct Sample {
  const Eigen::VectorXd* x;
  double y;
  double w;
};

struct GradientSum {
  Eigen::VectorXd gw;
  double gb = 0.0;
  double loss = 0.0;
};

GradientSum block_gradient(std::span<const Sample> block, const Eigen::VectorXd& w, double b) {
  GradientSum g{Eigen::VectorXd::Zero(w.size()), 0.0, 0.0};
  for (const auto& s : block) {
    const double z = w.dot(*s.x) + b;
    const double r = s.w * (sigmoid(z) - s.y);
    g.gw += r * *s.x;
    g.gb += r;
    g.loss += s.w * (s.y > 0.5 ? softplus_neg(z) : softplus_neg(-z));
  }
  return g;
}

// Sums are formed per fixed block and reduced in block order, so the result
// does not depend on the number of threads.
GradientSum gradient(std::span<const Sample> samples, const Eigen::VectorXd& w, double b,
                     unsigned threads) {
  const std::size_t n_blocks = (samples.size() + kBlock - 1) / kBlock;
  std::vector<GradientSum> parts(n_blocks);
  auto run = [&](std::size_t first, std::size_t last) {
    for (std::size_t k = first; k < last; ++k) {
      const std::size_t lo = k * kBlock;
      const std::size_t hi = std::min(samples.size(), lo + kBlock);
      parts[k] = block_gradient(samples.subspan(lo, hi - lo), w, b);
    }
  };
  if (threads <= 1 || n_blocks < 2) {
    run(0, n_blocks);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t per = (n_blocks + threads - 1) / threads;
    for (std::size_t first = 0; first < n_blocks; first += per)
      pool.emplace_back(run, first, std::min(n_blocks, first + per));
  }
  GradientSum total{Eigen::VectorXd::Zero(w.size()), 0.0, 0.0};
  for (auto& p : parts) {
    total.gw += p.gw;
    total.gb += p.gb;
    total.loss += p.loss;
  }
  return total;
}

}  // namespace

PropensityModel train_propensity(std::span<const std::string> texts, std::span<const int> treated,
                                 const extraction::GenderLexicon& lexicon, const EmbedFn& embed,
                                 const TrainOptions& options) {
  if (texts.size() != treated.size()) throw Error("train_propensity: texts and labels differ in length");
  if (options.epochs < 1) throw Error("train_propensity: epochs must be positive");
  if (!(options.learning_rate > 0)) throw Error("train_propensity: learning rate must be positive");
  if (options.aug_prob < 0 || options.aug_prob > 1) throw Error("train_propensity: aug_prob outside [0,1]");
  const std::size_t n = texts.size();
  const auto n_treated = static_cast<std::size_t>(std::count(treated.begin(), treated.end(), 1));
  if (n_treated == 0 || n_treated == n) throw Error("train_propensity: need both treated and control documents");

  if (options.leakage_guard) {
    for (std::size_t i = 0; i < n; ++i)
      if (!extraction::find_demographic_tags(texts[i]).empty())
        throw Error("train_propensity: text " + std::to_string(i) +
                    " still carries a demographic tag; strip tags before training");
  }

  // Original and fully swapped embeddings; a per-epoch draw picks one.
  std::vector<Eigen::VectorXd> original(n), swapped(n);
  std::vector<bool> has_twin(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    original[i] = embed(texts[i]);
    if (i > 0 && original[i].size() != original[0].size())
      throw Error("train_propensity: embedding dimension changed between documents");
    if (options.aug_prob > 0) {
      std::string twin = extraction::swap_all_gendered_words(texts[i], lexicon);
      if (twin != texts[i]) {
        swapped[i] = embed(twin);
        has_twin[i] = true;
      }
    }
  }
  const auto dims = original.empty() ? 0 : original[0].size();

  // Held-out slice, chosen by a seeded permutation.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ka = mix64(derive_seed(options.seed, {0x401d, a}));
    const auto kb = mix64(derive_seed(options.seed, {0x401d, b}));
    return ka != kb ? ka < kb : a < b;
  });
  std::size_t n_hold = static_cast<std::size_t>(std::floor(options.holdout_fraction * static_cast<double>(n)));
  if (n - n_hold < 2) n_hold = 0;
  std::vector<bool> held(n, false);
  for (std::size_t k = 0; k < n_hold; ++k) held[order[k]] = true;

  std::size_t train_t = 0, train_c = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (!held[i]) (treated[i] == 1 ? train_t : train_c)++;
  if (train_t == 0 || train_c == 0) throw Error("train_propensity: training slice lost a class");
  const double n_train = static_cast<double>(train_t + train_c);

  PropensityModel model;
  model.class_weights = {n_train / (2.0 * static_cast<double>(train_t)),
                         n_train / (2.0 * static_cast<double>(train_c))};
  model.weights = Eigen::VectorXd::Zero(dims);
  model.meta = {options.epochs, options.learning_rate, options.seed, options.aug_prob, 0, 0.0};

  auto weight_of = [&](std::size_t i) {
    return treated[i] == 1 ? model.class_weights.treated : model.class_weights.control;
  };
  // Held-out loss under the training distribution: a twin enters with weight aug_prob.
  std::vector<Sample> holdout;
  double hold_weight = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (held[i]) {
      const double y = treated[i] == 1;
      const double p = has_twin[i] ? options.aug_prob : 0.0;
      if (p < 1.0) holdout.push_back({&original[i], y, (1.0 - p) * weight_of(i)});
      if (p > 0.0) holdout.push_back({&swapped[i], y, p * weight_of(i)});
      hold_weight += weight_of(i);
    }

  Eigen::VectorXd best_w = model.weights;
  double best_b = 0.0;
  double best_loss = INFINITY;
  int since_best = 0;
  int epochs_run = 0;
  std::vector<Sample> batch;
  batch.reserve(n);
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    batch.clear();
    // Within each class exactly round(aug_prob * m) of the m twinned texts are swapped.
    std::vector<bool> use_twin(n, false);
    for (int cls = 0; cls < 2; ++cls) {
      std::vector<std::pair<std::uint64_t, std::size_t>> draw;
      for (std::size_t i = 0; i < n; ++i)
        if (!held[i] && has_twin[i] && treated[i] == cls)
          draw.push_back({mix64(derive_seed(options.seed, {0xa06, static_cast<std::uint64_t>(epoch), i})), i});
      std::sort(draw.begin(), draw.end());
      const auto k = static_cast<std::size_t>(std::llround(options.aug_prob * static_cast<double>(draw.size())));
      for (std::size_t j = 0; j < k; ++j) use_twin[draw[j].second] = true;
    }
    double total_weight = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (held[i]) continue;
      batch.push_back({use_twin[i] ? &swapped[i] : &original[i], static_cast<double>(treated[i] == 1), weight_of(i)});
      total_weight += weight_of(i);
    }
    auto g = gradient(batch, model.weights, model.bias, options.threads);
    const double loss = g.loss / total_weight;
    if (!std::isfinite(loss))
      throw Error("train_propensity: non-finite training loss at epoch " + std::to_string(epoch) +
                  " (bias " + format_double(model.bias) + ", |w| " + format_double(model.weights.norm()) + ")");
    model.weights -= options.learning_rate * g.gw / total_weight;
    model.bias -= options.learning_rate * g.gb / total_weight;
    ++epochs_run;

    if (holdout.empty()) {
      best_w = model.weights;
      best_b = model.bias;
      best_loss = loss;
      continue;
    }
    const double hold_loss = gradient(holdout, model.weights, model.bias, options.threads).loss / hold_weight;
    if (!std::isfinite(hold_loss))
      throw Error("train_propensity: non-finite held-out loss at epoch " + std::to_string(epoch));
    if (hold_loss < best_loss) {
      best_loss = hold_loss;
      best_w = model.weights;
      best_b = model.bias;
      since_best = 0;
    } else if (++since_best >= options.patience) {
      break;
    }
  }
  model.weights = best_w;
  model.bias = best_b;
  model.meta.epochs_run = epochs_run;
  model.meta.holdout_loss = best_loss;
  return model;
}

double predict_logit(const PropensityModel& model, std::span<const double> v) {
  if (v.size() != static_cast<std::size_t>(model.weights.size()))
    throw Error("predict_propensity: vector has " + std::to_string(v.size()) + " dimensions, model expects " +
                std::to_string(model.weights.size()));
  double z = model.bias;
  for (std::size_t i = 0; i < v.size(); ++i) z += model.weights[static_cast<Eigen::Index>(i)] * v[i];
  return z;
}

double predict_propensity(const PropensityModel& model, std::span<const double> v) {
  return sigmoid(predict_logit(model, v));
}

// ---------------------------------------------------------------------------

std::string PropensityModel::serialize() const {
  std::ostringstream out;
  out << "moralmatch-propensity 1\n";
  out << "epochs " << meta.epochs << "\n";
  out << "learning_rate " << format_double(meta.learning_rate) << "\n";
  out << "seed " << meta.seed << "\n";
  out << "aug_prob " << format_double(meta.aug_prob) << "\n";
  out << "epochs_run " << meta.epochs_run << "\n";
  out << "holdout_loss " << format_double(meta.holdout_loss) << "\n";
  out << "class_weights " << format_double(class_weights.treated) << " " << format_double(class_weights.control)
      << "\n";
  out << "bias " << format_double(bias) << "\n";
  out << "weights " << weights.size();
  for (Eigen::Index i = 0; i < weights.size(); ++i) out << " " << format_double(weights[i]);
  out << "\n";
  return out.str();
}

PropensityModel PropensityModel::deserialize(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != "moralmatch-propensity 1")
    throw Error("propensity model: unrecognized header");
  PropensityModel m;
  bool saw_weights = false;
  while (std::getline(in, line)) {
    auto cols = io::split_whitespace(line);
    if (cols.empty()) continue;
    const std::string key(cols[0]);
    auto need = [&](std::size_t k) {
      if (cols.size() < k + 1) throw Error("propensity model: truncated field '" + key + "'");
    };
    need(1);
    if (key == "epochs") m.meta.epochs = static_cast<int>(parse_int(cols[1]));
    else if (key == "learning_rate") m.meta.learning_rate = parse_double(cols[1]);
    else if (key == "seed") m.meta.seed = std::stoull(std::string(cols[1]));
    else if (key == "aug_prob") m.meta.aug_prob = parse_double(cols[1]);
    else if (key == "epochs_run") m.meta.epochs_run = static_cast<int>(parse_int(cols[1]));
    else if (key == "holdout_loss") m.meta.holdout_loss = parse_double(cols[1]);
    else if (key == "class_weights") {
      need(2);
      m.class_weights = {parse_double(cols[1]), parse_double(cols[2])};
    } else if (key == "bias") m.bias = parse_double(cols[1]);
    else if (key == "weights") {
      const auto d = static_cast<std::size_t>(parse_int(cols[1]));
      need(1 + d);
      m.weights.resize(static_cast<Eigen::Index>(d));
      for (std::size_t i = 0; i < d; ++i) m.weights[static_cast<Eigen::Index>(i)] = parse_double(cols[2 + i]);
      saw_weights = true;
    } else {
      throw Error("propensity model: unknown field '" + key + "'");
    }
  }
  if (!saw_weights) throw Error("propensity model: no weights");
  if (!m.weights.allFinite()) throw Error("propensity model: non-finite weights");
  if (!(m.class_weights.treated > 0 && m.class_weights.control > 0))
    throw Error("propensity model: class weights must be positive");
  return m;
}

void PropensityModel::save(const std::filesystem::path& path) const { io::write_file_atomic(path, serialize()); }

PropensityModel PropensityModel::load(const std::filesystem::path& path) {
  return deserialize(io::read_file(path));
}

// ---------------------------------------------------------------------------

CaliperSpec compute_caliper(std::span<const double> treated_logits, std::span<const double> control_logits) {
  if (treated_logits.size() < 2 || control_logits.size() < 2)
    throw Error("compute_caliper: each group needs at least 2 units");
  auto var = [](std::span<const double> x) {
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return ss / static_cast<double>(x.size() - 1);
  };
  return caliper_from_moments(var(treated_logits), var(control_logits), treated_logits.size(),
                              control_logits.size());
}

CaliperSpec caliper_from_moments(double sigma2_treated, double sigma2_control, std::size_t n_treated,
                                 std::size_t n_control) {
  if (n_treated + n_control <= 2) throw Error("compute_caliper: need more than 2 units in total");
  if (sigma2_treated < 0 || sigma2_control < 0) throw Error("compute_caliper: negative variance");
  CaliperSpec s{0.0, sigma2_treated, sigma2_control, n_treated, n_control};
  s.c = 0.2 * std::sqrt((sigma2_treated + sigma2_control) / static_cast<double>(n_treated + n_control - 2));
  return s;
}

}  // namespace moralmatch::propensity
