#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moralmatch/extraction.hpp"

namespace moralmatch::propensity {

struct ClassWeights {
  double treated = 1.0;
  double control = 1.0;
  friend bool operator==(const ClassWeights&, const ClassWeights&) = default;
};

struct TrainingMeta {
  int epochs = 0;  // configured maximum
  double learning_rate = 0.0;
  std::uint64_t seed = 0;
  double aug_prob = 0.0;
  int epochs_run = 0;
  double holdout_loss = 0.0;  // best held-out weighted log-loss
  friend bool operator==(const TrainingMeta&, const TrainingMeta&) = default;
};

struct PropensityModel {
  Eigen::VectorXd weights;
  double bias = 0.0;
  ClassWeights class_weights;
  TrainingMeta meta;

  std::string serialize() const;
  static PropensityModel deserialize(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static PropensityModel load(const std::filesystem::path& path);

  friend bool operator==(const PropensityModel& a, const PropensityModel& b) {
    return a.weights == b.weights && a.bias == b.bias && a.class_weights == b.class_weights &&
           a.meta == b.meta;
  }
};

using EmbedFn = std::function<Eigen::VectorXd(std::string_view)>;

struct TrainOptions {
  int epochs = 30;
  double learning_rate = 0.1;
  double aug_prob = 0.5;
  std::uint64_t seed = 0;
  double holdout_fraction = 0.1;
  int patience = 3;
  unsigned threads = 1;
  bool leakage_guard = true;
};

/// Weighted logistic regression by full-batch gradient descent over embedded
/// texts. Each epoch every training text is swapped with probability aug_prob,
/// drawn without replacement within each class so both classes see the same
/// share of swapped texts. `treated[i]` is the label of texts[i].
PropensityModel train_propensity(std::span<const std::string> texts, std::span<const int> treated,
                                 const extraction::GenderLexicon& lexicon, const EmbedFn& embed,
                                 const TrainOptions& options = {});

double predict_logit(const PropensityModel& model, std::span<const double> v);
double predict_propensity(const PropensityModel& model, std::span<const double> v);

struct CaliperSpec {
  double c = 0.0;
  double sigma2_treated = 0.0;
  double sigma2_control = 0.0;
  std::size_t n_treated = 0;
  std::size_t n_control = 0;
};

/// c = 0.2 * sqrt((s2_T + s2_U) / (N_T + N_U - 2)).
CaliperSpec caliper_from_moments(double sigma2_treated, double sigma2_control, std::size_t n_treated,
                                 std::size_t n_control);

/// Sample variances (denominator N - 1) fed to caliper_from_moments.
CaliperSpec compute_caliper(std::span<const double> treated_logits,
                            std::span<const double> control_logits);

}  // namespace moralmatch::propensity
