#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moralmatch/propensity.hpp"

namespace moralmatch::matching {

struct MatchUnit {
  std::string id;
  std::vector<double> vector;
  double logit = 0.0;
  int topic = 0;
  int age = 0;
  int outcome = 0;
};

struct MatchConstraints {
  double d_max = 0.25;
  propensity::CaliperSpec caliper;
  int age_delta = 5;
};

/// Indices into the treated and control unit lists.
struct Edge {
  std::uint32_t treated = 0;
  std::uint32_t control = 0;
  double weight = 0.0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Feasible pairs only: |logit diff| < c, cosine distance <= d_max, same
/// topic, age gap <= age_delta. Units with a zero vector get no edge. Sorted
/// by (treated, control).
std::vector<Edge> build_edges(std::span<const MatchUnit> treated, std::span<const MatchUnit> control,
                              const MatchConstraints& constraints, unsigned threads = 1);

/// Maximum-cardinality matching of least total weight among those of maximum
/// cardinality. Weights must be finite and nonnegative. Returns the chosen
/// edges sorted by treated index.
std::vector<Edge> solve_matching(std::size_t n_treated, std::size_t n_control, std::span<const Edge> edges);

struct MatchedPair {
  std::string treated_id;
  std::string control_id;
  double distance = 0.0;
  int treated_outcome = 0;
  int control_outcome = 0;
  int topic = 0;
};

std::vector<MatchedPair> to_pairs(std::span<const MatchUnit> treated, std::span<const MatchUnit> control,
                                  std::span<const Edge> matching);

double estimate_satt(std::span<const MatchedPair> pairs);

struct SattEstimate {
  double satt = 0.0;
  std::size_t n_pairs = 0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t bootstrap_b = 0;
  double level = 0.95;
  std::uint64_t seed = 0;
  bool ci_contains_point = true;
};

/// Resamples pairs with replacement; percentile interval with linear
/// interpolation between order statistics.
SattEstimate bootstrap_satt(std::span<const MatchedPair> pairs, std::size_t b = 1000, double level = 0.95,
                            std::uint64_t seed = 0);

inline constexpr int kAllTopics = std::numeric_limits<int>::min();

struct SweepRow {
  double d_max = 0.0;
  int topic = kAllTopics;
  SattEstimate estimate;
};

struct SweepOptions {
  std::vector<double> d_max_values;
  int age_delta = 5;
  std::size_t bootstrap_b = 1000;
  double level = 0.95;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

/// One ALL row per threshold followed by one row per topic with pairs.
/// Thresholds without any pair produce an ALL row with n_pairs = 0.
std::vector<SweepRow> sweep_dmax(std::span<const MatchUnit> treated, std::span<const MatchUnit> control,
                                 const propensity::CaliperSpec& caliper, const SweepOptions& options);

struct Balance {
  double smd = 0.0;
  double variance_ratio = 1.0;
  bool pass = false;
};

Balance balance_diagnostics(std::span<const double> treated_logits, std::span<const double> control_logits);

}  // namespace moralmatch::matching
