#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace moralmatch::stats {

/// a = treated & positive, b = treated & negative, c = control & positive,
/// d = control & negative.
struct Table2x2 {
  long long a = 0, b = 0, c = 0, d = 0;
  long long total() const { return a + b + c + d; }
  friend bool operator==(const Table2x2&, const Table2x2&) = default;
};

struct OddsRatio {
  double odds_ratio = 1.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double p_value = 1.0;
  bool continuity_corrected = false;  // 0.5 added to every cell for OR and CI
};

/// Two-sided Fisher exact p: total probability of the tables with the
/// observed margins that are no more likely than the observed one.
double fisher_exact_p(const Table2x2& t);

/// OR with a Woolf (log-normal) interval. Throws when a+b = 0 or c+d = 0.
OddsRatio odds_ratio_fisher(const Table2x2& t, double level = 0.95);

struct BreslowDay {
  double chi2 = 0.0;
  double p_value = 1.0;
  int df = 0;
  double common_or = 1.0;  // Mantel-Haenszel
  std::vector<std::string> warnings;
};

BreslowDay breslow_day(std::span<const Table2x2> strata);

struct KendallTau {
  double tau = 0.0;
  double p_value = 1.0;
};

KendallTau kendall_tau_b(std::span<const double> x, std::span<const double> y);

/// units x raters; std::nullopt marks a missing rating.
using RatingsMatrix = std::vector<std::vector<std::optional<int>>>;

/// Ordinal-metric alpha over the values observed in the data.
double krippendorff_alpha_ordinal(const RatingsMatrix& ratings);

/// Middle value of exactly three ratings.
int median_aggregate(std::span<const int> ratings);

struct MixedModelFit {
  std::vector<std::string> names;
  Eigen::VectorXd coefficients;
  Eigen::VectorXd std_errors;
  Eigen::VectorXd z_values;
  Eigen::VectorXd p_values;
  double group_variance = 0.0;
  double residual_variance = 0.0;
  double variance_ratio = 0.0;  // group / residual
  double log_likelihood = 0.0;  // restricted
  int n_groups = 0;
};

/// Restricted log-likelihood of the random-intercept model at a fixed
/// variance ratio, with the residual variance profiled out.
double reml_profile_loglik(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, std::span<const int> groups,
                           double ratio);

MixedModelFit reml_random_intercept(const Eigen::VectorXd& y, const Eigen::MatrixXd& x,
                                    const std::vector<std::string>& names, std::span<const int> groups);

struct StratumUnit {
  bool treated = false;
  bool positive = false;
  std::string stratum;
};

struct StratumOr {
  std::string stratum;
  Table2x2 table;
  bool sufficient = false;
  OddsRatio result;  // valid when sufficient
  std::string marker;  // "*", "**", "***" at 0.05 / 0.01 / 0.001
};

/// One record per stratum, in order of first appearance.
std::vector<StratumOr> stratified_or_report(std::span<const StratumUnit> units, long long min_cell = 5,
                                            double level = 0.95);

std::string significance_marker(double p);

}  // namespace moralmatch::stats
