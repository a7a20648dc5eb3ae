#include "moralmatch/stats.hpp"

#include <algorithm>
#include <array>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <map>
#include <sstream>

#include "moralmatch/common.hpp"

namespace moralmatch::stats {

namespace {

using u128 = unsigned __int128;

double z_quantile(double level) {
  boost::math::normal_distribution<double> normal;
  return boost::math::quantile(normal, 1.0 - (1.0 - level) / 2.0);
}

double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

constexpr long long kExactLimit = 60;

std::vector<std::vector<std::uint64_t>> pascal(long long n) {
  std::vector<std::vector<std::uint64_t>> c(static_cast<std::size_t>(n + 1));
  for (long long i = 0; i <= n; ++i) {
    c[static_cast<std::size_t>(i)].assign(static_cast<std::size_t>(i + 1), 1);
    for (long long k = 1; k < i; ++k)
      c[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] =
          c[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(k - 1)] +
          c[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(k)];
  }
  return c;
}

double lchoose(long long n, long long k) {
  return std::lgamma(static_cast<double>(n + 1)) - std::lgamma(static_cast<double>(k + 1)) -
         std::lgamma(static_cast<double>(n - k + 1));
}

void require_nonnegative(const Table2x2& t) {
  if (t.a < 0 || t.b < 0 || t.c < 0 || t.d < 0) throw Error("2x2 table has a negative count");
}

}  // namespace

double fisher_exact_p(const Table2x2& t) {
  require_nonnegative(t);
  const long long r1 = t.a + t.b, r2 = t.c + t.d, c1 = t.a + t.c, n = t.total();
  const long long lo = std::max(0LL, c1 - r2), hi = std::min(r1, c1);
  if (lo == hi) return 1.0;

  if (n <= kExactLimit) {
    static const auto binom = pascal(kExactLimit);
    auto weight = [&](long long x) {
      return static_cast<u128>(binom[static_cast<std::size_t>(r1)][static_cast<std::size_t>(x)]) *
             binom[static_cast<std::size_t>(r2)][static_cast<std::size_t>(c1 - x)];
    };
    const u128 observed = weight(t.a);
    u128 sum = 0;
    for (long long x = lo; x <= hi; ++x)
      if (const u128 w = weight(x); w <= observed) sum += w;
    const auto total = static_cast<long double>(binom[static_cast<std::size_t>(n)][static_cast<std::size_t>(c1)]);
    return static_cast<double>(std::min(1.0L, static_cast<long double>(sum) / total));
  }

  const double denom = lchoose(n, c1);
  auto logp = [&](long long x) { return lchoose(r1, x) + lchoose(r2, c1 - x) - denom; };
  const double observed = logp(t.a);
  const double cutoff = observed + std::log1p(1e-7);
  long double sum = 0.0L;
  for (long long x = lo; x <= hi; ++x)
    if (const double lp = logp(x); lp <= cutoff) sum += std::exp(static_cast<long double>(lp));
  return static_cast<double>(std::min(1.0L, sum));
}

OddsRatio odds_ratio_fisher(const Table2x2& t, double level) {
  require_nonnegative(t);
  if (t.a + t.b == 0 || t.c + t.d == 0) throw Error("odds_ratio_fisher: a treatment row is empty");
  if (!(level > 0 && level < 1)) throw Error("odds_ratio_fisher: level must lie in (0, 1)");
  OddsRatio r;
  r.p_value = fisher_exact_p(t);
  double a = static_cast<double>(t.a), b = static_cast<double>(t.b), c = static_cast<double>(t.c),
         d = static_cast<double>(t.d);
  if (t.a == 0 || t.b == 0 || t.c == 0 || t.d == 0) {
    a += 0.5;
    b += 0.5;
    c += 0.5;
    d += 0.5;
    r.continuity_corrected = true;
  }
  r.odds_ratio = (a * d) / (b * c);
  const double se = std::sqrt(1 / a + 1 / b + 1 / c + 1 / d);
  const double z = z_quantile(level);
  r.ci_low = std::exp(std::log(r.odds_ratio) - z * se);
  r.ci_high = std::exp(std::log(r.odds_ratio) + z * se);
  return r;
}

// ---------------------------------------------------------------------------

BreslowDay breslow_day(std::span<const Table2x2> strata) {
  BreslowDay out;
  std::vector<Table2x2> used;
  for (std::size_t k = 0; k < strata.size(); ++k) {
    const auto& t = strata[k];
    require_nonnegative(t);
    if (t.a + t.b == 0 || t.c + t.d == 0 || t.a + t.c == 0 || t.b + t.d == 0) {
      out.warnings.push_back("stratum " + std::to_string(k) + " has a zero margin and was excluded");
      continue;
    }
    used.push_back(t);
  }
  if (used.size() < 2) throw Error("breslow_day: fewer than 2 strata with positive margins");

  double num = 0.0, den = 0.0;
  for (const auto& t : used) {
    const double n = static_cast<double>(t.total());
    num += static_cast<double>(t.a) * static_cast<double>(t.d) / n;
    den += static_cast<double>(t.b) * static_cast<double>(t.c) / n;
  }
  if (num == 0.0 || den == 0.0) throw Error("breslow_day: Mantel-Haenszel odds ratio is 0 or infinite");
  const double psi = num / den;
  out.common_or = psi;

  for (const auto& t : used) {
    const double r1 = static_cast<double>(t.a + t.b), r2 = static_cast<double>(t.c + t.d);
    const double c1 = static_cast<double>(t.a + t.c);
    const double lo = std::max(0.0, c1 - r2), hi = std::min(r1, c1);
    // (1 - psi) x^2 + (r2 - c1 + psi (r1 + c1)) x - psi r1 c1 = 0
    const double qa = 1.0 - psi, qb = r2 - c1 + psi * (r1 + c1), qc = -psi * r1 * c1;
    double ea;
    if (std::abs(qa) < 1e-12) {
      ea = -qc / qb;
    } else {
      const double disc = std::sqrt(std::max(0.0, qb * qb - 4 * qa * qc));
      // numerically stable pair of roots
      const double q = -0.5 * (qb + std::copysign(disc, qb));
      const double x1 = q / qa, x2 = qc / q;
      auto inside = [&](double x) { return x >= lo - 1e-9 && x <= hi + 1e-9; };
      if (inside(x1)) ea = x1;
      else if (inside(x2)) ea = x2;
      else throw Error("breslow_day: no feasible root for the expected count");
    }
    const double eb = r1 - ea, ec = c1 - ea, ed = r2 - c1 + ea;
    const double var = 1.0 / (1.0 / ea + 1.0 / eb + 1.0 / ec + 1.0 / ed);
    const double diff = static_cast<double>(t.a) - ea;
    out.chi2 += diff * diff / var;
  }
  out.df = static_cast<int>(used.size()) - 1;
  out.p_value = out.chi2 <= 0 ? 1.0 : boost::math::gamma_q(out.df / 2.0, out.chi2 / 2.0);
  return out;
}

// ---------------------------------------------------------------------------

KendallTau kendall_tau_b(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("kendall_tau_b: inputs differ in length");
  const std::size_t n = x.size();
  if (n < 2) throw Error("kendall_tau_b: need at least 2 observations");
  long long concordant = 0, discordant = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = (x[i] - x[j]) * (y[i] - y[j]);
      if (s > 0) ++concordant;
      else if (s < 0) ++discordant;
    }
  // tie groups: sum t(t-1)/2, sum t(t-1)(t-2), sum t(t-1)(2t+5)
  auto ties = [](std::span<const double> v) {
    std::map<double, long long> counts;
    for (double e : v) ++counts[e];
    double pairs = 0, v1 = 0, v2 = 0;
    for (const auto& [_, t] : counts) {
      const double tt = static_cast<double>(t);
      pairs += tt * (tt - 1) / 2;
      v1 += tt * (tt - 1) * (tt - 2);
      v2 += tt * (tt - 1) * (2 * tt + 5);
    }
    return std::array<double, 3>{pairs, v1, v2};
  };
  const auto tx = ties(x), ty = ties(y);
  const double nd = static_cast<double>(n);
  const double total = nd * (nd - 1) / 2;
  if (tx[0] == total || ty[0] == total) throw Error("kendall_tau_b: an input is constant");
  const double s = static_cast<double>(concordant - discordant);
  KendallTau out;
  out.tau = std::clamp(s / std::sqrt((total - tx[0]) * (total - ty[0])), -1.0, 1.0);
  const double m = nd * (nd - 1);
  double var = (m * (2 * nd + 5) - tx[2] - ty[2]) / 18 + 2 * tx[0] * ty[0] / m;
  if (n > 2) var += tx[1] * ty[1] / (9 * m * (nd - 2));
  out.p_value = var > 0 ? std::min(1.0, normal_two_sided_p(s / std::sqrt(var))) : 1.0;
  return out;
}

// ---------------------------------------------------------------------------

double krippendorff_alpha_ordinal(const RatingsMatrix& ratings) {
  std::map<int, std::size_t> index;
  for (const auto& row : ratings)
    for (const auto& v : row)
      if (v) {
        if (*v < 1 || *v > 5) throw Error("krippendorff_alpha: rating " + std::to_string(*v) + " outside 1..5");
        index.emplace(*v, 0);
      }
  std::size_t next = 0;
  for (auto& [_, i] : index) i = next++;
  const std::size_t k = index.size();
  Eigen::MatrixXd o = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  for (const auto& row : ratings) {
    std::vector<double> counts(k, 0.0);
    double m = 0;
    for (const auto& v : row)
      if (v) {
        counts[index[*v]] += 1;
        m += 1;
      }
    if (m < 2) continue;
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t e = 0; e < k; ++e)
        o(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(e)) +=
            counts[c] * (counts[e] - (c == e ? 1.0 : 0.0)) / (m - 1);
  }
  const Eigen::VectorXd nc = o.rowwise().sum();
  const double n = nc.sum();
  if (n == 0) throw Error("krippendorff_alpha: no pairable values");

  auto delta2 = [&](std::size_t c, std::size_t e) {
    if (c > e) std::swap(c, e);
    double s = 0;
    for (std::size_t g = c; g <= e; ++g) s += nc[static_cast<Eigen::Index>(g)];
    s -= (nc[static_cast<Eigen::Index>(c)] + nc[static_cast<Eigen::Index>(e)]) / 2;
    return s * s;
  };
  double observed = 0, expected = 0;
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t e = 0; e < k; ++e) {
      const double d2 = delta2(c, e);
      observed += o(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(e)) * d2;
      expected += nc[static_cast<Eigen::Index>(c)] * nc[static_cast<Eigen::Index>(e)] * d2;
    }
  if (expected == 0) {
    if (observed == 0) return 1.0;  // a single value throughout
    throw Error("krippendorff_alpha: expected disagreement is zero");
  }
  return 1.0 - (n - 1) * observed / expected;
}

int median_aggregate(std::span<const int> ratings) {
  if (ratings.size() != 3) throw Error("median_aggregate: expected exactly 3 ratings, got " + std::to_string(ratings.size()));
  std::array<int, 3> v{ratings[0], ratings[1], ratings[2]};
  std::sort(v.begin(), v.end());
  return v[1];
}

// ---------------------------------------------------------------------------

namespace {

struct GroupedData {
  Eigen::MatrixXd xtx;
  Eigen::VectorXd xty;
  double yty = 0;
  std::vector<double> sizes;
  std::vector<Eigen::VectorXd> x_sums;
  std::vector<double> y_sums;
  Eigen::Index n = 0, p = 0;
};

GroupedData group_data(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, std::span<const int> groups) {
  if (x.rows() != y.size() || static_cast<std::size_t>(y.size()) != groups.size())
    throw Error("reml: y, X and groups differ in length");
  GroupedData g;
  g.n = x.rows();
  g.p = x.cols();
  g.xtx = x.transpose() * x;
  g.xty = x.transpose() * y;
  g.yty = y.squaredNorm();
  std::map<int, std::size_t> index;
  for (int id : groups) index.emplace(id, 0);
  std::size_t next = 0;
  for (auto& [_, i] : index) i = next++;
  g.sizes.assign(index.size(), 0);
  g.x_sums.assign(index.size(), Eigen::VectorXd::Zero(g.p));
  g.y_sums.assign(index.size(), 0);
  for (Eigen::Index i = 0; i < g.n; ++i) {
    const std::size_t k = index[groups[static_cast<std::size_t>(i)]];
    g.sizes[k] += 1;
    g.x_sums[k] += x.row(i).transpose();
    g.y_sums[k] += y[i];
  }
  return g;
}

struct GlsState {
  Eigen::MatrixXd xhx;
  Eigen::VectorXd beta;
  double sigma2 = 0;
  double loglik = 0;
};

// H = I + ratio * Z Z^T, inverted group by group with the Woodbury identity.
GlsState gls(const GroupedData& g, double ratio) {
  Eigen::MatrixXd xhx = g.xtx;
  Eigen::VectorXd xhy = g.xty;
  double yhy = g.yty;
  double logdet_h = 0;
  for (std::size_t k = 0; k < g.sizes.size(); ++k) {
    const double shrink = ratio / (1.0 + ratio * g.sizes[k]);
    xhx.noalias() -= shrink * g.x_sums[k] * g.x_sums[k].transpose();
    xhy -= shrink * g.y_sums[k] * g.x_sums[k];
    yhy -= shrink * g.y_sums[k] * g.y_sums[k];
    logdet_h += std::log1p(ratio * g.sizes[k]);
  }
  Eigen::LLT<Eigen::MatrixXd> llt(xhx);
  if (llt.info() != Eigen::Success) throw Error("reml: X'V^-1X is not positive definite");
  GlsState s;
  s.beta = llt.solve(xhy);
  const double rss = std::max(0.0, yhy - s.beta.dot(xhy));
  const double dof = static_cast<double>(g.n - g.p);
  s.sigma2 = rss / dof;
  double logdet_xhx = 0;
  for (Eigen::Index i = 0; i < xhx.rows(); ++i) logdet_xhx += 2 * std::log(llt.matrixL()(i, i));
  s.loglik = -0.5 * (dof * (1 + std::log(2 * M_PI * s.sigma2)) + logdet_h + logdet_xhx);
  s.xhx = std::move(xhx);
  return s;
}

void check_rank(const Eigen::MatrixXd& x, const std::vector<std::string>& names) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() == x.cols()) return;
  std::vector<std::string> collinear;
  Eigen::MatrixXd kept(x.rows(), 0);
  Eigen::Index rank = 0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    Eigen::MatrixXd trial(x.rows(), kept.cols() + 1);
    trial << kept, x.col(j);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> q(trial);
    q.setThreshold(qr.threshold());
    if (q.rank() > rank) {
      kept = std::move(trial);
      rank = q.rank();
    } else {
      collinear.push_back(names[static_cast<std::size_t>(j)]);
    }
  }
  std::string msg = "reml: design matrix is rank deficient; collinear columns:";
  for (const auto& c : collinear) msg += " " + c;
  throw Error(msg);
}

}  // namespace

double reml_profile_loglik(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, std::span<const int> groups,
                           double ratio) {
  if (ratio < 0) throw Error("reml: variance ratio must be nonnegative");
  return gls(group_data(y, x, groups), ratio).loglik;
}

MixedModelFit reml_random_intercept(const Eigen::VectorXd& y, const Eigen::MatrixXd& x,
                                    const std::vector<std::string>& names, std::span<const int> groups) {
  if (names.size() != static_cast<std::size_t>(x.cols())) throw Error("reml: one name per column required");
  const auto g = group_data(y, x, groups);
  if (g.sizes.size() < 2) throw Error("reml: need at least 2 groups");
  if (g.n <= g.p) throw Error("reml: more columns than observations");
  check_rank(x, names);

  std::vector<double> grid{0.0};
  for (int k = 0; k <= 64; ++k) grid.push_back(std::pow(10.0, -8.0 + 0.25 * k));
  std::vector<double> values;
  for (double r : grid) values.push_back(gls(g, r).loglik);
  const auto best = static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
  if (best + 1 == grid.size()) {
    std::ostringstream trace;
    trace << "reml: restricted likelihood still increasing at ratio " << grid.back() << "; trace:";
    for (std::size_t i = grid.size() - 5; i < grid.size(); ++i) trace << " (" << grid[i] << ", " << values[i] << ")";
    throw Error(trace.str());
  }
  double lo = grid[best == 0 ? 0 : best - 1], hi = grid[best + 1];
  const double phi = (std::sqrt(5.0) - 1) / 2;
  double m1 = hi - phi * (hi - lo), m2 = lo + phi * (hi - lo);
  double f1 = gls(g, m1).loglik, f2 = gls(g, m2).loglik;
  while (hi - lo > 1e-8 * std::max(1.0, hi)) {
    if (f1 < f2) {
      lo = m1;
      m1 = m2;
      f1 = f2;
      m2 = lo + phi * (hi - lo);
      f2 = gls(g, m2).loglik;
    } else {
      hi = m2;
      m2 = m1;
      f2 = f1;
      m1 = hi - phi * (hi - lo);
      f1 = gls(g, m1).loglik;
    }
  }
  double ratio = f1 >= f2 ? m1 : m2;
  double best_ll = std::max(f1, f2);
  for (double candidate : {lo, hi, grid[best]})
    if (const double ll = gls(g, candidate).loglik; ll > best_ll) {
      best_ll = ll;
      ratio = candidate;
    }

  const auto s = gls(g, ratio);
  MixedModelFit fit;
  fit.names = names;
  fit.coefficients = s.beta;
  const Eigen::MatrixXd cov = s.sigma2 * s.xhx.inverse();
  fit.std_errors = cov.diagonal().cwiseSqrt();
  fit.z_values = fit.coefficients.cwiseQuotient(fit.std_errors);
  fit.p_values.resize(fit.z_values.size());
  for (Eigen::Index i = 0; i < fit.z_values.size(); ++i) fit.p_values[i] = normal_two_sided_p(fit.z_values[i]);
  fit.residual_variance = s.sigma2;
  fit.variance_ratio = ratio;
  fit.group_variance = ratio * s.sigma2;
  fit.log_likelihood = s.loglik;
  fit.n_groups = static_cast<int>(g.sizes.size());
  return fit;
}

// ---------------------------------------------------------------------------

std::string significance_marker(double p) {
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return "";
}

std::vector<StratumOr> stratified_or_report(std::span<const StratumUnit> units, long long min_cell, double level) {
  std::vector<StratumOr> out;
  std::map<std::string, std::size_t> index;
  for (const auto& u : units) {
    auto [it, fresh] = index.emplace(u.stratum, out.size());
    if (fresh) out.push_back({u.stratum, {}, false, {}, ""});
    auto& t = out[it->second].table;
    if (u.treated)
      (u.positive ? t.a : t.b)++;
    else
      (u.positive ? t.c : t.d)++;
  }
  for (auto& s : out) {
    const auto& t = s.table;
    s.sufficient = std::min({t.a, t.b, t.c, t.d}) >= min_cell;
    if (!s.sufficient) continue;
    s.result = odds_ratio_fisher(t, level);
    s.marker = significance_marker(s.result.p_value);
  }
  return out;
}

}  // namespace moralmatch::stats
