#include "moralmatch/matching.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <queue>
#include <thread>

#include "moralmatch/common.hpp"
#include "moralmatch/embedding.hpp"

namespace moralmatch::matching {

std::vector<Edge> build_edges(std::span<const MatchUnit> treated, std::span<const MatchUnit> control,
                              const MatchConstraints& constraints, unsigned threads) {
  if (!(constraints.d_max > 0 && constraints.d_max <= 2)) throw Error("build_edges: d_max must lie in (0, 2]");
  if (constraints.age_delta < 0) throw Error("build_edges: age_delta must be nonnegative");
  auto nonzero = [](const MatchUnit& u) {
    return std::any_of(u.vector.begin(), u.vector.end(), [](double x) { return x != 0.0; });
  };

  // controls per topic, sorted by logit
  std::map<int, std::vector<std::uint32_t>> by_topic;
  for (std::uint32_t j = 0; j < control.size(); ++j)
    if (nonzero(control[j])) by_topic[control[j].topic].push_back(j);
  for (auto& [_, ids] : by_topic)
    std::sort(ids.begin(), ids.end(), [&](auto a, auto b) {
      return control[a].logit != control[b].logit ? control[a].logit < control[b].logit : a < b;
    });

  const double c = constraints.caliper.c;
  auto edges_for = [&](std::uint32_t i, std::vector<Edge>& out) {
    const auto& t = treated[i];
    if (!nonzero(t)) return;
    auto it = by_topic.find(t.topic);
    if (it == by_topic.end()) return;
    const auto& ids = it->second;
    auto lo = std::upper_bound(ids.begin(), ids.end(), t.logit - c,
                               [&](double v, std::uint32_t j) { return v < control[j].logit; });
    std::vector<Edge> local;
    for (auto p = lo; p != ids.end() && control[*p].logit < t.logit + c; ++p) {
      const auto& u = control[*p];
      if (!(std::abs(t.logit - u.logit) < c)) continue;
      if (std::abs(t.age - u.age) > constraints.age_delta) continue;
      const double d = embedding::cosine_distance(t.vector, u.vector);
      if (d <= constraints.d_max) local.push_back({i, *p, d});
    }
    std::sort(local.begin(), local.end(), [](const Edge& a, const Edge& b) { return a.control < b.control; });
    out.insert(out.end(), local.begin(), local.end());
  };

  const auto n = static_cast<std::uint32_t>(treated.size());
  threads = std::max(1u, threads);
  if (threads == 1 || n < 2) {
    std::vector<Edge> out;
    for (std::uint32_t i = 0; i < n; ++i) edges_for(i, out);
    return out;
  }
  std::vector<std::vector<Edge>> parts(threads);
  {
    std::vector<std::jthread> pool;
    const std::uint32_t per = (n + threads - 1) / threads;
    for (unsigned k = 0; k < threads; ++k)
      pool.emplace_back([&, k] {
        for (std::uint32_t i = k * per; i < std::min(n, (k + 1) * per); ++i) edges_for(i, parts[k]);
      });
  }
  std::vector<Edge> out;
  for (auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct DisjointSet {
  std::vector<std::uint32_t> parent;
  explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0u); }
  std::uint32_t find(std::uint32_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

// Successive shortest augmenting paths with Johnson potentials, all free
// treated nodes acting as sources. Each augmentation yields a least-cost
// matching of the next cardinality, so stopping when no path remains gives a
// least-cost maximum matching.
std::vector<Edge> solve_component(std::size_t nt, std::size_t nc, const std::vector<Edge>& edges) {
  std::vector<std::vector<std::pair<std::uint32_t, double>>> adj(nt);
  for (const auto& e : edges) adj[e.treated].push_back({e.control, e.weight});
  const std::size_t sink = nt + nc;
  const std::size_t nodes = nt + nc + 1;
  std::vector<int> match_t(nt, -1), match_c(nc, -1);
  std::vector<double> match_w(nc, 0.0);
  std::vector<double> pot(nodes, 0.0), dist(nodes);
  std::vector<std::int64_t> parent(nodes);
  std::vector<char> done(nodes);
  using Item = std::pair<double, std::size_t>;

  for (;;) {
    std::fill(dist.begin(), dist.end(), INFINITY);
    std::fill(parent.begin(), parent.end(), -1);
    std::fill(done.begin(), done.end(), 0);
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    for (std::size_t t = 0; t < nt; ++t)
      if (match_t[t] < 0) {
        dist[t] = 0.0;
        pq.push({0.0, t});
      }
    while (!pq.empty()) {
      auto [d, v] = pq.top();
      pq.pop();
      if (done[v]) continue;
      done[v] = 1;
      if (v == sink) break;
      auto relax = [&](std::size_t to, double cost) {
        const double nd = d + std::max(0.0, cost + pot[v] - pot[to]);
        if (nd < dist[to]) {
          dist[to] = nd;
          parent[to] = static_cast<std::int64_t>(v);
          pq.push({nd, to});
        }
      };
      if (v < nt) {
        for (auto [c, w] : adj[v])
          if (match_t[v] != static_cast<int>(c)) relax(nt + c, w);
      } else {
        const std::size_t c = v - nt;
        if (match_c[c] < 0)
          relax(sink, 0.0);
        else
          relax(static_cast<std::size_t>(match_c[c]), -match_w[c]);
      }
    }
    if (!done[sink]) break;
    const double reach = dist[sink];
    for (std::size_t v = 0; v < nodes; ++v) pot[v] += done[v] ? dist[v] : reach;

    // flip the alternating path
    std::size_t c_node = static_cast<std::size_t>(parent[sink]);
    while (true) {
      const std::size_t t = static_cast<std::size_t>(parent[c_node]);
      const std::size_t c = c_node - nt;
      const int previous = match_t[t];
      double w = 0.0;
      for (auto [cc, ww] : adj[t])
        if (cc == c) {
          w = ww;
          break;
        }
      match_t[t] = static_cast<int>(c);
      match_c[c] = static_cast<int>(t);
      match_w[c] = w;
      if (previous < 0) break;
      c_node = nt + static_cast<std::size_t>(previous);
    }
  }
  std::vector<Edge> out;
  for (std::size_t t = 0; t < nt; ++t)
    if (match_t[t] >= 0)
      out.push_back({static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(match_t[t]),
                     match_w[static_cast<std::size_t>(match_t[t])]});
  return out;
}

}  // namespace

std::vector<Edge> solve_matching(std::size_t n_treated, std::size_t n_control, std::span<const Edge> edges) {
  // keep the cheapest copy of any repeated edge
  std::vector<Edge> sorted(edges.begin(), edges.end());
  for (const auto& e : sorted) {
    if (e.treated >= n_treated || e.control >= n_control) throw Error("solve_matching: edge index out of range");
    if (!std::isfinite(e.weight) || e.weight < 0) throw Error("solve_matching: weights must be finite and nonnegative");
  }
  std::sort(sorted.begin(), sorted.end(), [](const Edge& a, const Edge& b) {
    if (a.treated != b.treated) return a.treated < b.treated;
    if (a.control != b.control) return a.control < b.control;
    return a.weight < b.weight;
  });
  sorted.erase(std::unique(sorted.begin(), sorted.end(),
                           [](const Edge& a, const Edge& b) { return a.treated == b.treated && a.control == b.control; }),
               sorted.end());

  DisjointSet ds(n_treated + n_control);
  for (const auto& e : sorted) ds.unite(e.treated, static_cast<std::uint32_t>(n_treated + e.control));
  std::map<std::uint32_t, std::vector<Edge>> components;
  for (const auto& e : sorted) components[ds.find(e.treated)].push_back(e);

  std::vector<Edge> result;
  for (auto& [_, comp] : components) {
    std::vector<std::uint32_t> ts, cs;
    for (const auto& e : comp) {
      ts.push_back(e.treated);
      cs.push_back(e.control);
    }
    std::sort(ts.begin(), ts.end());
    ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
    std::sort(cs.begin(), cs.end());
    cs.erase(std::unique(cs.begin(), cs.end()), cs.end());
    std::vector<Edge> local;
    local.reserve(comp.size());
    for (const auto& e : comp)
      local.push_back({static_cast<std::uint32_t>(std::lower_bound(ts.begin(), ts.end(), e.treated) - ts.begin()),
                       static_cast<std::uint32_t>(std::lower_bound(cs.begin(), cs.end(), e.control) - cs.begin()),
                       e.weight});
    for (const auto& e : solve_component(ts.size(), cs.size(), local))
      result.push_back({ts[e.treated], cs[e.control], e.weight});
  }
  std::sort(result.begin(), result.end(), [](const Edge& a, const Edge& b) { return a.treated < b.treated; });
  return result;
}

std::vector<MatchedPair> to_pairs(std::span<const MatchUnit> treated, std::span<const MatchUnit> control,
                                  std::span<const Edge> matching) {
  std::vector<MatchedPair> out;
  out.reserve(matching.size());
  for (const auto& e : matching) {
    const auto& t = treated[e.treated];
    const auto& c = control[e.control];
    out.push_back({t.id, c.id, e.weight, t.outcome, c.outcome, t.topic});
  }
  return out;
}

// ---------------------------------------------------------------------------

double estimate_satt(std::span<const MatchedPair> pairs) {
  if (pairs.empty()) throw Error("estimate_satt: no matched pairs");
  long long sum = 0;
  for (const auto& p : pairs) sum += p.treated_outcome - p.control_outcome;
  return static_cast<double>(sum) / static_cast<double>(pairs.size());
}

namespace {

double percentile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(sorted.size() - 1, lo + 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

SattEstimate bootstrap_satt(std::span<const MatchedPair> pairs, std::size_t b, double level, std::uint64_t seed) {
  if (!(level > 0 && level < 1)) throw Error("bootstrap_satt: level must lie in (0, 1)");
  if (b == 0) throw Error("bootstrap_satt: B must be positive");
  SattEstimate est;
  est.satt = estimate_satt(pairs);
  est.n_pairs = pairs.size();
  est.bootstrap_b = b;
  est.level = level;
  est.seed = seed;
  const std::size_t n = pairs.size();
  std::vector<int> diff(n);
  for (std::size_t i = 0; i < n; ++i) diff[i] = pairs[i].treated_outcome - pairs[i].control_outcome;
  std::vector<double> stats(b);
  for (std::size_t r = 0; r < b; ++r) {
    const std::uint64_t key = derive_seed(seed, {r});
    long long sum = 0;
    for (std::size_t k = 0; k < n; ++k) {
      auto idx = static_cast<std::size_t>(unit_interval(derive_seed(key, {k})) * static_cast<double>(n));
      sum += diff[std::min(idx, n - 1)];
    }
    stats[r] = static_cast<double>(sum) / static_cast<double>(n);
  }
  std::sort(stats.begin(), stats.end());
  const double tail = (1.0 - level) / 2.0;
  est.ci_low = percentile(stats, tail);
  est.ci_high = percentile(stats, 1.0 - tail);
  est.ci_contains_point = est.ci_low <= est.satt && est.satt <= est.ci_high;
  return est;
}

std::vector<SweepRow> sweep_dmax(std::span<const MatchUnit> treated, std::span<const MatchUnit> control,
                                 const propensity::CaliperSpec& caliper, const SweepOptions& options) {
  if (options.d_max_values.empty()) throw Error("sweep_dmax: no thresholds");
  for (double d : options.d_max_values)
    if (!(d > 0 && d <= 2)) throw Error("sweep_dmax: threshold " + format_double(d) + " outside (0, 2]");
  const double widest = *std::max_element(options.d_max_values.begin(), options.d_max_values.end());
  const auto all_edges = build_edges(treated, control, {widest, caliper, options.age_delta}, options.threads);

  std::vector<SweepRow> rows;
  for (double d : options.d_max_values) {
    std::vector<Edge> edges;
    for (const auto& e : all_edges)
      if (e.weight <= d) edges.push_back(e);
    const auto pairs = to_pairs(treated, control, solve_matching(treated.size(), control.size(), edges));
    SweepRow all{d, kAllTopics, {}};
    if (!pairs.empty()) all.estimate = bootstrap_satt(pairs, options.bootstrap_b, options.level, options.seed);
    rows.push_back(all);
    std::map<int, std::vector<MatchedPair>> by_topic;
    for (const auto& p : pairs) by_topic[p.topic].push_back(p);
    for (const auto& [topic, group] : by_topic)
      rows.push_back({d, topic, bootstrap_satt(group, options.bootstrap_b, options.level, options.seed)});
  }
  return rows;
}

Balance balance_diagnostics(std::span<const double> treated_logits, std::span<const double> control_logits) {
  if (treated_logits.empty() || control_logits.empty()) throw Error("balance_diagnostics: empty group");
  auto moments = [](std::span<const double> x) {
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::pair{mean, x.size() > 1 ? ss / static_cast<double>(x.size() - 1) : 0.0};
  };
  const auto [mt, vt] = moments(treated_logits);
  const auto [mc, vc] = moments(control_logits);
  Balance b;
  const double pooled = std::sqrt((vt + vc) / 2.0);
  if (pooled > 0)
    b.smd = (mt - mc) / pooled;
  else
    b.smd = mt == mc ? 0.0 : std::copysign(INFINITY, mt - mc);
  if (vc == 0.0) {
    b.variance_ratio = INFINITY;
    b.pass = false;
    return b;
  }
  b.variance_ratio = vt / vc;
  b.pass = std::abs(b.smd) < 0.25 && b.variance_ratio >= 0.5 && b.variance_ratio <= 2.0;
  return b;
}

}  // namespace moralmatch::matching
