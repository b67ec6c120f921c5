#pragma once

// Inductive benchmark construction: Louvain cluster splits, k-hop seed splits,
// relation-disjoint filtering and the inference/valid/test split.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "thor/errors.hpp"
#include "thor/hkg.hpp"
#include "thor/io.hpp"
#include "thor/rng.hpp"

namespace thor::split {

// Undirected weighted graph. adj[i] holds (j, A_ij); a self loop of weight w is
// stored once as A_ii = 2w so that degrees are row sums.
struct WeightedGraph {
  std::size_t n = 0;
  std::vector<std::map<std::uint32_t, double>> adj;

  explicit WeightedGraph(std::size_t nodes = 0) : n(nodes), adj(nodes) {}

  void add_edge(std::uint32_t u, std::uint32_t v, double w = 1.0) {
    if (u >= n || v >= n) throw IndexError("edge endpoint out of range");
    if (u == v) {
      adj[u][u] += 2.0 * w;
    } else {
      adj[u][v] += w;
      adj[v][u] += w;
    }
  }

  double degree(std::uint32_t i) const {
    double k = 0.0;
    for (const auto& [j, w] : adj[i]) k += w;
    return k;
  }

  double total_weight() const {  // 2m
    double s = 0.0;
    for (std::uint32_t i = 0; i < n; ++i) s += degree(i);
    return s;
  }
};

// Entity co-occurrence graph of the primary triplets (qualifiers ignored). One
// unit of weight per fact.
inline WeightedGraph primary_graph(const Hkg& kg) {
  WeightedGraph g(kg.entity_count());
  for (const auto& f : kg.facts()) g.add_edge(f.head.value, f.tail.value);
  return g;
}

inline double modularity(const WeightedGraph& g, const std::vector<std::uint32_t>& community) {
  const double m2 = g.total_weight();
  if (m2 == 0.0) return 0.0;
  std::map<std::uint32_t, double> in, tot;
  for (std::uint32_t i = 0; i < g.n; ++i) {
    tot[community[i]] += g.degree(i);
    for (const auto& [j, w] : g.adj[i])
      if (community[j] == community[i]) in[community[i]] += w;
  }
  double q = 0.0;
  for (const auto& [c, t] : tot) q += in[c] / m2 - (t / m2) * (t / m2);
  return q;
}

namespace detail {

// Relabels communities 0..k-1 in order of first appearance by node id.
inline std::size_t compact(std::vector<std::uint32_t>& c) {
  std::map<std::uint32_t, std::uint32_t> ids;
  for (auto& x : c) {
    auto [it, inserted] = ids.try_emplace(x, static_cast<std::uint32_t>(ids.size()));
    x = it->second;
  }
  return ids.size();
}

// Sequential local moving on one level. Nodes are visited in ascending order;
// each node moves to the neighbouring community with the largest strictly
// positive gain over staying (ties go to the lowest community id). Sweeps
// repeat until a full sweep moves nothing.
inline bool local_moving(const WeightedGraph& g, std::vector<std::uint32_t>& comm) {
  const double m2 = g.total_weight();
  std::vector<double> k(g.n), tot(g.n, 0.0);
  for (std::uint32_t i = 0; i < g.n; ++i) {
    k[i] = g.degree(i);
    tot[comm[i]] += k[i];
  }
  bool any = false;
  for (bool moved = true; moved;) {
    moved = false;
    for (std::uint32_t i = 0; i < g.n; ++i) {
      const auto ci = comm[i];
      tot[ci] -= k[i];
      std::map<std::uint32_t, double> links;  // community -> weight from i
      for (const auto& [j, w] : g.adj[i])
        if (j != i) links[comm[j]] += w;
      auto gain = [&](std::uint32_t c) {
        auto it = links.find(c);
        const double kin = it == links.end() ? 0.0 : it->second;
        return kin - tot[c] * k[i] / m2;
      };
      std::uint32_t best = ci;
      double best_gain = gain(ci);
      for (const auto& [c, w] : links) {
        const double gc = gain(c);
        if (gc > best_gain + 1e-12) {
          best = c;
          best_gain = gc;
        }
      }
      tot[best] += k[i];
      if (best != ci) {
        comm[i] = best;
        moved = true;
        any = true;
      }
    }
  }
  return any;
}

inline WeightedGraph aggregate(const WeightedGraph& g, const std::vector<std::uint32_t>& comm, std::size_t k) {
  WeightedGraph out(k);
  for (std::uint32_t i = 0; i < g.n; ++i)
    for (const auto& [j, w] : g.adj[i]) out.adj[comm[i]][comm[j]] += w;
  return out;
}

}  // namespace detail

struct Communities {
  std::vector<std::uint32_t> of;  // per node
  std::size_t count = 0;
  double modularity = 0.0;
};

// Louvain modularity optimization at resolution 1. Deterministic: no random
// node order. A greedy heuristic; it can stop at a local optimum.
inline Communities louvain(const WeightedGraph& g) {
  Communities res;
  res.of.resize(g.n);
  for (std::uint32_t i = 0; i < g.n; ++i) res.of[i] = i;
  res.count = g.n;
  if (g.n == 0 || g.total_weight() == 0.0) {
    res.modularity = 0.0;
    return res;
  }
  WeightedGraph level = g;
  while (true) {
    std::vector<std::uint32_t> comm(level.n);
    for (std::uint32_t i = 0; i < level.n; ++i) comm[i] = i;
    const bool moved = detail::local_moving(level, comm);
    const std::size_t k = detail::compact(comm);
    if (!moved || k == level.n) break;
    for (auto& c : res.of) c = comm[c];
    level = detail::aggregate(level, comm, k);
  }
  res.count = detail::compact(res.of);
  res.modularity = modularity(g, res.of);
  return res;
}

// Exhaustive maximum modularity over all set partitions (small graphs only).
inline double max_modularity_exhaustive(const WeightedGraph& g) {
  if (g.n > 10) throw ContractError("exhaustive modularity is limited to 10 nodes");
  std::vector<std::uint32_t> c(g.n, 0);
  double best = g.n == 0 ? 0.0 : -1.0;
  // Restricted growth strings enumerate each partition once.
  auto rec = [&](auto&& self, std::uint32_t i, std::uint32_t used) -> void {
    if (i == g.n) {
      best = std::max(best, modularity(g, c));
      return;
    }
    for (std::uint32_t x = 0; x <= used && x < g.n; ++x) {
      c[i] = x;
      self(self, i + 1, std::max(used, x + 1));
    }
  };
  if (g.n > 0) {
    c[0] = 0;
    rec(rec, 1, 1);
  }
  return best;
}

// ---------------------------------------------------------------------------

enum class Method { KHopSeed, LouvainCluster };

struct SplitConfig {
  Method method = Method::LouvainCluster;
  std::size_t seed_count = 1;
  std::size_t k = 1;
  std::array<double, 3> ratios = {0.8, 0.1, 0.1};  // inference / valid / test
  std::uint64_t seed = 42;
  bool relation_disjoint = false;
};

inline void check_ratios(const std::array<double, 3>& r) {
  for (double x : r)
    if (!(x >= 0.0)) throw ConfigError("split ratios must be non-negative");
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
}

// Facts of `kg` whose every entity satisfies `keep`, as a fresh Hkg.
template <typename Pred>
Hkg facts_within(const Hkg& kg, Pred keep) {
  std::vector<RawFact> out;
  for (std::size_t i = 0; i < kg.fact_count(); ++i) {
    const auto& f = kg.fact(i);
    bool ok = keep(f.head.value) && keep(f.tail.value);
    for (const auto& q : f.qualifiers) ok = ok && keep(q.value.value);
    if (ok) out.push_back(kg.raw(i));
  }
  return Hkg::from_raw(out);
}

struct TwoWay {
  Hkg train;
  Hkg ind;
  std::optional<Communities> communities;
};

inline TwoWay cluster_split(const Hkg& raw) {
  auto comm = louvain(primary_graph(raw));
  std::vector<std::size_t> piece(comm.count, 0);
  for (const auto& f : raw.facts()) {
    const auto c = comm.of[f.head.value];
    bool inside = comm.of[f.tail.value] == c;
    for (const auto& q : f.qualifiers) inside = inside && comm.of[q.value.value] == c;
    if (inside) ++piece[c];
  }
  std::vector<std::uint32_t> order(comm.count);
  for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return piece[a] > piece[b]; });
  if (order.size() < 2 || piece[order[1]] == 0) {
    throw SplitInfeasible("cluster split needs at least two non-empty clusters");
  }
  const auto a = order[0], b = order[1];
  TwoWay out{facts_within(raw, [&](std::uint32_t e) { return comm.of[e] == a; }),
             facts_within(raw, [&](std::uint32_t e) { return comm.of[e] == b; }), std::move(comm)};
  return out;
}

inline TwoWay khop_split(const Hkg& raw, std::size_t seed_count, std::size_t k, std::uint64_t seed) {
  if (seed_count == 0) throw ConfigError("seed count must be at least 1");
  if (raw.fact_count() == 0) throw SplitInfeasible("k-hop split of an empty graph");
  Rng rng(seed);
  auto perm = rng.permutation(raw.fact_count());
  perm.resize(std::min(seed_count, perm.size()));
  std::vector<int> depth(raw.entity_count(), -1);
  std::queue<std::uint32_t> frontier;
  auto mark = [&](EntityId e) {
    if (depth[e.value] < 0) {
      depth[e.value] = 0;
      frontier.push(e.value);
    }
  };
  for (auto fi : perm) {
    const auto& f = raw.fact(fi);
    mark(f.head);
    mark(f.tail);
    for (const auto& q : f.qualifiers) mark(q.value);
  }
  // Hops follow the primary-triplet graph.
  const auto g = primary_graph(raw);
  while (!frontier.empty()) {
    const auto u = frontier.front();
    frontier.pop();
    if (static_cast<std::size_t>(depth[u]) >= k) continue;
    for (const auto& [v, w] : g.adj[u]) {
      if (depth[v] < 0) {
        depth[v] = depth[u] + 1;
        frontier.push(v);
      }
    }
  }
  if (std::all_of(depth.begin(), depth.end(), [](int d) { return d >= 0; })) {
    throw SplitInfeasible("k-hop split leaves no inductive entities");
  }
  TwoWay out{facts_within(raw, [&](std::uint32_t e) { return depth[e] >= 0; }),
             facts_within(raw, [&](std::uint32_t e) { return depth[e] < 0; }), std::nullopt};
  if (out.ind.fact_count() == 0) throw SplitInfeasible("k-hop split leaves no inductive facts");
  return out;
}

// Drops every inductive fact that uses a relation (primary or key) known to the
// training graph.
inline Hkg relation_disjoint_filter(const Hkg& train, const Hkg& ind) {
  std::vector<RawFact> keep;
  for (std::size_t i = 0; i < ind.fact_count(); ++i) {
    const auto r = ind.raw(i);
    bool clash = train.relations().contains(r.relation);
    for (const auto& [k, v] : r.qualifiers) clash = clash || train.relations().contains(k);
    if (!clash) keep.push_back(r);
  }
  if (keep.empty()) throw SplitInfeasible("relation-disjoint filter removed every inductive fact");
  return Hkg::from_raw(keep);
}

struct InductiveParts {
  std::vector<RawFact> inference;
  std::vector<RawFact> valid;
  std::vector<RawFact> test;
  std::size_t reassigned = 0;
};

// Seeded shuffle, contiguous split by ratios, then valid/test facts that use an
// entity or relation missing from the inference graph move to inference.
inline InductiveParts split_inductive(const Hkg& ind, const std::array<double, 3>& ratios, std::uint64_t seed) {
  check_ratios(ratios);
  const std::size_t n = ind.fact_count();
  Rng rng(seed);
  const auto perm = rng.permutation(n);
  const auto n_inf = static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(n)));
  const auto n_valid = std::min(n - std::min(n, n_inf), static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(n))));
  InductiveParts out;
  std::unordered_set<std::string> ents, rels;
  auto absorb = [&](const RawFact& f) {
    ents.insert(f.head);
    ents.insert(f.tail);
    rels.insert(f.relation);
    for (const auto& [k, v] : f.qualifiers) {
      rels.insert(k);
      ents.insert(v);
    }
  };
  auto known = [&](const RawFact& f) {
    bool ok = ents.count(f.head) && ents.count(f.tail) && rels.count(f.relation);
    for (const auto& [k, v] : f.qualifiers) ok = ok && rels.count(k) && ents.count(v);
    return ok;
  };
  std::vector<RawFact> valid, test;
  for (std::size_t i = 0; i < n; ++i) {
    auto f = ind.raw(perm[i]);
    if (i < n_inf) {
      absorb(f);
      out.inference.push_back(std::move(f));
    } else if (i < n_inf + n_valid) {
      valid.push_back(std::move(f));
    } else {
      test.push_back(std::move(f));
    }
  }
  // The inference vocabulary only grows, so one pass leaves every remaining
  // valid/test fact answerable.
  auto settle = [&](std::vector<RawFact>& part, std::vector<RawFact>& dest) {
    for (auto& f : part) {
      if (known(f)) {
        dest.push_back(std::move(f));
      } else {
        absorb(f);
        out.inference.push_back(std::move(f));
        ++out.reassigned;
      }
    }
  };
  settle(valid, out.valid);
  settle(test, out.test);
  return out;
}

struct SplitResult {
  io::DatasetBundle bundle;
  std::optional<Communities> communities;
  std::size_t reassigned = 0;
  std::size_t filtered_out = 0;  // inductive facts dropped by the relation filter
};

inline SplitResult make_split(const Hkg& raw, const SplitConfig& cfg) {
  check_ratios(cfg.ratios);
  auto two = cfg.method == Method::LouvainCluster ? cluster_split(raw) : khop_split(raw, cfg.seed_count, cfg.k, cfg.seed);
  SplitResult res;
  Hkg ind = std::move(two.ind);
  if (cfg.relation_disjoint) {
    const auto before = ind.fact_count();
    ind = relation_disjoint_filter(two.train, ind);
    res.filtered_out = before - ind.fact_count();
  }
  auto parts = split_inductive(ind, cfg.ratios, cfg.seed);
  res.reassigned = parts.reassigned;
  res.communities = std::move(two.communities);
  res.bundle = io::make_bundle(std::move(two.train), Hkg::from_raw(parts.inference), std::move(parts.valid),
                               std::move(parts.test));
  return res;
}

inline std::string split_report(const SplitResult& r, const SplitConfig& cfg) {
  std::ostringstream os;
  os << "method\t" << (cfg.method == Method::LouvainCluster ? "louvain" : "khop") << '\n';
  if (cfg.method == Method::KHopSeed) os << "seed_count\t" << cfg.seed_count << "\nk\t" << cfg.k << '\n';
  os << "ratios\t" << cfg.ratios[0] << ',' << cfg.ratios[1] << ',' << cfg.ratios[2] << '\n';
  os << "seed\t" << cfg.seed << '\n';
  os << "relation_disjoint\t" << (cfg.relation_disjoint ? "on" : "off") << '\n';
  if (r.communities) {
    os << "communities\t" << r.communities->count << '\n';
    os << "modularity\t" << r.communities->modularity << '\n';
  }
  os << "filtered_out\t" << r.filtered_out << '\n';
  os << "reassigned_to_inference\t" << r.reassigned << '\n';
  os << r.bundle.diagnostics.report();
  return os.str();
}

inline void write_split(const SplitResult& r, const SplitConfig& cfg, const std::filesystem::path& dir) {
  io::write_bundle(r.bundle, dir);
  std::ofstream os(dir / "split-report.txt");
  if (!os) throw IoError("cannot write split report in " + dir.string());
  os << split_report(r, cfg);
}

}  // namespace thor::split
