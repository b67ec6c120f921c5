#pragma once

// Relation and entity foundation graphs.
//
// Both graphs are sets of typed directed edges whose types name position-wise
// interactions (head-to-head, relation-to-key, ...), never specific relations
// or entities. Every edge has its reciprocal-typed reverse edge.
//
// Cross-fact relation edges (h2h_r .. v2v_r) come from two occurrences of one
// entity in two distinct facts. Intra-fact edges (r2k_r, k2r_r, k2k_r and all
// entity-graph edges) come from a single fact.

#include <algorithm>
#include <array>
#include <bitset>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "thor/errors.hpp"
#include "thor/hkg.hpp"

namespace thor::fg {

enum class RelInteraction : std::uint8_t { H2H, H2T, T2H, T2T, R2K, K2R, K2K, H2V, V2H, T2V, V2T, V2V };
enum class EntInteraction : std::uint8_t { H2T, T2H, H2V, V2H, T2V, V2T, V2V };

inline constexpr std::size_t kRelInteractionCount = 12;
inline constexpr std::size_t kEntInteractionCount = 7;

inline constexpr std::array<std::string_view, kRelInteractionCount> kRelNames = {
    "h2h_r", "h2t_r", "t2h_r", "t2t_r", "r2k_r", "k2r_r", "k2k_r", "h2v_r", "v2h_r", "t2v_r", "v2t_r", "v2v_r"};
inline constexpr std::array<std::string_view, kEntInteractionCount> kEntNames = {"h2t_e", "t2h_e", "h2v_e", "v2h_e",
                                                                                  "t2v_e", "v2t_e", "v2v_e"};

constexpr RelInteraction reciprocal(RelInteraction t) {
  using R = RelInteraction;
  switch (t) {
    case R::H2T: return R::T2H;
    case R::T2H: return R::H2T;
    case R::R2K: return R::K2R;
    case R::K2R: return R::R2K;
    case R::H2V: return R::V2H;
    case R::V2H: return R::H2V;
    case R::T2V: return R::V2T;
    case R::V2T: return R::T2V;
    default: return t;  // h2h, t2t, k2k, v2v are self-paired
  }
}

constexpr EntInteraction reciprocal(EntInteraction t) {
  using E = EntInteraction;
  switch (t) {
    case E::H2T: return E::T2H;
    case E::T2H: return E::H2T;
    case E::H2V: return E::V2H;
    case E::V2H: return E::H2V;
    case E::T2V: return E::V2T;
    case E::V2T: return E::T2V;
    default: return t;
  }
}

constexpr std::uint32_t idx(RelInteraction t) { return static_cast<std::uint32_t>(t); }
constexpr std::uint32_t idx(EntInteraction t) { return static_cast<std::uint32_t>(t); }

// Which graph a FoundationGraph's edge types belong to. RelationalEntity is the
// ULTRA-alike entity graph whose edge type is 2 * relation + inverse-flag.
enum class GraphKind : std::uint8_t { Relation, Entity, RelationalEntity };

struct InteractionConfig {
  std::bitset<kRelInteractionCount> relation;
  std::bitset<kEntInteractionCount> entity;
  bool ultra_alike = false;  // relation states drive entity-graph messages
  std::string name = "custom";

  bool has(RelInteraction t) const { return relation.test(idx(t)); }
  bool has(EntInteraction t) const { return entity.test(idx(t)); }

  bool uses_values() const {
    using R = RelInteraction;
    return has(R::H2V) || has(R::V2H) || has(R::T2V) || has(R::V2T) || has(R::V2V);
  }

  // Adds the reciprocal of every active type.
  void close_under_reciprocity() {
    for (std::size_t i = 0; i < kRelInteractionCount; ++i)
      if (relation.test(i)) relation.set(idx(reciprocal(static_cast<RelInteraction>(i))));
    for (std::size_t i = 0; i < kEntInteractionCount; ++i)
      if (entity.test(i)) entity.set(idx(reciprocal(static_cast<EntInteraction>(i))));
  }

  bool operator==(const InteractionConfig& o) const {
    return relation == o.relation && entity == o.entity && ultra_alike == o.ultra_alike;
  }
};

namespace detail {

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

template <typename E, std::size_t N>
std::bitset<N> bits(std::initializer_list<E> ts) {
  std::bitset<N> b;
  for (auto t : ts) b.set(static_cast<std::size_t>(t));
  return b;
}

}  // namespace detail

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"default", "noR2K", "noPrim", "addK2K", "addShareV",
                                                 "addAllFI", "noV2V", "noP2V",  "noV",    "ultra-alike"};
  return names;
}

// Named presets: the selected interaction sets and every ablation variant.
inline InteractionConfig preset(std::string_view name) {
  using R = RelInteraction;
  using E = EntInteraction;
  const auto prim = detail::bits<R, kRelInteractionCount>({R::H2H, R::H2T, R::T2H, R::T2T});
  const auto r2k = detail::bits<R, kRelInteractionCount>({R::R2K, R::K2R});
  const auto k2k = detail::bits<R, kRelInteractionCount>({R::K2K});
  const auto share_v = detail::bits<R, kRelInteractionCount>({R::H2V, R::V2H, R::T2V, R::V2T, R::V2V});
  const auto ent_all = std::bitset<kEntInteractionCount>().set();
  const auto ent_v2v = detail::bits<E, kEntInteractionCount>({E::V2V});
  const auto ent_p2v = detail::bits<E, kEntInteractionCount>({E::H2V, E::V2H, E::T2V, E::V2T});

  InteractionConfig c;
  c.relation = prim | r2k;
  c.entity = ent_all;
  const auto key = detail::lower(name);
  if (key == "default") {
  } else if (key == "nor2k") {
    c.relation = prim;
  } else if (key == "noprim") {
    c.relation = r2k;
  } else if (key == "addk2k") {
    c.relation |= k2k;
  } else if (key == "addsharev") {
    c.relation |= share_v;
  } else if (key == "addallfi") {
    c.relation = std::bitset<kRelInteractionCount>().set();
  } else if (key == "nov2v") {
    c.entity &= ~ent_v2v;
  } else if (key == "nop2v") {
    c.entity &= ~ent_p2v;
  } else if (key == "nov") {
    c.entity &= ~(ent_v2v | ent_p2v);
  } else if (key == "ultra-alike" || key == "ultra") {
    c.ultra_alike = true;
  } else {
    throw ConfigError("unknown interaction preset '" + std::string(name) + "'");
  }
  for (const auto& n : preset_names())
    if (detail::lower(n) == key) c.name = n;
  if (key == "ultra") c.name = "ultra-alike";
  return c;
}

// Builds a config from interaction names such as "h2h_r" or "v2v_e". The set is
// closed under reciprocity.
inline InteractionConfig config_from_names(std::span<const std::string> names) {
  InteractionConfig c;
  for (const auto& raw : names) {
    const auto n = detail::lower(raw);
    bool found = false;
    for (std::size_t i = 0; i < kRelInteractionCount; ++i)
      if (kRelNames[i] == n) c.relation.set(i), found = true;
    for (std::size_t i = 0; i < kEntInteractionCount; ++i)
      if (kEntNames[i] == n) c.entity.set(i), found = true;
    if (!found) throw ConfigError("unknown interaction name '" + raw + "'");
  }
  c.close_under_reciprocity();
  return c;
}

struct TypedEdge {
  std::uint32_t src = 0;
  std::uint32_t type = 0;
  std::uint32_t dst = 0;
  auto operator<=>(const TypedEdge&) const = default;
};

struct FoundationGraph {
  GraphKind kind = GraphKind::Relation;
  std::uint32_t node_count = 0;
  std::vector<TypedEdge> edges;  // sorted by (src, type, dst), unique
  std::uint32_t type_count = 0;  // size of the type alphabet
  std::vector<bool> active;      // active[type]; empty for RelationalEntity

  bool contains(const TypedEdge& e) const { return std::binary_search(edges.begin(), edges.end(), e); }

  std::optional<std::uint32_t> find(const TypedEdge& e) const {
    auto it = std::lower_bound(edges.begin(), edges.end(), e);
    if (it == edges.end() || *it != e) return std::nullopt;
    return static_cast<std::uint32_t>(it - edges.begin());
  }

  std::string type_name(std::uint32_t t) const {
    switch (kind) {
      case GraphKind::Relation:
        return std::string(kRelNames.at(t));
      case GraphKind::Entity:
        return std::string(kEntNames.at(t));
      case GraphKind::RelationalEntity:
        return "rel" + std::to_string(t / 2) + (t % 2 ? "_inv" : "");
    }
    return "?";
  }

  // Reciprocal type of t within this graph's alphabet.
  std::uint32_t reciprocal_type(std::uint32_t t) const {
    switch (kind) {
      case GraphKind::Relation:
        return idx(reciprocal(static_cast<RelInteraction>(t)));
      case GraphKind::Entity:
        return idx(reciprocal(static_cast<EntInteraction>(t)));
      case GraphKind::RelationalEntity:
        return t ^ 1u;
    }
    return t;
  }

  bool reciprocity_closed() const {
    for (const auto& e : edges)
      if (!contains({e.dst, reciprocal_type(e.type), e.src})) return false;
    return true;
  }

  bool operator==(const FoundationGraph&) const = default;
};

// CSR offsets over a graph whose edges are sorted by source.
inline std::vector<std::uint32_t> out_offsets(const FoundationGraph& g) {
  std::vector<std::uint32_t> off(g.node_count + 1, 0);
  for (const auto& e : g.edges) ++off.at(e.src + 1);
  for (std::size_t i = 1; i < off.size(); ++i) off[i] += off[i - 1];
  return off;
}

// Edge list with the number of independent derivations behind each edge.
// Intra-fact edges count distinct facts; cross-fact edges count ordered
// occurrence pairs from distinct facts.
struct CountedEdges {
  std::vector<TypedEdge> edges;
  std::vector<std::uint64_t> support;
};

namespace detail {

inline std::vector<bool> exclusion_mask(const Hkg& kg, std::span<const std::uint32_t> exclude) {
  std::vector<bool> mask(kg.fact_count(), false);
  for (auto f : exclude) {
    if (f >= kg.fact_count()) throw IndexError("excluded fact " + std::to_string(f) + " out of range");
    mask[f] = true;
  }
  return mask;
}

inline CountedEdges merge(std::vector<std::pair<TypedEdge, std::uint64_t>> raw) {
  std::sort(raw.begin(), raw.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  CountedEdges out;
  for (const auto& [e, c] : raw) {
    if (c == 0) continue;
    if (!out.edges.empty() && out.edges.back() == e) {
      out.support.back() += c;
    } else {
      out.edges.push_back(e);
      out.support.push_back(c);
    }
  }
  return out;
}

inline void dedupe(std::vector<TypedEdge>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

using Kind = PositionRole::Kind;

// Cross-fact relation interaction for an ordered (role of A, role of B) pair.
inline std::optional<RelInteraction> cross_type(Kind a, Kind b) {
  using R = RelInteraction;
  if (a == Kind::Head && b == Kind::Head) return R::H2H;
  if (a == Kind::Head && b == Kind::Tail) return R::H2T;
  if (a == Kind::Tail && b == Kind::Head) return R::T2H;
  if (a == Kind::Tail && b == Kind::Tail) return R::T2T;
  if (a == Kind::Head && b == Kind::Value) return R::H2V;
  if (a == Kind::Value && b == Kind::Head) return R::V2H;
  if (a == Kind::Tail && b == Kind::Value) return R::T2V;
  if (a == Kind::Value && b == Kind::Tail) return R::V2T;
  if (a == Kind::Value && b == Kind::Value) return R::V2V;
  return std::nullopt;
}

// Relation standing at an entity occurrence: the primary relation for head and
// tail, the paired key for a value.
inline std::uint32_t anchor_relation(const HyperFact& f, PositionRole role) {
  return role.kind == Kind::Value ? f.qualifiers[role.index].key.value : f.relation.value;
}

inline void intra_relation_edges(const HyperFact& f, const InteractionConfig& cfg, std::vector<TypedEdge>& out) {
  using R = RelInteraction;
  const auto r = f.relation.value;
  for (std::size_t i = 0; i < f.arity(); ++i) {
    const auto k = f.qualifiers[i].key.value;
    if (cfg.has(R::R2K)) out.push_back({r, idx(R::R2K), k});
    if (cfg.has(R::K2R)) out.push_back({k, idx(R::K2R), r});
    if (cfg.has(R::K2K)) {
      for (std::size_t j = 0; j < f.arity(); ++j)
        if (j != i) out.push_back({k, idx(R::K2K), f.qualifiers[j].key.value});
    }
  }
}

inline void intra_entity_edges(const HyperFact& f, const InteractionConfig& cfg, std::vector<TypedEdge>& out) {
  using E = EntInteraction;
  const auto h = f.head.value, t = f.tail.value;
  auto put = [&](std::uint32_t a, E ty, std::uint32_t b) {
    if (cfg.has(ty)) out.push_back({a, idx(ty), b});
  };
  put(h, E::H2T, t);
  put(t, E::T2H, h);
  for (std::size_t i = 0; i < f.arity(); ++i) {
    const auto v = f.qualifiers[i].value.value;
    put(h, E::H2V, v);
    put(v, E::V2H, h);
    put(t, E::T2V, v);
    put(v, E::V2T, t);
    for (std::size_t j = 0; j < f.arity(); ++j)
      if (j != i) put(v, E::V2V, f.qualifiers[j].value.value);
  }
}

inline void intra_relational_edges(const HyperFact& f, std::vector<TypedEdge>& out) {
  const auto h = f.head.value, t = f.tail.value, r = f.relation.value;
  out.push_back({h, 2 * r, t});
  out.push_back({t, 2 * r + 1, h});
  for (const auto& q : f.qualifiers) {
    out.push_back({h, 2 * q.key.value, q.value.value});
    out.push_back({q.value.value, 2 * q.key.value + 1, h});
    out.push_back({t, 2 * q.key.value, q.value.value});
    out.push_back({q.value.value, 2 * q.key.value + 1, t});
  }
}

inline bool relevant_role(Kind k, bool use_values) {
  return k == Kind::Head || k == Kind::Tail || (k == Kind::Value && use_values);
}

struct RoleGroup {
  Kind kind;
  std::uint32_t relation;
  std::uint64_t count;
};

// Distinct (role, anchor relation) groups of the non-excluded occurrences of
// one entity.
inline std::vector<RoleGroup> role_groups(const Hkg& kg, const std::vector<Occurrence>& occs,
                                          const std::vector<bool>& excluded, bool use_values,
                                          std::vector<std::uint32_t>* group_of = nullptr) {
  std::vector<RoleGroup> groups;
  if (group_of) group_of->clear();
  for (const auto& o : occs) {
    if (!relevant_role(o.role.kind, use_values) || excluded[o.fact]) {
      if (group_of) group_of->push_back(UINT32_MAX);
      continue;
    }
    const auto rel = anchor_relation(kg.fact(o.fact), o.role);
    std::uint32_t g = 0;
    while (g < groups.size() && !(groups[g].kind == o.role.kind && groups[g].relation == rel)) ++g;
    if (g == groups.size()) groups.push_back({o.role.kind, rel, 0});
    ++groups[g].count;
    if (group_of) group_of->push_back(g);
  }
  return groups;
}

}  // namespace detail

inline CountedEdges count_relation_edges(const Hkg& kg, const InteractionConfig& cfg,
                                         std::span<const std::uint32_t> exclude = {}) {
  const auto excluded = detail::exclusion_mask(kg, exclude);
  std::vector<std::pair<TypedEdge, std::uint64_t>> raw;
  std::vector<TypedEdge> scratch;
  for (std::uint32_t i = 0; i < kg.fact_count(); ++i) {
    if (excluded[i]) continue;
    scratch.clear();
    detail::intra_relation_edges(kg.fact(i), cfg, scratch);
    detail::dedupe(scratch);
    for (const auto& e : scratch) raw.push_back({e, 1});
  }
  const bool use_values = cfg.uses_values();
  std::vector<std::uint32_t> group_of;
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint64_t> within;
  for (std::uint32_t e = 0; e < kg.entity_count(); ++e) {
    const auto& occs = kg.entity_occurrences(EntityId(e));
    const auto groups = detail::role_groups(kg, occs, excluded, use_values, &group_of);
    if (groups.empty()) continue;
    // Ordered occurrence pairs within one fact are not cross-fact derivations.
    within.clear();
    for (std::size_t a = 0; a < occs.size();) {
      std::size_t b = a;
      while (b < occs.size() && occs[b].fact == occs[a].fact) ++b;
      for (std::size_t x = a; x < b; ++x)
        for (std::size_t y = a; y < b; ++y)
          if (group_of[x] != UINT32_MAX && group_of[y] != UINT32_MAX) ++within[{group_of[x], group_of[y]}];
      a = b;
    }
    for (std::uint32_t g1 = 0; g1 < groups.size(); ++g1) {
      for (std::uint32_t g2 = 0; g2 < groups.size(); ++g2) {
        const auto ty = detail::cross_type(groups[g1].kind, groups[g2].kind);
        if (!ty || !cfg.has(*ty)) continue;
        std::uint64_t d = groups[g1].count * groups[g2].count;
        if (auto it = within.find({g1, g2}); it != within.end()) d -= it->second;
        if (d > 0) raw.push_back({{groups[g1].relation, idx(*ty), groups[g2].relation}, d});
      }
    }
  }
  return detail::merge(std::move(raw));
}

inline CountedEdges count_entity_edges(const Hkg& kg, const InteractionConfig& cfg,
                                       std::span<const std::uint32_t> exclude = {}) {
  const auto excluded = detail::exclusion_mask(kg, exclude);
  std::vector<std::pair<TypedEdge, std::uint64_t>> raw;
  std::vector<TypedEdge> scratch;
  for (std::uint32_t i = 0; i < kg.fact_count(); ++i) {
    if (excluded[i]) continue;
    scratch.clear();
    if (cfg.ultra_alike) {
      detail::intra_relational_edges(kg.fact(i), scratch);
    } else {
      detail::intra_entity_edges(kg.fact(i), cfg, scratch);
    }
    detail::dedupe(scratch);
    for (const auto& e : scratch) raw.push_back({e, 1});
  }
  return detail::merge(std::move(raw));
}

inline FoundationGraph make_graph(GraphKind kind, std::uint32_t node_count, std::vector<TypedEdge> edges,
                                  const InteractionConfig& cfg, std::uint32_t relation_count = 0) {
  FoundationGraph g;
  g.kind = kind;
  g.node_count = node_count;
  g.edges = std::move(edges);
  switch (kind) {
    case GraphKind::Relation:
      g.type_count = kRelInteractionCount;
      for (std::size_t i = 0; i < kRelInteractionCount; ++i) g.active.push_back(cfg.relation.test(i));
      break;
    case GraphKind::Entity:
      g.type_count = kEntInteractionCount;
      for (std::size_t i = 0; i < kEntInteractionCount; ++i) g.active.push_back(cfg.entity.test(i));
      break;
    case GraphKind::RelationalEntity:
      g.type_count = 2 * relation_count;
      break;
  }
  return g;
}

inline FoundationGraph build_relation_graph(const Hkg& kg, const InteractionConfig& cfg,
                                            std::span<const std::uint32_t> exclude = {}) {
  auto counted = count_relation_edges(kg, cfg, exclude);
  return make_graph(GraphKind::Relation, static_cast<std::uint32_t>(kg.relation_count()), std::move(counted.edges), cfg);
}

// Entity graph; in ultra-alike mode this is the relation-typed entity graph.
inline FoundationGraph build_entity_graph(const Hkg& kg, const InteractionConfig& cfg,
                                          std::span<const std::uint32_t> exclude = {}) {
  auto counted = count_entity_edges(kg, cfg, exclude);
  const auto kind = cfg.ultra_alike ? GraphKind::RelationalEntity : GraphKind::Entity;
  return make_graph(kind, static_cast<std::uint32_t>(kg.entity_count()), std::move(counted.edges), cfg,
                    static_cast<std::uint32_t>(kg.relation_count()));
}

// A foundation graph over the full fact set that can cheaply report which edges
// disappear when a single fact is excluded. The referenced Hkg must outlive it.
class GuardedGraph {
 public:
  static GuardedGraph relation(const Hkg& kg, const InteractionConfig& cfg) {
    GuardedGraph g;
    g.kg_ = &kg;
    g.cfg_ = cfg;
    auto counted = count_relation_edges(kg, cfg);
    g.support_ = std::move(counted.support);
    g.graph_ = make_graph(GraphKind::Relation, static_cast<std::uint32_t>(kg.relation_count()), std::move(counted.edges), cfg);
    const auto none = std::vector<bool>(kg.fact_count(), false);
    g.groups_.resize(kg.entity_count());
    for (std::uint32_t e = 0; e < kg.entity_count(); ++e)
      g.groups_[e] = detail::role_groups(kg, kg.entity_occurrences(EntityId(e)), none, cfg.uses_values());
    g.build_offsets();
    return g;
  }

  static GuardedGraph entity(const Hkg& kg, const InteractionConfig& cfg) {
    GuardedGraph g;
    g.kg_ = &kg;
    g.cfg_ = cfg;
    auto counted = count_entity_edges(kg, cfg);
    g.support_ = std::move(counted.support);
    g.graph_ = build_entity_graph_from(kg, cfg, std::move(counted.edges));
    g.build_offsets();
    return g;
  }

  const FoundationGraph& graph() const { return graph_; }
  std::span<const std::uint64_t> support() const { return support_; }

  // CSR offsets: the out-edges of node n are edges [offsets[n], offsets[n+1]).
  std::span<const std::uint32_t> offsets() const { return offsets_; }

  // Sorted indices of the edges whose entire support comes from `fact`.
  std::vector<std::uint32_t> edges_removed_by(std::uint32_t fact) const {
    if (fact >= kg_->fact_count()) throw IndexError("fact " + std::to_string(fact) + " out of range");
    const auto& f = kg_->fact(fact);
    std::vector<std::pair<TypedEdge, std::uint64_t>> contrib;
    std::vector<TypedEdge> intra;
    switch (graph_.kind) {
      case GraphKind::Relation:
        detail::intra_relation_edges(f, cfg_, intra);
        break;
      case GraphKind::Entity:
        detail::intra_entity_edges(f, cfg_, intra);
        break;
      case GraphKind::RelationalEntity:
        detail::intra_relational_edges(f, intra);
        break;
    }
    detail::dedupe(intra);
    for (const auto& e : intra) contrib.push_back({e, 1});
    if (graph_.kind == GraphKind::Relation) add_cross_contributions(fact, contrib);
    auto merged = detail::merge(std::move(contrib));
    std::vector<std::uint32_t> removed;
    for (std::size_t i = 0; i < merged.edges.size(); ++i) {
      const auto pos = graph_.find(merged.edges[i]);
      if (!pos) throw ContractError("guarded graph: contribution for an edge that does not exist");
      if (support_[*pos] == merged.support[i]) removed.push_back(*pos);
    }
    std::sort(removed.begin(), removed.end());
    return removed;
  }

  // The graph with the given edge indices dropped.
  FoundationGraph without(std::span<const std::uint32_t> removed) const {
    FoundationGraph g = graph_;
    g.edges.clear();
    std::size_t r = 0;
    for (std::uint32_t i = 0; i < graph_.edges.size(); ++i) {
      while (r < removed.size() && removed[r] < i) ++r;
      if (r < removed.size() && removed[r] == i) continue;
      g.edges.push_back(graph_.edges[i]);
    }
    return g;
  }

 private:
  static FoundationGraph build_entity_graph_from(const Hkg& kg, const InteractionConfig& cfg, std::vector<TypedEdge> edges) {
    const auto kind = cfg.ultra_alike ? GraphKind::RelationalEntity : GraphKind::Entity;
    return make_graph(kind, static_cast<std::uint32_t>(kg.entity_count()), std::move(edges), cfg,
                      static_cast<std::uint32_t>(kg.relation_count()));
  }

  void build_offsets() { offsets_ = out_offsets(graph_); }

  void add_cross_contributions(std::uint32_t fact, std::vector<std::pair<TypedEdge, std::uint64_t>>& contrib) const {
    const auto& f = kg_->fact(fact);
    const bool use_values = cfg_.uses_values();
    struct Occ {
      std::uint32_t entity;
      detail::Kind kind;
      std::uint32_t relation;
    };
    std::vector<Occ> occs;
    auto push = [&](EntityId e, PositionRole role) {
      if (detail::relevant_role(role.kind, use_values)) occs.push_back({e.value, role.kind, detail::anchor_relation(f, role)});
    };
    push(f.head, PositionRole::head());
    push(f.tail, PositionRole::tail());
    for (std::uint32_t i = 0; i < f.arity(); ++i) push(f.qualifiers[i].value, PositionRole::value(i));
    for (const auto& o : occs) {
      for (const auto& g : groups_[o.entity]) {
        std::uint64_t own = 0;  // this fact's occurrences at the entity in group g
        for (const auto& p : occs)
          if (p.entity == o.entity && p.kind == g.kind && p.relation == g.relation) ++own;
        const std::uint64_t partners = g.count - own;
        if (partners == 0) continue;
        if (auto t = detail::cross_type(o.kind, g.kind); t && cfg_.has(*t))
          contrib.push_back({{o.relation, idx(*t), g.relation}, partners});
        if (auto t = detail::cross_type(g.kind, o.kind); t && cfg_.has(*t))
          contrib.push_back({{g.relation, idx(*t), o.relation}, partners});
      }
    }
  }

  const Hkg* kg_ = nullptr;
  InteractionConfig cfg_;
  FoundationGraph graph_;
  std::vector<std::uint64_t> support_;
  std::vector<std::vector<detail::RoleGroup>> groups_;
  std::vector<std::uint32_t> offsets_;
};

struct GraphStats {
  std::vector<std::pair<std::string, std::size_t>> per_type;  // every type of the alphabet, in order
  std::map<std::size_t, std::size_t> out_degree_histogram;    // degree -> node count
  std::size_t edges = 0;
  std::size_t nodes = 0;

  std::size_t count(std::string_view type) const {
    for (const auto& [n, c] : per_type)
      if (n == type) return c;
    return 0;
  }
};

inline GraphStats graph_stats(const FoundationGraph& g) {
  GraphStats s;
  s.edges = g.edges.size();
  s.nodes = g.node_count;
  std::vector<std::size_t> counts(g.type_count, 0);
  std::vector<std::size_t> degree(g.node_count, 0);
  for (const auto& e : g.edges) {
    ++counts.at(e.type);
    ++degree.at(e.src);
  }
  for (std::uint32_t t = 0; t < g.type_count; ++t) s.per_type.emplace_back(g.type_name(t), counts[t]);
  for (auto d : degree) ++s.out_degree_histogram[d];
  return s;
}

// Writes "src TAB type-name TAB dst" lines. Node names come from `names` when
// given, otherwise the dense index is printed.
inline void export_edges(std::ostream& os, const FoundationGraph& g, const std::vector<std::string>* names = nullptr) {
  for (const auto& e : g.edges) {
    auto node = [&](std::uint32_t n) { return names ? (*names)[n] : std::to_string(n); };
    os << node(e.src) << '\t' << g.type_name(e.type) << '\t' << node(e.dst) << '\n';
  }
}

}  // namespace thor::fg
