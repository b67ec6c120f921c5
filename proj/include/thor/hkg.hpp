#pragma once

// Core hyper-relational KG types.
//
// Ids are opaque strings at the boundary and dense integers inside. A Vocabulary
// assigns dense ids in first-seen order, so the same fact list always yields
// the same ids.

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "thor/errors.hpp"

namespace thor {

template <typename Tag>
struct Id {
  std::uint32_t value = 0;

  constexpr Id() = default;
  constexpr explicit Id(std::uint32_t v) : value(v) {}
  constexpr auto operator<=>(const Id&) const = default;
};

using EntityId = Id<struct EntityTag>;
using RelationId = Id<struct RelationTag>;

struct Qualifier {
  RelationId key;
  EntityId value;
  bool operator==(const Qualifier&) const = default;
};

struct HyperFact {
  EntityId head;
  RelationId relation;
  EntityId tail;
  std::vector<Qualifier> qualifiers;  // ordered; order defines decoder positions

  std::size_t arity() const { return qualifiers.size(); }
  bool operator==(const HyperFact&) const = default;
};

// String-level fact as read from or written to disk.
struct RawFact {
  std::string head;
  std::string relation;
  std::string tail;
  std::vector<std::pair<std::string, std::string>> qualifiers;
  bool operator==(const RawFact&) const = default;
};

// Semantic position of an element inside a fact.
struct PositionRole {
  enum class Kind : std::uint8_t { Head, Tail, PrimaryRelation, Key, Value };
  Kind kind = Kind::Head;
  std::uint32_t index = 0;  // qualifier index for Key / Value, 0 otherwise

  static constexpr PositionRole head() { return {Kind::Head, 0}; }
  static constexpr PositionRole tail() { return {Kind::Tail, 0}; }
  static constexpr PositionRole primary_relation() { return {Kind::PrimaryRelation, 0}; }
  static constexpr PositionRole key(std::uint32_t i) { return {Kind::Key, i}; }
  static constexpr PositionRole value(std::uint32_t i) { return {Kind::Value, i}; }

  bool operator==(const PositionRole&) const = default;
  auto operator<=>(const PositionRole&) const = default;
};

inline std::string to_string(PositionRole r) {
  switch (r.kind) {
    case PositionRole::Kind::Head:
      return "head";
    case PositionRole::Kind::Tail:
      return "tail";
    case PositionRole::Kind::PrimaryRelation:
      return "relation";
    case PositionRole::Kind::Key:
      return "key[" + std::to_string(r.index) + "]";
    case PositionRole::Kind::Value:
      return "value[" + std::to_string(r.index) + "]";
  }
  return "?";
}

class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> names) {
    for (auto& n : names) intern(n);
  }

  std::uint32_t intern(const std::string& name) {
    auto [it, inserted] = index_.try_emplace(name, static_cast<std::uint32_t>(names_.size()));
    if (inserted) names_.push_back(name);
    return it->second;
  }

  std::optional<std::uint32_t> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const std::string& name(std::uint32_t id) const { return names_.at(id); }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }

  bool operator==(const Vocabulary& o) const { return names_ == o.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

struct Occurrence {
  std::uint32_t fact = 0;
  PositionRole role;
  bool operator==(const Occurrence&) const = default;
};

class Hkg {
 public:
  Hkg() = default;

  // Assembles a graph from explicit vocabularies and facts without checking
  // them; run validate() to find orphan or dangling ids. Out-of-range ids are
  // left out of the occurrence indices.
  Hkg(Vocabulary entities, Vocabulary relations, std::vector<HyperFact> facts)
      : entities_(std::move(entities)), relations_(std::move(relations)), facts_(std::move(facts)) {
    rebuild_indices();
  }

  static Hkg from_raw(std::span<const RawFact> raw) {
    Vocabulary ents, rels;
    std::vector<HyperFact> facts;
    facts.reserve(raw.size());
    for (const auto& r : raw) {
      HyperFact f;
      f.head = EntityId(ents.intern(r.head));
      f.relation = RelationId(rels.intern(r.relation));
      f.tail = EntityId(ents.intern(r.tail));
      for (const auto& [k, v] : r.qualifiers) {
        const RelationId key(rels.intern(k));
        f.qualifiers.push_back({key, EntityId(ents.intern(v))});
      }
      facts.push_back(std::move(f));
    }
    return Hkg(std::move(ents), std::move(rels), std::move(facts));
  }

  static Hkg from_raw(const std::vector<RawFact>& raw) { return from_raw(std::span<const RawFact>(raw)); }

  const Vocabulary& entities() const { return entities_; }
  const Vocabulary& relations() const { return relations_; }
  const std::vector<HyperFact>& facts() const { return facts_; }
  const HyperFact& fact(std::size_t i) const { return facts_.at(i); }
  std::size_t entity_count() const { return entities_.size(); }
  std::size_t relation_count() const { return relations_.size(); }
  std::size_t fact_count() const { return facts_.size(); }

  const std::vector<Occurrence>& entity_occurrences(EntityId e) const { return entity_index_.at(e.value); }
  const std::vector<Occurrence>& relation_occurrences(RelationId r) const { return relation_index_.at(r.value); }
  const std::vector<std::vector<Occurrence>>& entity_index() const { return entity_index_; }
  const std::vector<std::vector<Occurrence>>& relation_index() const { return relation_index_; }

  RawFact raw(std::size_t i) const {
    const auto& f = facts_.at(i);
    RawFact r{entities_.name(f.head.value), relations_.name(f.relation.value), entities_.name(f.tail.value), {}};
    for (const auto& q : f.qualifiers) r.qualifiers.emplace_back(relations_.name(q.key.value), entities_.name(q.value.value));
    return r;
  }

  std::vector<RawFact> raw_facts() const {
    std::vector<RawFact> out;
    out.reserve(facts_.size());
    for (std::size_t i = 0; i < facts_.size(); ++i) out.push_back(raw(i));
    return out;
  }

  // Occurrence indices computed from scratch from the fact list.
  std::pair<std::vector<std::vector<Occurrence>>, std::vector<std::vector<Occurrence>>> compute_indices() const {
    std::vector<std::vector<Occurrence>> ent(entities_.size()), rel(relations_.size());
    auto put_e = [&](EntityId e, std::uint32_t f, PositionRole role) {
      if (e.value < ent.size()) ent[e.value].push_back({f, role});
    };
    auto put_r = [&](RelationId r, std::uint32_t f, PositionRole role) {
      if (r.value < rel.size()) rel[r.value].push_back({f, role});
    };
    for (std::uint32_t i = 0; i < facts_.size(); ++i) {
      const auto& f = facts_[i];
      put_e(f.head, i, PositionRole::head());
      put_r(f.relation, i, PositionRole::primary_relation());
      put_e(f.tail, i, PositionRole::tail());
      for (std::uint32_t q = 0; q < f.qualifiers.size(); ++q) {
        put_r(f.qualifiers[q].key, i, PositionRole::key(q));
        put_e(f.qualifiers[q].value, i, PositionRole::value(q));
      }
    }
    return {std::move(ent), std::move(rel)};
  }

  bool operator==(const Hkg& o) const {
    return entities_ == o.entities_ && relations_ == o.relations_ && facts_ == o.facts_;
  }

 private:
  void rebuild_indices() {
    auto [e, r] = compute_indices();
    entity_index_ = std::move(e);
    relation_index_ = std::move(r);
  }

  Vocabulary entities_;
  Vocabulary relations_;
  std::vector<HyperFact> facts_;
  std::vector<std::vector<Occurrence>> entity_index_;
  std::vector<std::vector<Occurrence>> relation_index_;
};

struct Violation {
  std::optional<std::uint32_t> fact;  // absent for vocabulary-level issues
  std::optional<PositionRole> role;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }

  std::string to_string() const {
    std::string out;
    for (const auto& v : violations) {
      if (v.fact) out += "fact " + std::to_string(*v.fact) + " ";
      if (v.role) out += thor::to_string(*v.role) + ": ";
      out += v.message + "\n";
    }
    return out;
  }
};

// Checks every Hkg invariant; violations are returned, never thrown.
inline ValidationReport validate(const Hkg& kg) {
  ValidationReport rep;
  const auto ne = kg.entity_count();
  const auto nr = kg.relation_count();
  std::vector<bool> ent_used(ne, false), rel_used(nr, false);
  auto check_e = [&](std::uint32_t fi, PositionRole role, EntityId e) {
    if (e.value >= ne) {
      rep.violations.push_back({fi, role, "entity id " + std::to_string(e.value) + " not in entity vocabulary"});
    } else {
      ent_used[e.value] = true;
    }
  };
  auto check_r = [&](std::uint32_t fi, PositionRole role, RelationId r) {
    if (r.value >= nr) {
      rep.violations.push_back({fi, role, "relation id " + std::to_string(r.value) + " not in relation vocabulary"});
    } else {
      rel_used[r.value] = true;
    }
  };
  for (std::uint32_t i = 0; i < kg.fact_count(); ++i) {
    const auto& f = kg.fact(i);
    check_e(i, PositionRole::head(), f.head);
    check_r(i, PositionRole::primary_relation(), f.relation);
    check_e(i, PositionRole::tail(), f.tail);
    for (std::uint32_t q = 0; q < f.qualifiers.size(); ++q) {
      check_r(i, PositionRole::key(q), f.qualifiers[q].key);
      check_e(i, PositionRole::value(q), f.qualifiers[q].value);
    }
  }
  for (std::uint32_t e = 0; e < ne; ++e)
    if (!ent_used[e]) rep.violations.push_back({std::nullopt, std::nullopt, "orphan entity '" + kg.entities().name(e) + "'"});
  for (std::uint32_t r = 0; r < nr; ++r)
    if (!rel_used[r]) rep.violations.push_back({std::nullopt, std::nullopt, "orphan relation '" + kg.relations().name(r) + "'"});
  auto [ei, ri] = kg.compute_indices();
  if (ei != kg.entity_index() || ri != kg.relation_index()) {
    rep.violations.push_back({std::nullopt, std::nullopt, "occurrence indices out of sync with facts"});
  }
  return rep;
}

// Position of the masked entity in a query.
struct MaskedPosition {
  enum class Kind : std::uint8_t { Head, Tail, Value };
  Kind kind = Kind::Head;
  std::uint32_t index = 0;  // qualifier index for Value

  static constexpr MaskedPosition head() { return {Kind::Head, 0}; }
  static constexpr MaskedPosition tail() { return {Kind::Tail, 0}; }
  static constexpr MaskedPosition value(std::uint32_t i) { return {Kind::Value, i}; }

  bool is_head_or_tail() const { return kind != Kind::Value; }
  bool operator==(const MaskedPosition&) const = default;
};

inline std::string to_string(MaskedPosition m) {
  switch (m.kind) {
    case MaskedPosition::Kind::Head:
      return "head";
    case MaskedPosition::Kind::Tail:
      return "tail";
    case MaskedPosition::Kind::Value:
      return "value[" + std::to_string(m.index) + "]";
  }
  return "?";
}

inline bool mask_valid_for(const HyperFact& f, MaskedPosition m) {
  return m.kind != MaskedPosition::Kind::Value || m.index < f.arity();
}

inline EntityId entity_at(const HyperFact& f, MaskedPosition m) {
  switch (m.kind) {
    case MaskedPosition::Kind::Head:
      return f.head;
    case MaskedPosition::Kind::Tail:
      return f.tail;
    case MaskedPosition::Kind::Value:
      if (m.index >= f.arity()) throw IndexError("value position " + std::to_string(m.index) + " beyond arity");
      return f.qualifiers[m.index].value;
  }
  return f.head;
}

inline void set_entity_at(HyperFact& f, MaskedPosition m, EntityId e) {
  switch (m.kind) {
    case MaskedPosition::Kind::Head:
      f.head = e;
      break;
    case MaskedPosition::Kind::Tail:
      f.tail = e;
      break;
    case MaskedPosition::Kind::Value:
      f.qualifiers.at(m.index).value = e;
      break;
  }
}

// A fact with one entity position masked. The entity stored at the masked
// position of `base` is ignored by every consumer except answer checks.
struct QueryFact {
  HyperFact base;
  MaskedPosition mask;
  std::optional<EntityId> answer;
  std::optional<std::uint32_t> source_fact;  // index of the fact in the graph it came from

  bool operator==(const QueryFact&) const = default;
};

inline QueryFact make_query(const HyperFact& f, MaskedPosition m, std::optional<std::uint32_t> source = std::nullopt) {
  if (!mask_valid_for(f, m)) throw ContractError("masked position " + to_string(m) + " invalid for fact arity");
  return QueryFact{f, m, entity_at(f, m), source};
}

// Throws if the query breaks its invariants.
inline void check_query(const QueryFact& q) {
  if (!mask_valid_for(q.base, q.mask)) throw ContractError("masked position " + to_string(q.mask) + " invalid for fact arity");
  if (q.answer && *q.answer != entity_at(q.base, q.mask)) throw ContractError("answer differs from entity at masked position");
}

// One query per entity position of every fact: Head, Tail, Value(0..n-1).
inline std::vector<QueryFact> generate_queries(const Hkg& kg) {
  std::vector<QueryFact> out;
  for (std::uint32_t i = 0; i < kg.fact_count(); ++i) {
    const auto& f = kg.fact(i);
    out.push_back(make_query(f, MaskedPosition::head(), i));
    out.push_back(make_query(f, MaskedPosition::tail(), i));
    for (std::uint32_t q = 0; q < f.arity(); ++q) out.push_back(make_query(f, MaskedPosition::value(q), i));
  }
  return out;
}

}  // namespace thor
