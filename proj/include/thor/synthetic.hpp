#pragma once

// Synthetic hyper-relational graphs for tests, smoke runs and timing.

#include <cstdint>
#include <string>
#include <vector>

#include "thor/hkg.hpp"
#include "thor/io.hpp"
#include "thor/rng.hpp"

namespace thor::synth {

// Random facts over small vocabularies; repeated entities and relations are
// likely, which exercises every interaction type.
inline std::vector<RawFact> random_facts(Rng& rng, std::size_t max_facts, std::size_t max_qualifiers,
                                         std::size_t entities, std::size_t relations, const std::string& prefix = "") {
  const std::size_t n = 1 + rng.index(max_facts);
  std::vector<RawFact> out;
  auto ent = [&] { return prefix + "e" + std::to_string(rng.index(entities)); };
  auto rel = [&] { return prefix + "r" + std::to_string(rng.index(relations)); };
  for (std::size_t i = 0; i < n; ++i) {
    RawFact f{ent(), rel(), ent(), {}};
    const std::size_t q = rng.index(max_qualifiers + 1);
    for (std::size_t j = 0; j < q; ++j) f.qualifiers.emplace_back(rel(), ent());
    out.push_back(std::move(f));
  }
  return out;
}

inline Hkg random_hkg(Rng& rng, std::size_t max_facts = 8, std::size_t max_qualifiers = 3, std::size_t entities = 6,
                      std::size_t relations = 4) {
  return Hkg::from_raw(random_facts(rng, max_facts, max_qualifiers, entities, relations));
}

// A chain of facts (e_i, r_{i mod 3}, e_{i+1}, k_{i mod 2}: v_i). Every fact has
// a qualifier and no two facts share an entity pair.
inline std::vector<RawFact> chain_facts(std::size_t n) {
  std::vector<RawFact> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"e" + std::to_string(i), "r" + std::to_string(i % 3), "e" + std::to_string(i + 1),
                   {{"k" + std::to_string(i % 2), "v" + std::to_string(i)}}});
  }
  return out;
}

// Chain of fact pairs: (e_i, r_{i mod 3}, e_{i+1}, k_{i mod 2}: v_i) and its twin
// (e_{i+1}, s_{i mod 3}, e_i, k_{i mod 2}: v_i). With one fact excluded its twin
// still connects the same entities, so every masked entity stays recoverable
// from the rest of the graph. 2n facts.
inline std::vector<RawFact> twin_chain(std::size_t n) {
  std::vector<RawFact> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = "e" + std::to_string(i), b = "e" + std::to_string(i + 1), v = "v" + std::to_string(i),
               k = "k" + std::to_string(i % 2);
    out.push_back({a, "r" + std::to_string(i % 3), b, {{k, v}}});
    out.push_back({b, "s" + std::to_string(i % 3), a, {{k, v}}});
  }
  return out;
}

// Rule-governed family. For i in [0, n):
//   A_i = (x_i, A, y_i, K: z_i)   the qualifier value is the tail of B_i
//   B_i = (y_i, B, z_i)
//   C_i = (z_i, C, x_{i+1})
//   D_i = (y_i, D, w_i)           distractor sharing y_i
// Every name carries `prefix`, so two instances share no vocabulary.
inline std::vector<RawFact> rule_family(std::size_t n, const std::string& prefix) {
  auto e = [&](const char* kind, std::size_t i) { return prefix + kind + std::to_string(i); };
  const std::string A = prefix + "relA", B = prefix + "relB", C = prefix + "relC", D = prefix + "relD",
                    K = prefix + "keyK";
  std::vector<RawFact> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({e("x", i), A, e("y", i), {{K, e("z", i)}}});
    out.push_back({e("y", i), B, e("z", i), {}});
    out.push_back({e("z", i), C, e("x", i + 1), {}});
    out.push_back({e("y", i), D, e("w", i), {}});
  }
  return out;
}

// Bounded-degree path: fact i = (n_i, r_{i mod R}, n_{i+1}, k_{i mod K}: v_i).
// Every entity is in at most two facts and the relation vocabulary is fixed,
// so per-query work does not grow with n.
inline std::vector<RawFact> sparse_path(std::size_t n, std::size_t relations = 8, std::size_t keys = 4) {
  std::vector<RawFact> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"n" + std::to_string(i), "r" + std::to_string(i % relations), "n" + std::to_string(i + 1),
                   {{"k" + std::to_string(i % keys), "v" + std::to_string(i)}}});
  }
  return out;
}

// Training facts with exactly the requested fact, entity and relation counts
// (facts >= entities >= 2, facts >= relations >= 1).
inline std::vector<RawFact> sized_facts(std::size_t facts, std::size_t entities, std::size_t relations,
                                        std::uint64_t seed, const std::string& prefix = "") {
  Rng rng(seed);
  std::vector<RawFact> out;
  out.reserve(facts);
  auto ent = [&](std::size_t i) { return prefix + "Q" + std::to_string(i); };
  auto rel = [&](std::size_t i) { return prefix + "P" + std::to_string(i); };
  for (std::size_t i = 0; i < facts; ++i) {
    // The first `entities` facts introduce every entity as a head; the first
    // `relations` facts introduce every relation.
    const std::size_t h = i < entities ? i : rng.index(entities);
    std::size_t t = rng.index(entities);
    if (t == h) t = (t + 1) % entities;
    RawFact f{ent(h), rel(i < relations ? i : rng.index(relations)), ent(t), {}};
    if (rng.uniform() < 0.3) f.qualifiers.emplace_back(rel(rng.index(relations)), ent(rng.index(entities)));
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace thor::synth
