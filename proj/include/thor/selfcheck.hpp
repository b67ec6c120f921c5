#pragma once

// Gradient and equivariance self-checks on small random models.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "thor/autodiff.hpp"
#include "thor/evaluator.hpp"
#include "thor/hkg.hpp"
#include "thor/model.hpp"
#include "thor/rng.hpp"
#include "thor/synthetic.hpp"

namespace thor::check {

struct TensorGradCheck {
  std::string name;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  double rel_error = 0.0;  // |a - n| / max(|a|, |n|); 0 when both vanish
};

// Central differences on every scalar of every parameter. `loss` evaluates the
// scalar objective; when `backward` is set it also back-propagates into the
// store's gradients.
inline std::vector<TensorGradCheck> finite_difference(ad::ParamStore<double>& store,
                                                      const std::function<double(ad::ParamStore<double>&, bool)>& loss,
                                                      double h = 1e-4) {
  store.zero_grad();
  loss(store, true);
  std::vector<TensorGradCheck> out;
  for (std::size_t p = 0; p < store.size(); ++p) {
    auto& param = store.at(p);
    double diff = 0.0, an = 0.0, nn = 0.0;
    for (std::size_t k = 0; k < param.value.size(); ++k) {
      const double v = param.value.data[k];
      param.value.data[k] = v + h;
      const double up = loss(store, false);
      param.value.data[k] = v - h;
      const double down = loss(store, false);
      param.value.data[k] = v;
      const double num = (up - down) / (2.0 * h);
      const double a = param.grad.data[k];
      diff += (a - num) * (a - num);
      an += a * a;
      nn += num * num;
    }
    TensorGradCheck r{param.name, std::sqrt(an), std::sqrt(nn), 0.0};
    const double scale = std::max(r.analytic_norm, r.numeric_norm);
    r.rel_error = scale < 1e-9 ? 0.0 : std::sqrt(diff) / scale;
    out.push_back(r);
  }
  return out;
}

// Small graph used by the gradient check: three facts with shared entities and
// qualifiers, so every interaction type of the default preset appears.
inline std::vector<RawFact> gradient_facts() {
  return {{"a", "r1", "b", {{"k1", "c"}}}, {"b", "r2", "c", {{"k1", "a"}, {"k2", "d"}}}, {"c", "r1", "a", {{"k2", "b"}}}};
}

// Checks every parameter of a double-precision model on the mean loss of all
// training queries of `kg` (leakage guard on).
inline std::vector<TensorGradCheck> gradient_check(const ModelConfig& cfg, const Hkg& kg, std::uint64_t seed,
                                                   double h = 1e-4) {
  Model model(cfg);
  Rng rng(seed);
  auto store = model.init<double>(rng);
  // Perturb the zero-initialised and unit-initialised tensors so every
  // parameter sits away from its symmetric starting point.
  for (std::size_t i = 0; i < store.size(); ++i)
    for (auto& v : store.at(i).value.data) v += rng.uniform(-0.2, 0.2);
  GraphContext ctx(kg, cfg.interactions);
  const auto queries = generate_queries(kg);
  Workspace ws;
  auto loss = [&](ad::ParamStore<double>& s, bool backward) {
    double total = 0.0;
    for (const auto& q : queries) {
      ad::Tape<double> tape;
      auto out = model.forward(tape, s, ctx, q, q.source_fact, ws);
      auto l = ad::scale(Model::loss(out), 1.0 / static_cast<double>(queries.size()));
      total += l.value().data[0];
      if (backward) tape.backward(l);
    }
    return total;
  };
  return finite_difference(store, loss, h);
}

// ---------------------------------------------------------------------------

struct Relabeling {
  Hkg kg;
  std::vector<std::uint32_t> entity_map;    // old id -> new id
  std::vector<std::uint32_t> relation_map;  // old id -> new id
  std::vector<std::uint32_t> fact_map;      // old fact index -> new index
};

inline HyperFact map_fact(const HyperFact& f, const Relabeling& r) {
  HyperFact g;
  g.head = EntityId(r.entity_map[f.head.value]);
  g.relation = RelationId(r.relation_map[f.relation.value]);
  g.tail = EntityId(r.entity_map[f.tail.value]);
  for (const auto& q : f.qualifiers) g.qualifiers.push_back({RelationId(r.relation_map[q.key.value]), EntityId(r.entity_map[q.value.value])});
  return g;
}

// Applies random entity and relation permutations and shuffles the fact order.
inline Relabeling relabel(const Hkg& kg, Rng& rng) {
  Relabeling r;
  const auto pe = rng.permutation(kg.entity_count());
  const auto pr = rng.permutation(kg.relation_count());
  const auto pf = rng.permutation(kg.fact_count());  // new index -> old index
  r.entity_map.assign(pe.begin(), pe.end());
  r.relation_map.assign(pr.begin(), pr.end());
  std::vector<std::string> ent_names(kg.entity_count()), rel_names(kg.relation_count());
  for (std::uint32_t i = 0; i < kg.entity_count(); ++i) ent_names[r.entity_map[i]] = kg.entities().name(i);
  for (std::uint32_t i = 0; i < kg.relation_count(); ++i) rel_names[r.relation_map[i]] = kg.relations().name(i);
  Vocabulary ents, rels;
  for (const auto& n : ent_names) ents.intern(n);
  for (const auto& n : rel_names) rels.intern(n);
  r.fact_map.resize(kg.fact_count());
  std::vector<HyperFact> facts;
  for (std::uint32_t j = 0; j < pf.size(); ++j) {
    r.fact_map[pf[j]] = j;
    facts.push_back(map_fact(kg.fact(pf[j]), r));
  }
  r.kg = Hkg(std::move(ents), std::move(rels), std::move(facts));
  return r;
}

struct EquivarianceCase {
  double max_abs_diff = 0.0;
  double rank_original = 0.0;
  double rank_relabeled = 0.0;
  bool ranking_identical = false;
};

// Scores one random query before and after relabeling with the same float
// parameters. The query's own fact is excluded from the graphs.
inline EquivarianceCase equivariance_case(const Model& model, ad::ParamStore<float>& params, Rng& rng) {
  Hkg kg;
  do {
    kg = synth::random_hkg(rng, 8, 3, 8, 5);
  } while (kg.entity_count() < 3);
  const auto queries = generate_queries(kg);
  const auto& q = queries[rng.index(queries.size())];
  Workspace ws;
  GraphContext ctx(kg, model.config().interactions);
  const auto s0 = model.score(params, ctx, q, ws, q.source_fact);

  const auto r = relabel(kg, rng);
  QueryFact q2 = make_query(map_fact(q.base, r), q.mask, r.fact_map[*q.source_fact]);
  GraphContext ctx2(r.kg, model.config().interactions);
  const auto s1 = model.score(params, ctx2, q2, ws, q2.source_fact);

  EquivarianceCase c;
  std::vector<double> back(s0.size());
  for (std::uint32_t e = 0; e < s0.size(); ++e) {
    back[e] = s1[r.entity_map[e]];
    c.max_abs_diff = std::max(c.max_abs_diff, std::abs(back[e] - s0[e]));
  }
  c.rank_original = eval::rank_of(s0, q.answer->value);
  c.rank_relabeled = eval::rank_of(s1, q2.answer->value);
  // Same ordering of every entity pair, with float ties compared at the
  // tolerance of the elementwise check.
  c.ranking_identical = c.rank_original == c.rank_relabeled;
  for (std::uint32_t a = 0; a < s0.size() && c.ranking_identical; ++a)
    for (std::uint32_t b = 0; b < s0.size(); ++b) {
      const bool tie0 = std::abs(s0[a] - s0[b]) <= 1e-4, tie1 = std::abs(back[a] - back[b]) <= 1e-4;
      if (!tie0 && !tie1 && ((s0[a] < s0[b]) != (back[a] < back[b]))) c.ranking_identical = false;
    }
  return c;
}

}  // namespace thor::check
