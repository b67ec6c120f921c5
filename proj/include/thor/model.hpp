#pragma once

// Full query model: relation encoder + entity encoder + decoder.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "thor/autodiff.hpp"
#include "thor/decoder.hpp"
#include "thor/encoder.hpp"
#include "thor/errors.hpp"
#include "thor/foundation.hpp"
#include "thor/hkg.hpp"
#include "thor/rng.hpp"

namespace thor {

struct ModelConfig {
  std::size_t dim = 32;
  std::size_t layers = 4;  // per encoder
  std::size_t heads = 4;
  std::size_t decoder_layers = 2;
  bool residual = false;
  bool layer_norm = false;
  bool zero_other = false;
  fg::InteractionConfig interactions = fg::preset("default");

  enc::EncoderConfig encoder() const { return {layers, dim, residual, layer_norm}; }
  dec::DecoderConfig decoder() const { return {dim, heads, decoder_layers, zero_other}; }
};

// Both foundation graphs of one Hkg, built once and shared by every query.
class GraphContext {
 public:
  GraphContext(const Hkg& kg, const fg::InteractionConfig& cfg)
      : kg_(&kg), rel_(fg::GuardedGraph::relation(kg, cfg)), ent_(fg::GuardedGraph::entity(kg, cfg)) {}

  const Hkg& kg() const { return *kg_; }
  const fg::GuardedGraph& relation() const { return rel_; }
  const fg::GuardedGraph& entity() const { return ent_; }

 private:
  const Hkg* kg_;
  fg::GuardedGraph rel_;
  fg::GuardedGraph ent_;
};

// Per-worker scratch.
struct Workspace {
  enc::BallBuilder rel_balls;
  enc::BallBuilder ent_balls;
};

template <typename T>
struct QueryOutput {
  ad::Var<T> logits;                     // 1 x candidates.size()
  ad::Var<T> b_m;                        // 1x1, the logit of every entity outside `candidates`
  std::vector<std::uint32_t> candidates;  // entity ids with an explicit logit
  std::size_t entity_count = 0;          // size of the whole candidate set
  std::optional<std::size_t> target;     // position of the answer in `candidates`
};

class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    const auto& ic = cfg_.interactions;
    std::vector<bool> rel_active(fg::kRelInteractionCount), ent_active(fg::kEntInteractionCount);
    for (std::size_t i = 0; i < rel_active.size(); ++i) rel_active[i] = ic.relation.test(i);
    for (std::size_t i = 0; i < ent_active.size(); ++i) ent_active[i] = ic.entity.test(i);
    rel_ = enc::EncoderLayout::make("rel_enc", fg::GraphKind::Relation, rel_active, cfg_.encoder());
    ent_ = enc::EncoderLayout::make("ent_enc", ic.ultra_alike ? fg::GraphKind::RelationalEntity : fg::GraphKind::Entity,
                                    ent_active, cfg_.encoder());
    cfg_.decoder().head_dim();  // validates the head split
  }

  const ModelConfig& config() const { return cfg_; }
  const enc::EncoderLayout& relation_layout() const { return rel_; }
  const enc::EncoderLayout& entity_layout() const { return ent_; }

  template <typename T>
  ad::ParamStore<T> init(Rng& rng) const {
    ad::ParamStore<T> store;
    enc::init_encoder(store, rel_, rng);
    enc::init_encoder(store, ent_, rng);
    dec::init_decoder(store, cfg_.decoder(), rng);
    return store;
  }

  // Encodes and decodes one query. With `exclude_fact`, every edge supported
  // only by that fact is dropped from both graphs (leakage guard).
  template <typename T>
  QueryOutput<T> forward(ad::Tape<T>& tape, ad::ParamStore<T>& store, const GraphContext& ctx, const QueryFact& q,
                         std::optional<std::uint32_t> exclude_fact, Workspace& ws) const {
    const Hkg& kg = ctx.kg();
    check_query(q);
    const auto& f = q.base;
    auto check_rel = [&](RelationId r) {
      if (r.value >= kg.relation_count()) throw VocabularyError("query relation id " + std::to_string(r.value) + " unknown");
    };
    auto check_ent = [&](EntityId e) {
      if (e.value >= kg.entity_count()) throw VocabularyError("query entity id " + std::to_string(e.value) + " unknown");
    };
    check_rel(f.relation);
    std::vector<std::uint32_t> rel_query = {f.relation.value};
    std::vector<std::uint32_t> ent_query;
    auto masked = [&](MaskedPosition m) { return q.mask == m; };
    if (!masked(MaskedPosition::head())) check_ent(f.head), ent_query.push_back(f.head.value);
    if (!masked(MaskedPosition::tail())) check_ent(f.tail), ent_query.push_back(f.tail.value);
    for (std::uint32_t i = 0; i < f.arity(); ++i) {
      check_rel(f.qualifiers[i].key);
      rel_query.push_back(f.qualifiers[i].key.value);
      if (!masked(MaskedPosition::value(i))) check_ent(f.qualifiers[i].value), ent_query.push_back(f.qualifiers[i].value.value);
    }
    std::vector<std::uint32_t> extra;
    if (q.answer) {
      if (q.answer->value >= kg.entity_count()) throw DataError("answer entity not in the graph vocabulary");
      extra.push_back(q.answer->value);
    }

    std::vector<std::uint32_t> rel_removed, ent_removed;
    if (exclude_fact) {
      rel_removed = ctx.relation().edges_removed_by(*exclude_fact);
      ent_removed = ctx.entity().edges_removed_by(*exclude_fact);
    }
    const std::optional<std::size_t> radius =
        cfg_.layer_norm ? std::nullopt : std::optional<std::size_t>(cfg_.layers);
    const auto rel_ball = ws.rel_balls.build(ctx.relation().graph(), ctx.relation().offsets(), rel_query, rel_removed, radius);
    const auto ent_ball =
        ws.ent_balls.build(ctx.entity().graph(), ctx.entity().offsets(), ent_query, ent_removed, radius, extra);

    ad::Var<T> rel_states = enc::encode_ball(tape, store, rel_, rel_ball);
    enc::RelationContext<T> rc{rel_states, &rel_ball};
    ad::Var<T> ent_states = enc::encode_ball(tape, store, ent_, ent_ball, ent_.relational() ? &rc : nullptr);

    // Element sequence in layout order; the masked slot takes the mask token.
    const auto roles = dec::sequence_layout(f.arity());
    const auto slot = dec::mask_slot(q.mask);
    ad::Var<T> mask_token = tape.param(store.get("dec.mask_token"));
    std::vector<ad::Var<T>> rows;
    rows.reserve(roles.size());
    for (std::size_t s = 0; s < roles.size(); ++s) {
      const auto role = roles[s];
      if (s == slot) {
        rows.push_back(mask_token);
        continue;
      }
      using K = PositionRole::Kind;
      if (role.kind == K::PrimaryRelation || role.kind == K::Key) {
        const auto r = role.kind == K::Key ? f.qualifiers[role.index].key : f.relation;
        rows.push_back(ad::gather(rel_states, {*rel_ball.local(r.value)}));
      } else {
        const auto e = role.kind == K::Head ? f.head : role.kind == K::Tail ? f.tail : f.qualifiers[role.index].value;
        rows.push_back(ad::gather(ent_states, {*ent_ball.local(e.value)}));
      }
    }
    ad::Var<T> seq = ad::concat_rows<T>(std::span<const ad::Var<T>>(rows));
    ad::Var<T> x_m = dec::decode(tape, store, cfg_.decoder(), seq, roles, slot);

    QueryOutput<T> out;
    out.b_m = tape.param(store.get("dec.b_m"));
    out.logits = dec::score_logits(x_m, ent_states, out.b_m);
    out.candidates = ent_ball.nodes;
    out.entity_count = kg.entity_count();
    if (q.answer) out.target = *ent_ball.local(q.answer->value);
    return out;
  }

  // Cross entropy of the answer against every entity of the graph.
  template <typename T>
  static ad::Var<T> loss(const QueryOutput<T>& o) {
    if (!o.target) throw ContractError("loss needs a query with an answer");
    return ad::cross_entropy<T>(o.logits, *o.target, o.entity_count - o.candidates.size(), std::optional<ad::Var<T>>(o.b_m));
  }

  // Logits over every entity of the graph, in entity-id order.
  template <typename T>
  static std::vector<double> full_logits(const QueryOutput<T>& o) {
    std::vector<double> s(o.entity_count, static_cast<double>(o.b_m.value().data[0]));
    const auto& L = o.logits.value();
    for (std::size_t i = 0; i < o.candidates.size(); ++i) s[o.candidates[i]] = static_cast<double>(L.data[i]);
    return s;
  }

  template <typename T>
  std::vector<double> score(ad::ParamStore<T>& store, const GraphContext& ctx, const QueryFact& q, Workspace& ws,
                            std::optional<std::uint32_t> exclude_fact = std::nullopt) const {
    ad::Tape<T> tape;
    return full_logits(forward(tape, store, ctx, q, exclude_fact, ws));
  }

 private:
  ModelConfig cfg_;
  enc::EncoderLayout rel_;
  enc::EncoderLayout ent_;
};

}  // namespace thor
