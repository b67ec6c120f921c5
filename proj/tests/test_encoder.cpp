#include <gtest/gtest.h>

#include "oracles.hpp"
#include "thor/encoder.hpp"
#include "thor/model.hpp"
#include "thor/selfcheck.hpp"
#include "thor/synthetic.hpp"

using namespace thor;
using ad::Matrix;
using ad::ParamStore;
using ad::Tape;

namespace {

enc::EncoderLayout layout_for(const fg::FoundationGraph& g, std::size_t layers, std::size_t dim, bool residual = false) {
  std::vector<bool> active = g.active;
  if (g.kind == fg::GraphKind::RelationalEntity) active.clear();
  return enc::EncoderLayout::make("enc", g.kind, active, {layers, dim, residual, false});
}

// Literal per-node encoding of a whole typed graph.
oracle::Rows oracle_encode(const ParamStore<double>& s, const enc::EncoderLayout& l, const fg::FoundationGraph& g,
                           const std::vector<std::uint32_t>& query) {
  const auto d = l.cfg.dim;
  oracle::Rows h(g.node_count, std::vector<double>(d, 0.0));
  for (auto q : query) h[q].assign(d, 1.0);
  std::vector<oracle::Edge> edges;
  for (const auto& e : g.edges) edges.emplace_back(e.src, static_cast<std::uint32_t>(l.type_row[e.type]), e.dst);
  for (std::size_t i = 0; i < l.cfg.layers; ++i) {
    const auto emb = l.active_count ? oracle::to_rows(s.get(l.name(i, "type_emb")).value) : oracle::Rows{};
    h = oracle::mp_layer(h, edges, emb, oracle::to_rows(s.get(l.name(i, "w_self")).value),
                         oracle::to_rows(s.get(l.name(i, "w_agg")).value), l.cfg.residual);
  }
  return h;
}

double max_diff(const oracle::Rows& a, const Matrix<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) m = std::max(m, std::abs(a[i][j] - b(i, j)));
  return m;
}

std::vector<std::uint32_t> pick_queries(Rng& rng, std::size_t n) {
  std::vector<std::uint32_t> q;
  const std::size_t k = 1 + rng.index(std::min<std::size_t>(n, 3));
  for (std::size_t i = 0; i < k; ++i) q.push_back(static_cast<std::uint32_t>(rng.index(n)));
  return q;
}

}  // namespace

TEST(Indicator, Examples) {
  const std::vector<std::uint32_t> q = {0, 2};
  EXPECT_EQ(enc::indicator_init(3, q, 2), Matrix<float>::from_rows({{1, 1}, {0, 0}, {1, 1}}));
  EXPECT_EQ(enc::indicator_init(3, {}, 2), Matrix<float>(3, 2));
  const std::vector<std::uint32_t> bad = {3};
  EXPECT_THROW(enc::indicator_init(3, bad, 2), IndexError);
}

TEST(MpLayer, NoEdgesIsSelfUpdateOnly) {
  Rng rng(1);
  ParamStore<double> s;
  const auto l = enc::EncoderLayout::make("e", fg::GraphKind::Entity, {true}, {1, 3, false, false});
  enc::init_encoder(s, l, rng);
  Tape<double> t;
  const auto x = ad::uniform<double>(2, 3, -1, 1, rng);
  auto h = enc::mp_layer(t, s, l, 0, t.constant(x), {}, {}, {});
  const auto expect = oracle::matmul(oracle::to_rows(x), oracle::to_rows(s.get(l.name(0, "w_self")).value));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(h.value()(i, j), std::max(0.0, expect[i][j]), 1e-14);
}

TEST(MpLayer, IdentityEdgeExample) {
  ParamStore<double> s;
  const auto l = enc::EncoderLayout::make("e", fg::GraphKind::Entity, {true}, {1, 2, false, false});
  s.add(l.name(0, "type_emb"), Matrix<double>::from_rows({{1, 1}}));
  s.add(l.name(0, "w_self"), Matrix<double>(2, 2));
  s.add(l.name(0, "w_agg"), Matrix<double>::from_rows({{1, 0}, {0, 1}}));
  Tape<double> t;
  auto h = enc::mp_layer(t, s, l, 0, t.constant(Matrix<double>::from_rows({{2, -3}, {0, 0}})), {0}, {1}, {0});
  EXPECT_EQ(h.value(), Matrix<double>::from_rows({{0, 0}, {2, 0}}));
}

TEST(Encode, LineGraphMatchesOracle) {
  // Three relations in a path a -> b -> c of H2T/T2H interactions.
  const auto kg = Hkg::from_raw(std::vector<RawFact>{{"x", "a", "y", {}}, {"y", "b", "z", {}}, {"z", "c", "w", {}}});
  const auto g = fg::build_relation_graph(kg, fg::preset("default"));
  Rng rng(2);
  const auto l = layout_for(g, 3, 4);
  ParamStore<double> s;
  enc::init_encoder(s, l, rng);
  Tape<double> t;
  const std::vector<std::uint32_t> q = {0};
  auto h = enc::encode(t, s, l, g, q);
  EXPECT_LE(max_diff(oracle_encode(s, l, g, q), h.value()), 1e-6);
}

TEST(Encode, ZeroLayersReturnsIndicator) {
  Rng rng(3);
  const auto kg = synth::random_hkg(rng);
  const auto g = fg::build_entity_graph(kg, fg::preset("default"));
  const auto l = layout_for(g, 0, 3);
  ParamStore<double> s;
  Tape<double> t;
  const std::vector<std::uint32_t> q = {1};
  EXPECT_EQ(enc::encode(t, s, l, g, q).value(), enc::indicator_init(g.node_count, q, 3).cast<double>());
}

TEST(Encode, MatchesOracleOnRandomGraphs) {
  Rng rng(4);
  for (int trial = 0; trial < 40; ++trial) {
    const auto kg = synth::random_hkg(rng);
    const auto& name = fg::preset_names()[rng.index(fg::preset_names().size())];
    auto cfg = fg::preset(name);
    cfg.ultra_alike = false;
    const bool use_rel = rng.index(2);
    const auto g = use_rel ? fg::build_relation_graph(kg, cfg) : fg::build_entity_graph(kg, cfg);
    const auto l = layout_for(g, 1 + rng.index(3), 4, rng.index(2));
    ParamStore<double> s;
    enc::init_encoder(s, l, rng);
    const auto q = pick_queries(rng, g.node_count);
    Tape<double> t;
    ASSERT_LE(max_diff(oracle_encode(s, l, g, q), enc::encode(t, s, l, g, q).value()), 1e-9) << name;
  }
}

TEST(Ball, RestrictionMatchesFullGraph) {
  Rng rng(5);
  enc::BallBuilder bb;
  for (int trial = 0; trial < 60; ++trial) {
    const auto kg = synth::random_hkg(rng, 10, 3, 10, 5);
    const auto g = fg::build_entity_graph(kg, fg::preset("addAllFI"));
    const std::size_t L = 1 + rng.index(3);
    const auto l = layout_for(g, L, 3);
    ParamStore<double> s;
    enc::init_encoder(s, l, rng);
    const auto q = pick_queries(rng, g.node_count);
    Tape<double> t;
    const auto full = enc::encode(t, s, l, g, q).value();
    const auto off = fg::out_offsets(g);
    const auto ball = bb.build(g, off, q, {}, L);
    const auto part = enc::encode_ball(t, s, l, ball).value();
    for (std::uint32_t v = 0; v < g.node_count; ++v) {
      const auto r = ball.local(v);
      for (std::size_t c = 0; c < 3; ++c) {
        const double expect = r ? part(*r, c) : 0.0;
        ASSERT_NEAR(full(v, c), expect, 1e-12) << "node " << v;
      }
    }
  }
}

TEST(Ball, RemovedEdgesMatchExcludedRebuild) {
  Rng rng(6);
  enc::BallBuilder bb;
  for (int trial = 0; trial < 60; ++trial) {
    const auto kg = synth::random_hkg(rng);
    const auto cfg = fg::preset(trial % 2 ? "addAllFI" : "default");
    const auto guarded = trial % 3 ? fg::GuardedGraph::relation(kg, cfg) : fg::GuardedGraph::entity(kg, cfg);
    const auto& g = guarded.graph();
    const std::uint32_t f = static_cast<std::uint32_t>(rng.index(kg.fact_count()));
    const std::vector<std::uint32_t> ex = {f};
    const auto rebuilt = trial % 3 ? fg::build_relation_graph(kg, cfg, ex) : fg::build_entity_graph(kg, cfg, ex);
    const auto l = layout_for(g, 2, 3);
    ParamStore<double> s;
    enc::init_encoder(s, l, rng);
    const auto q = pick_queries(rng, g.node_count);
    Tape<double> t;
    const auto ball = bb.build(g, guarded.offsets(), q, guarded.edges_removed_by(f), std::nullopt);
    const auto a = enc::encode_ball(t, s, l, ball).value();
    const auto b = enc::encode(t, s, l, rebuilt, q).value();
    for (std::size_t k = 0; k < a.size(); ++k) ASSERT_NEAR(a.data[k], b.data[k], 1e-12);
  }
}

TEST(Encode, EquivariantUnderNodeRelabeling) {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const auto kg = synth::random_hkg(rng);
    const auto g = fg::build_entity_graph(kg, fg::preset("default"));
    const auto perm = rng.permutation(g.node_count);
    fg::FoundationGraph p = g;
    for (auto& e : p.edges) e = {static_cast<std::uint32_t>(perm[e.src]), e.type, static_cast<std::uint32_t>(perm[e.dst])};
    std::sort(p.edges.begin(), p.edges.end());
    const auto l = layout_for(g, 2, 4);
    ParamStore<double> s;
    enc::init_encoder(s, l, rng);
    const auto q = pick_queries(rng, g.node_count);
    std::vector<std::uint32_t> pq;
    for (auto v : q) pq.push_back(static_cast<std::uint32_t>(perm[v]));
    Tape<double> t;
    const auto a = enc::encode(t, s, l, g, q).value();
    const auto b = enc::encode(t, s, l, p, pq).value();
    for (std::uint32_t v = 0; v < g.node_count; ++v)
      for (std::size_t c = 0; c < 4; ++c) ASSERT_NEAR(a(v, c), b(perm[v], c), 1e-12);
  }
}

TEST(Encode, MissingEmbeddingIsConfigError) {
  const auto kg = Hkg::from_raw(std::vector<RawFact>{{"x", "a", "y", {}}, {"y", "b", "z", {}}});
  const auto g = fg::build_relation_graph(kg, fg::preset("default"));
  std::vector<bool> active(fg::kRelInteractionCount, false);
  active[fg::idx(fg::RelInteraction::H2H)] = true;
  const auto l = enc::EncoderLayout::make("enc", fg::GraphKind::Relation, active, {1, 2, false, false});
  Rng rng(8);
  ParamStore<double> s;
  enc::init_encoder(s, l, rng);
  Tape<double> t;
  const std::vector<std::uint32_t> q = {0};
  EXPECT_THROW(enc::encode(t, s, l, g, q), ConfigError);
}

TEST(Encode, RelationTypedGraphMatchesOracle) {
  Rng rng(9);
  enc::BallBuilder bb;
  for (int trial = 0; trial < 30; ++trial) {
    const auto kg = synth::random_hkg(rng);
    auto cfg = fg::preset("default");
    cfg.ultra_alike = true;
    const auto g = fg::build_entity_graph(kg, cfg);
    ASSERT_EQ(g.kind, fg::GraphKind::RelationalEntity);
    const std::size_t d = 3, L = 2;
    const auto l = enc::EncoderLayout::make("ent", g.kind, {}, {L, d, false, false});
    ParamStore<double> s;
    enc::init_encoder(s, l, rng);
    const auto rel_states = ad::uniform<double>(kg.relation_count(), d, -1, 1, rng);

    fg::FoundationGraph rg;
    rg.node_count = static_cast<std::uint32_t>(kg.relation_count());
    const auto roff = fg::out_offsets(rg);
    const auto rball = bb.build(rg, roff, {}, {}, std::nullopt);
    Tape<double> t;
    enc::RelationContext<double> rc{t.constant(rel_states), &rball};
    const auto q = pick_queries(rng, g.node_count);
    const auto off = fg::out_offsets(g);
    const auto ball = bb.build(g, off, q, {}, std::nullopt);
    const auto got = enc::encode_ball(t, s, l, ball, &rc).value();

    oracle::Rows h(g.node_count, std::vector<double>(d, 0.0));
    for (auto v : q) h[v].assign(d, 1.0);
    std::vector<oracle::Edge> edges;
    std::vector<std::vector<double>> scale;
    for (const auto& e : g.edges) {
      edges.emplace_back(e.src, e.type % 2, e.dst);
      const auto r = rel_states.row(e.type / 2);
      scale.emplace_back(r.begin(), r.end());
    }
    for (std::size_t i = 0; i < L; ++i)
      h = oracle::mp_layer(h, edges, oracle::to_rows(s.get(l.name(i, "dir_emb")).value),
                           oracle::to_rows(s.get(l.name(i, "w_self")).value),
                           oracle::to_rows(s.get(l.name(i, "w_agg")).value), false, &scale);
    ASSERT_LE(max_diff(h, got), 1e-9);
  }
}

TEST(Model, MaskedEntityIsNeverLabeled) {
  // The masked tail's identity must not influence any score.
  const auto kg = Hkg::from_raw(std::vector<RawFact>{
      {"a", "r", "b", {{"k", "c"}}}, {"b", "s", "c", {}}, {"c", "r", "d", {{"k", "a"}}}, {"d", "s", "e", {}}});
  ModelConfig mc;
  mc.dim = 8;
  mc.layers = 2;
  mc.heads = 2;
  Model model(mc);
  Rng rng(10);
  auto params = model.init<double>(rng);
  GraphContext ctx(kg, mc.interactions);
  Workspace ws;
  std::vector<double> first;
  for (std::uint32_t e = 0; e < kg.entity_count(); ++e) {
    auto f = kg.fact(0);
    f.tail = EntityId(e);
    const auto s = model.score(params, ctx, make_query(f, MaskedPosition::tail()), ws);
    if (first.empty()) {
      first = s;
      continue;
    }
    ASSERT_EQ(s.size(), first.size());
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], first[i], 1e-12) << "tail " << e;
  }
}
