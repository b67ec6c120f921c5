#pragma once

// Query-conditioned message passing over a foundation graph.
//
// States start as an indicator matrix (all-ones rows for query nodes, zeros
// elsewhere). Each layer computes
//   msg(w -> u, type)  = h[w] * emb[type]          (elementwise)
//   agg[u]             = sum of incoming messages
//   h'[u]              = relu(h[u] W_self + agg[u] W_agg)
// The update has no bias term, so a node whose state and incoming messages are
// all zero stays exactly zero. A node more than l hops downstream of every query
// node is therefore zero after l layers, and encoding only the L-hop ball around
// the query gives the same states as encoding the whole graph. Layer
// normalization breaks that property; with it enabled the full graph is used.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "thor/autodiff.hpp"
#include "thor/errors.hpp"
#include "thor/foundation.hpp"
#include "thor/rng.hpp"

namespace thor::enc {

using ad::Matrix;
using ad::ParamStore;
using ad::Tape;
using ad::Var;

struct EncoderConfig {
  std::size_t layers = 4;
  std::size_t dim = 32;
  bool residual = false;
  bool layer_norm = false;
};

// Parameter names and the mapping from the graph's type alphabet to embedding
// rows. Only active types own an embedding.
struct EncoderLayout {
  std::string prefix;
  fg::GraphKind kind = fg::GraphKind::Relation;
  EncoderConfig cfg;
  std::vector<std::int32_t> type_row;  // alphabet type -> row, -1 when inactive
  std::size_t active_count = 0;

  static EncoderLayout make(std::string prefix, fg::GraphKind kind, const std::vector<bool>& active, EncoderConfig cfg) {
    EncoderLayout l;
    l.prefix = std::move(prefix);
    l.kind = kind;
    l.cfg = cfg;
    for (bool a : active) l.type_row.push_back(a ? static_cast<std::int32_t>(l.active_count++) : -1);
    return l;
  }

  std::string name(std::size_t layer, const char* what) const {
    return prefix + ".layer" + std::to_string(layer) + "." + what;
  }

  bool relational() const { return kind == fg::GraphKind::RelationalEntity; }
};

template <typename T>
void init_encoder(ParamStore<T>& store, const EncoderLayout& l, Rng& rng) {
  const auto d = l.cfg.dim;
  for (std::size_t i = 0; i < l.cfg.layers; ++i) {
    if (l.relational()) {
      store.add(l.name(i, "dir_emb"), ad::glorot<T>(2, d, rng));
    } else if (l.active_count > 0) {
      store.add(l.name(i, "type_emb"), ad::glorot<T>(l.active_count, d, rng));
    }
    store.add(l.name(i, "w_self"), ad::glorot<T>(d, d, rng));
    store.add(l.name(i, "w_agg"), ad::glorot<T>(d, d, rng));
    if (l.cfg.layer_norm) {
      store.add(l.name(i, "ln_gamma"), Matrix<T>(1, d, T{1}));
      store.add(l.name(i, "ln_beta"), Matrix<T>(1, d, T{0}));
    }
  }
}

inline Matrix<float> indicator_init(std::size_t node_count, std::span<const std::uint32_t> query_nodes, std::size_t d) {
  Matrix<float> m(node_count, d);
  for (auto q : query_nodes) {
    if (q >= node_count) throw IndexError("query node " + std::to_string(q) + " out of range");
    std::fill_n(m.data.begin() + static_cast<std::ptrdiff_t>(q * d), d, 1.0f);
  }
  return m;
}

// The part of a graph that can influence a query's states: nodes within
// `radius` hops downstream of a query node, and the edges leaving nodes within
// radius - 1 hops. Local ids index the rows of the encoder output.
struct Ball {
  std::vector<std::uint32_t> nodes;  // local -> global
  std::vector<std::uint32_t> src;    // local ids
  std::vector<std::uint32_t> dst;
  std::vector<std::uint32_t> type;
  std::vector<std::uint32_t> query_rows;

  std::optional<std::uint32_t> local(std::uint32_t global) const {
    auto it = std::lower_bound(index_.begin(), index_.end(), std::pair{global, 0u});
    if (it == index_.end() || it->first != global) return std::nullopt;
    return it->second;
  }

  void finalize() {
    index_.clear();
    index_.reserve(nodes.size());
    for (std::uint32_t i = 0; i < nodes.size(); ++i) index_.emplace_back(nodes[i], i);
    std::sort(index_.begin(), index_.end());
  }

 private:
  std::vector<std::pair<std::uint32_t, std::uint32_t>> index_;
};

// Reusable scratch for ball extraction; cost is proportional to the ball, not
// the graph. Not thread-safe; use one per worker.
class BallBuilder {
 public:
  // radius = nullopt keeps the whole graph. Removed edge indices must be
  // sorted. Extra nodes are added as local rows even when outside the ball.
  Ball build(const fg::FoundationGraph& g, std::span<const std::uint32_t> offsets,
             std::span<const std::uint32_t> query_nodes, std::span<const std::uint32_t> removed,
             std::optional<std::size_t> radius, std::span<const std::uint32_t> extra = {}) {
    if (offsets.size() != g.node_count + 1) throw ContractError("ball: offsets do not match graph");
    if (depth_.size() < g.node_count) depth_.resize(g.node_count, -1);
    if (local_.size() < g.node_count) local_.resize(g.node_count, 0);
    if (removed_mark_.size() < g.edges.size()) removed_mark_.resize(g.edges.size(), 0);
    for (auto e : removed) removed_mark_.at(e) = 1;

    Ball b;
    auto visit = [&](std::uint32_t n, int d) {
      depth_[n] = d;
      local_[n] = static_cast<std::uint32_t>(b.nodes.size());
      b.nodes.push_back(n);
    };
    if (!radius) {
      for (std::uint32_t n = 0; n < g.node_count; ++n) visit(n, 0);
    }
    for (auto q : query_nodes) {
      if (q >= g.node_count) throw IndexError("query node " + std::to_string(q) + " out of range");
      if (depth_[q] < 0) visit(q, 0);
      b.query_rows.push_back(local_[q]);
    }
    std::sort(b.query_rows.begin(), b.query_rows.end());
    b.query_rows.erase(std::unique(b.query_rows.begin(), b.query_rows.end()), b.query_rows.end());

    if (radius) {
      // Breadth-first over out-edges; nodes are appended in discovery order.
      const int r = static_cast<int>(*radius);
      for (std::size_t head = 0; head < b.nodes.size(); ++head) {
        const auto u = b.nodes[head];
        if (depth_[u] >= r) continue;
        for (auto e = offsets[u]; e < offsets[u + 1]; ++e) {
          if (removed_mark_[e]) continue;
          const auto v = g.edges[e].dst;
          if (depth_[v] < 0) visit(v, depth_[u] + 1);
        }
      }
    }
    const int edge_depth = radius ? static_cast<int>(*radius) - 1 : 0;
    for (std::uint32_t i = 0; i < b.nodes.size(); ++i) {
      const auto u = b.nodes[i];
      if (radius && depth_[u] > edge_depth) continue;
      for (auto e = offsets[u]; e < offsets[u + 1]; ++e) {
        if (removed_mark_[e]) continue;
        const auto& ed = g.edges[e];
        b.src.push_back(i);
        b.dst.push_back(local_[ed.dst]);
        b.type.push_back(ed.type);
      }
    }
    for (auto x : extra) {
      if (x >= g.node_count) throw IndexError("node " + std::to_string(x) + " out of range");
      if (depth_[x] < 0) visit(x, static_cast<int>(radius.value_or(0)) + 1);
    }

    for (auto n : b.nodes) depth_[n] = -1;
    for (auto e : removed) removed_mark_[e] = 0;
    b.finalize();
    return b;
  }

 private:
  std::vector<int> depth_;
  std::vector<std::uint32_t> local_;
  std::vector<char> removed_mark_;
};

// Relation states feeding a relation-typed entity graph (ULTRA-alike wiring).
template <typename T>
struct RelationContext {
  Var<T> states;                       // local relation rows
  const Ball* ball = nullptr;          // maps relation ids to rows of `states`
};

// One message-passing layer over explicit local edge arrays.
template <typename T>
Var<T> mp_layer(Tape<T>& tape, ParamStore<T>& store, const EncoderLayout& l, std::size_t layer, Var<T> h,
                const std::vector<std::uint32_t>& src, const std::vector<std::uint32_t>& dst,
                const std::vector<std::uint32_t>& emb_rows, std::optional<Var<T>> edge_scale = std::nullopt) {
  const std::size_t n = h.rows();
  Var<T> upd = ad::matmul(h, tape.param(store.get(l.name(layer, "w_self"))));
  if (!src.empty()) {
    Var<T> msg = ad::gather(h, src);
    if (l.relational()) {
      msg = ad::mul(msg, ad::gather(tape.param(store.get(l.name(layer, "dir_emb"))), emb_rows));
      if (edge_scale) msg = ad::mul(msg, *edge_scale);
    } else {
      msg = ad::mul(msg, ad::gather(tape.param(store.get(l.name(layer, "type_emb"))), emb_rows));
    }
    Var<T> agg = ad::scatter_add(msg, dst, n);
    upd = ad::add(upd, ad::matmul(agg, tape.param(store.get(l.name(layer, "w_agg")))));
  }
  if (l.cfg.layer_norm) {
    upd = ad::layer_norm(upd, tape.param(store.get(l.name(layer, "ln_gamma"))),
                         tape.param(store.get(l.name(layer, "ln_beta"))));
  }
  Var<T> out = ad::relu(upd);
  if (l.cfg.residual) out = ad::add(out, h);
  return out;
}

// Encodes a ball; returns one state row per local node.
template <typename T>
Var<T> encode_ball(Tape<T>& tape, ParamStore<T>& store, const EncoderLayout& l, const Ball& ball,
                   const RelationContext<T>* rel = nullptr) {
  const std::size_t d = l.cfg.dim;
  Matrix<T> init(ball.nodes.size(), d);
  for (auto q : ball.query_rows) std::fill_n(init.data.begin() + static_cast<std::ptrdiff_t>(q * d), d, T{1});
  Var<T> h = tape.constant(std::move(init));
  if (l.cfg.layers == 0) return h;

  std::vector<std::uint32_t> src, dst, rows;
  std::optional<Var<T>> edge_scale;
  if (l.relational()) {
    if (!rel || !rel->ball) throw ContractError("relational encoder needs relation states");
    std::vector<std::uint32_t> rel_rows;
    for (std::size_t e = 0; e < ball.src.size(); ++e) {
      // Relations outside the relation ball have zero state: their messages vanish.
      const auto r = rel->ball->local(ball.type[e] / 2);
      if (!r) continue;
      src.push_back(ball.src[e]);
      dst.push_back(ball.dst[e]);
      rows.push_back(ball.type[e] % 2);
      rel_rows.push_back(*r);
    }
    if (!src.empty()) edge_scale = ad::gather(rel->states, std::move(rel_rows));
  } else {
    src = ball.src;
    dst = ball.dst;
    rows.reserve(ball.type.size());
    for (auto t : ball.type) {
      if (t >= l.type_row.size() || l.type_row[t] < 0) {
        throw ConfigError(l.prefix + ": edge type " + std::to_string(t) + " has no embedding");
      }
      rows.push_back(static_cast<std::uint32_t>(l.type_row[t]));
    }
  }
  for (std::size_t i = 0; i < l.cfg.layers; ++i) h = mp_layer(tape, store, l, i, h, src, dst, rows, edge_scale);
  return h;
}

// Encodes a whole graph: one row per graph node, in node order.
template <typename T>
Var<T> encode(Tape<T>& tape, ParamStore<T>& store, const EncoderLayout& l, const fg::FoundationGraph& g,
              std::span<const std::uint32_t> query_nodes) {
  BallBuilder bb;
  const auto off = fg::out_offsets(g);
  const auto ball = bb.build(g, off, query_nodes, {}, std::nullopt);
  return encode_ball(tape, store, l, ball);
}

}  // namespace thor::enc
