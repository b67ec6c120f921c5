#pragma once

// Slow, literal reference implementations used only by tests. Nothing here
// shares code with the library beyond the data types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "thor/autodiff.hpp"
#include "thor/decoder.hpp"
#include "thor/foundation.hpp"
#include "thor/hkg.hpp"

namespace oracle {

using thor::HyperFact;
using thor::Hkg;
using Edge = std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>;
using EdgeSet = std::set<Edge>;

// Alphabet positions, spelled out independently of the library's enums.
namespace rel {
enum : std::uint32_t { H2H, H2T, T2H, T2T, R2K, K2R, K2K, H2V, V2H, T2V, V2T, V2V };
}
namespace ent {
enum : std::uint32_t { H2T, T2H, H2V, V2H, T2V, V2T, V2V };
}

inline std::uint32_t rel_reciprocal(std::uint32_t t) {
  static const std::uint32_t table[12] = {rel::H2H, rel::T2H, rel::H2T, rel::T2T, rel::K2R, rel::R2K,
                                          rel::K2K, rel::V2H, rel::H2V, rel::V2T, rel::T2V, rel::V2V};
  return table[t];
}

inline std::uint32_t ent_reciprocal(std::uint32_t t) {
  static const std::uint32_t table[7] = {ent::T2H, ent::H2T, ent::V2H, ent::H2V, ent::V2T, ent::T2V, ent::V2V};
  return table[t];
}

inline EdgeSet edge_set(const thor::fg::FoundationGraph& g) {
  EdgeSet s;
  for (const auto& e : g.edges) s.insert({e.src, e.type, e.dst});
  return s;
}

inline bool excluded(std::span<const std::uint32_t> ex, std::uint32_t f) {
  return std::find(ex.begin(), ex.end(), f) != ex.end();
}

// Every rule applied literally to every ordered pair of distinct facts and to
// every single fact, then closed under reciprocity.
inline EdgeSet relation_edges(const Hkg& kg, const thor::fg::InteractionConfig& cfg,
                              std::span<const std::uint32_t> ex = {}) {
  EdgeSet out;
  auto add = [&](std::uint32_t a, std::uint32_t t, std::uint32_t b) {
    if (!cfg.relation.test(t)) return;
    out.insert({a, t, b});
    if (cfg.relation.test(rel_reciprocal(t))) out.insert({b, rel_reciprocal(t), a});
  };
  const auto n = static_cast<std::uint32_t>(kg.fact_count());
  for (std::uint32_t i = 0; i < n; ++i) {
    if (excluded(ex, i)) continue;
    const HyperFact& A = kg.fact(i);
    for (std::size_t x = 0; x < A.qualifiers.size(); ++x) {
      add(A.relation.value, rel::R2K, A.qualifiers[x].key.value);
      for (std::size_t y = 0; y < A.qualifiers.size(); ++y)
        if (x != y) add(A.qualifiers[x].key.value, rel::K2K, A.qualifiers[y].key.value);
    }
    for (std::uint32_t j = 0; j < n; ++j) {
      if (j == i || excluded(ex, j)) continue;
      const HyperFact& B = kg.fact(j);
      const auto ra = A.relation.value, rb = B.relation.value;
      if (A.head == B.head) add(ra, rel::H2H, rb);
      if (A.head == B.tail) add(ra, rel::H2T, rb);
      if (A.tail == B.head) add(ra, rel::T2H, rb);
      if (A.tail == B.tail) add(ra, rel::T2T, rb);
      for (const auto& qb : B.qualifiers) {
        if (A.head == qb.value) add(ra, rel::H2V, qb.key.value);
        if (A.tail == qb.value) add(ra, rel::T2V, qb.key.value);
      }
      for (const auto& qa : A.qualifiers) {
        if (qa.value == B.head) add(qa.key.value, rel::V2H, rb);
        if (qa.value == B.tail) add(qa.key.value, rel::V2T, rb);
        for (const auto& qb : B.qualifiers)
          if (qa.value == qb.value) add(qa.key.value, rel::V2V, qb.key.value);
      }
    }
  }
  return out;
}

inline EdgeSet entity_edges(const Hkg& kg, const thor::fg::InteractionConfig& cfg,
                            std::span<const std::uint32_t> ex = {}) {
  EdgeSet out;
  for (std::uint32_t i = 0; i < kg.fact_count(); ++i) {
    if (excluded(ex, i)) continue;
    const HyperFact& f = kg.fact(i);
    if (cfg.ultra_alike) {
      // Relation-typed edges: forward 2r, inverse 2r + 1.
      auto link = [&](std::uint32_t s, std::uint32_t r, std::uint32_t o) {
        out.insert({s, 2 * r, o});
        out.insert({o, 2 * r + 1, s});
      };
      link(f.head.value, f.relation.value, f.tail.value);
      for (const auto& q : f.qualifiers) {
        link(f.head.value, q.key.value, q.value.value);
        link(f.tail.value, q.key.value, q.value.value);
      }
      continue;
    }
    auto add = [&](std::uint32_t a, std::uint32_t t, std::uint32_t b) {
      if (!cfg.entity.test(t)) return;
      out.insert({a, t, b});
      if (cfg.entity.test(ent_reciprocal(t))) out.insert({b, ent_reciprocal(t), a});
    };
    add(f.head.value, ent::H2T, f.tail.value);
    for (std::size_t x = 0; x < f.qualifiers.size(); ++x) {
      const auto v = f.qualifiers[x].value.value;
      add(f.head.value, ent::H2V, v);
      add(f.tail.value, ent::T2V, v);
      for (std::size_t y = 0; y < f.qualifiers.size(); ++y)
        if (x != y) add(v, ent::V2V, f.qualifiers[y].value.value);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dense helpers over std::vector rows.

using Rows = std::vector<std::vector<double>>;

inline Rows to_rows(const thor::ad::Matrix<double>& m) {
  Rows r(m.rows, std::vector<double>(m.cols));
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) r[i][j] = m(i, j);
  return r;
}

inline Rows matmul(const Rows& a, const Rows& b) {
  const std::size_t k = b.size(), n = b.empty() ? 0 : b[0].size();
  Rows c(a.size(), std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i][j] += a[i][p] * b[p][j];
  return c;
}

// One message-passing layer, computed node by node: for every node, sum the
// messages over its incoming edges and apply the update. `scale` gives an
// optional extra per-edge factor (relation states for the relation-typed graph).
inline Rows mp_layer(const Rows& h, const std::vector<Edge>& edges, const Rows& emb, const Rows& w_self,
                     const Rows& w_agg, bool residual, const std::vector<std::vector<double>>* scale = nullptr) {
  const std::size_t n = h.size(), d = w_self.size();
  Rows out(n, std::vector<double>(d, 0.0));
  for (std::size_t v = 0; v < n; ++v) {
    std::vector<double> agg(d, 0.0);
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const auto [src, type, dst] = edges[e];
      if (dst != v) continue;
      for (std::size_t c = 0; c < d; ++c) agg[c] += h[src][c] * emb[type][c] * (scale ? (*scale)[e][c] : 1.0);
    }
    for (std::size_t c = 0; c < d; ++c) {
      double s = 0.0;
      for (std::size_t p = 0; p < d; ++p) s += h[v][p] * w_self[p][c] + agg[p] * w_agg[p][c];
      out[v][c] = std::max(0.0, s) + (residual ? h[v][c] : 0.0);
    }
  }
  return out;
}

inline std::vector<double> layer_norm(const std::vector<double>& x, const std::vector<double>& g,
                                      const std::vector<double>& b) {
  double mu = 0.0, var = 0.0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(x.size());
  for (double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(x.size());
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mu) / std::sqrt(var + 1e-5) * g[i] + b[i];
  return y;
}

// Bias class of a role pair, restated from the five-type rule.
inline std::uint32_t bias_class(thor::PositionRole a, thor::PositionRole b) {
  using K = thor::PositionRole::Kind;
  auto is = [&](K x, K y) { return (a.kind == x && b.kind == y) || (a.kind == y && b.kind == x); };
  if (is(K::Head, K::PrimaryRelation)) return 0;
  if (is(K::Tail, K::PrimaryRelation)) return 1;
  if (is(K::PrimaryRelation, K::Key)) return 2;
  if (is(K::Key, K::Value) && a.index == b.index) return 3;
  return 4;
}

struct AttentionOut {
  Rows y;
  std::vector<Rows> weights;  // per head
};

// One decoder block written out scalar by scalar:
//   beta_ij = q_i . (k_j + cK_ij) / sqrt(dh), alpha = softmax_j(beta),
//   z_i = sum_j alpha_ij (v_j + cV_ij), attention = sum_h z^h W_O^h,
// then residual + norm, feed-forward, residual + norm.
inline AttentionOut attention_layer(const thor::ad::ParamStore<double>& p, const thor::dec::DecoderConfig& c,
                                    std::size_t l, const Rows& x, const std::vector<thor::PositionRole>& roles) {
  using thor::dec::dec_name;
  using thor::dec::head_name;
  const std::size_t n = x.size(), d = c.dim, dh = c.head_dim();
  auto P = [&](const std::string& name) { return to_rows(p.get(name).value); };
  AttentionOut res;
  Rows attn(n, std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < c.heads; ++h) {
    const Rows q = matmul(x, P(head_name(l, h, "wq"))), k = matmul(x, P(head_name(l, h, "wk"))),
               v = matmul(x, P(head_name(l, h, "wv")));
    Rows bk = P(head_name(l, h, "bias_k")), bv = P(head_name(l, h, "bias_v"));
    if (c.zero_other) {
      bk.push_back(std::vector<double>(dh, 0.0));
      bv.push_back(std::vector<double>(dh, 0.0));
    }
    const Rows wo = P(head_name(l, h, "wo"));
    Rows w(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> beta(n);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        const auto t = bias_class(roles[i], roles[j]);
        double s = 0.0;
        for (std::size_t a = 0; a < dh; ++a) s += q[i][a] * (k[j][a] + bk[t][a]);
        beta[j] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, beta[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) z += (w[i][j] = std::exp(beta[j] - mx));
      for (std::size_t j = 0; j < n; ++j) w[i][j] /= z;
      std::vector<double> zi(dh, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const auto t = bias_class(roles[i], roles[j]);
        for (std::size_t a = 0; a < dh; ++a) zi[a] += w[i][j] * (v[j][a] + bv[t][a]);
      }
      for (std::size_t o = 0; o < d; ++o)
        for (std::size_t a = 0; a < dh; ++a) attn[i][o] += zi[a] * wo[a][o];
    }
    res.weights.push_back(std::move(w));
  }
  const auto g1 = P(dec_name(l, "ln1.gamma"))[0], b1 = P(dec_name(l, "ln1.beta"))[0];
  const auto g2 = P(dec_name(l, "ln2.gamma"))[0], b2 = P(dec_name(l, "ln2.beta"))[0];
  const auto w1 = P(dec_name(l, "ffn.w1")), w2 = P(dec_name(l, "ffn.w2"));
  const auto fb1 = P(dec_name(l, "ffn.b1"))[0], fb2 = P(dec_name(l, "ffn.b2"))[0];
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> r(d);
    for (std::size_t o = 0; o < d; ++o) r[o] = x[i][o] + attn[i][o];
    const auto y = layer_norm(r, g1, b1);
    std::vector<double> hid(w1[0].size());
    for (std::size_t u = 0; u < hid.size(); ++u) {
      double s = fb1[u];
      for (std::size_t o = 0; o < d; ++o) s += y[o] * w1[o][u];
      hid[u] = std::max(0.0, s);
    }
    std::vector<double> f(d);
    for (std::size_t o = 0; o < d; ++o) {
      double s = fb2[o];
      for (std::size_t u = 0; u < hid.size(); ++u) s += hid[u] * w2[u][o];
      f[o] = y[o] + s;
    }
    res.y.push_back(layer_norm(f, g2, b2));
  }
  return res;
}

// Modularity of a partition, computed from its definition over all node pairs:
// Q = 1/(2m) sum_ij [A_ij - k_i k_j / (2m)] delta(c_i, c_j).
inline double modularity(const std::vector<std::vector<double>>& adj, const std::vector<std::uint32_t>& comm) {
  const std::size_t n = adj.size();
  std::vector<double> k(n, 0.0);
  double two_m = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) k[i] += adj[i][j];
  for (double v : k) two_m += v;
  if (two_m == 0.0) return 0.0;
  double q = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (comm[i] == comm[j]) q += adj[i][j] - k[i] * k[j] / two_m;
  return q / two_m;
}

}  // namespace oracle
