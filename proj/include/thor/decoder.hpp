#pragma once

// Edge-biased self-attention over a query fact's element sequence
// [Head, PrimaryRelation, Tail, Key0, Value0, ...] and entity scoring.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "thor/autodiff.hpp"
#include "thor/errors.hpp"
#include "thor/hkg.hpp"
#include "thor/rng.hpp"

namespace thor::dec {

using ad::Matrix;
using ad::ParamStore;
using ad::Tape;
using ad::Var;

enum class BiasType : std::uint8_t { HR, TR, RK, KV, Other };
inline constexpr std::size_t kBiasTypes = 5;

inline const char* to_string(BiasType b) {
  switch (b) {
    case BiasType::HR: return "HR";
    case BiasType::TR: return "TR";
    case BiasType::RK: return "RK";
    case BiasType::KV: return "KV";
    case BiasType::Other: return "Other";
  }
  return "?";
}

inline BiasType classify_bias(PositionRole a, PositionRole b) {
  using K = PositionRole::Kind;
  auto pair_is = [&](K x, K y) { return (a.kind == x && b.kind == y) || (a.kind == y && b.kind == x); };
  if (pair_is(K::Head, K::PrimaryRelation)) return BiasType::HR;
  if (pair_is(K::Tail, K::PrimaryRelation)) return BiasType::TR;
  if (pair_is(K::PrimaryRelation, K::Key)) return BiasType::RK;
  if (pair_is(K::Key, K::Value) && a.index == b.index) return BiasType::KV;
  return BiasType::Other;
}

// Roles of the element sequence of a fact with n qualifiers.
inline std::vector<PositionRole> sequence_layout(std::size_t n) {
  std::vector<PositionRole> roles = {PositionRole::head(), PositionRole::primary_relation(), PositionRole::tail()};
  for (std::uint32_t i = 0; i < n; ++i) {
    roles.push_back(PositionRole::key(i));
    roles.push_back(PositionRole::value(i));
  }
  return roles;
}

inline std::size_t mask_slot(MaskedPosition m) {
  switch (m.kind) {
    case MaskedPosition::Kind::Head: return 0;
    case MaskedPosition::Kind::Tail: return 2;
    case MaskedPosition::Kind::Value: return 4 + 2 * static_cast<std::size_t>(m.index);
  }
  return 0;
}

struct DecoderConfig {
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t layers = 2;
  bool zero_other = false;  // fixed zero bias for the Other type instead of a learned one

  std::size_t head_dim() const {
    if (heads == 0 || dim % heads != 0) {
      throw ConfigError("decoder width " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) + " heads");
    }
    return dim / heads;
  }
};

inline std::string dec_name(std::size_t layer, const std::string& what) {
  return "dec.layer" + std::to_string(layer) + "." + what;
}
inline std::string head_name(std::size_t layer, std::size_t head, const char* what) {
  return dec_name(layer, "head" + std::to_string(head) + "." + what);
}

template <typename T>
void init_decoder(ParamStore<T>& store, const DecoderConfig& c, Rng& rng) {
  const auto d = c.dim;
  const auto dh = c.head_dim();
  const std::size_t bias_rows = c.zero_other ? kBiasTypes - 1 : kBiasTypes;
  for (std::size_t l = 0; l < c.layers; ++l) {
    for (std::size_t h = 0; h < c.heads; ++h) {
      store.add(head_name(l, h, "wq"), ad::glorot<T>(d, dh, rng));
      store.add(head_name(l, h, "wk"), ad::glorot<T>(d, dh, rng));
      store.add(head_name(l, h, "wv"), ad::glorot<T>(d, dh, rng));
      store.add(head_name(l, h, "wo"), ad::glorot<T>(dh, d, rng));
      store.add(head_name(l, h, "bias_k"), ad::uniform<T>(bias_rows, dh, -0.1, 0.1, rng));
      store.add(head_name(l, h, "bias_v"), ad::uniform<T>(bias_rows, dh, -0.1, 0.1, rng));
    }
    store.add(dec_name(l, "ln1.gamma"), Matrix<T>(1, d, T{1}));
    store.add(dec_name(l, "ln1.beta"), Matrix<T>(1, d, T{0}));
    store.add(dec_name(l, "ffn.w1"), ad::glorot<T>(d, 4 * d, rng));
    store.add(dec_name(l, "ffn.b1"), Matrix<T>(1, 4 * d, T{0}));
    store.add(dec_name(l, "ffn.w2"), ad::glorot<T>(4 * d, d, rng));
    store.add(dec_name(l, "ffn.b2"), Matrix<T>(1, d, T{0}));
    store.add(dec_name(l, "ln2.gamma"), Matrix<T>(1, d, T{1}));
    store.add(dec_name(l, "ln2.beta"), Matrix<T>(1, d, T{0}));
  }
  store.add("dec.mask_token", ad::uniform<T>(1, d, -1.0, 1.0, rng));
  store.add("dec.b_m", Matrix<T>(1, 1, T{0}));
}

// Bias table with the Other row appended as a constant zero when requested.
template <typename T>
Var<T> bias_table(Tape<T>& tape, ParamStore<T>& store, const DecoderConfig& c, std::size_t l, std::size_t h,
                  const char* what) {
  Var<T> p = tape.param(store.get(head_name(l, h, what)));
  if (!c.zero_other) return p;
  return ad::concat_rows<T>({p, tape.constant(Matrix<T>(1, p.cols()))});
}

// Attention weights of one head for every row, returned for inspection.
template <typename T>
struct AttentionTrace {
  std::vector<Matrix<T>> weights;  // per (layer, head): n x n
};

// One attention block: multi-head edge-biased attention, residual + norm,
// feed-forward, residual + norm.
template <typename T>
Var<T> attention_layer(Tape<T>& tape, ParamStore<T>& store, const DecoderConfig& c, std::size_t l, Var<T> x,
                       const std::vector<PositionRole>& roles, AttentionTrace<T>* trace = nullptr) {
  const std::size_t n = x.rows();
  if (n == 0) throw ShapeError("attention over an empty sequence");
  if (roles.size() != n) throw ShapeError("attention: role count does not match sequence length");
  const std::size_t dh = c.head_dim();
  const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(dh));

  std::vector<std::vector<std::uint32_t>> types(n, std::vector<std::uint32_t>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) types[i][j] = static_cast<std::uint32_t>(classify_bias(roles[i], roles[j]));

  std::optional<Var<T>> attn;
  for (std::size_t h = 0; h < c.heads; ++h) {
    Var<T> q = ad::matmul(x, tape.param(store.get(head_name(l, h, "wq"))));
    Var<T> k = ad::matmul(x, tape.param(store.get(head_name(l, h, "wk"))));
    Var<T> v = ad::matmul(x, tape.param(store.get(head_name(l, h, "wv"))));
    Var<T> bk = bias_table(tape, store, c, l, h, "bias_k");
    Var<T> bv = bias_table(tape, store, c, l, h, "bias_v");
    std::vector<Var<T>> rows;
    rows.reserve(n);
    Matrix<T> w(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      Var<T> keys = ad::add(k, ad::gather(bk, types[i]));
      Var<T> vals = ad::add(v, ad::gather(bv, types[i]));
      Var<T> beta = ad::scale(ad::matmul(ad::gather(q, {static_cast<std::uint32_t>(i)}), ad::transpose(keys)), inv_sqrt);
      Var<T> alpha = ad::rowwise_softmax(beta);
      if (trace) std::copy(alpha.value().data.begin(), alpha.value().data.end(), w.row(i).begin());
      rows.push_back(ad::matmul(alpha, vals));
    }
    if (trace) trace->weights.push_back(std::move(w));
    Var<T> out = ad::matmul(ad::concat_rows<T>(std::span<const Var<T>>(rows)), tape.param(store.get(head_name(l, h, "wo"))));
    attn = attn ? ad::add(*attn, out) : out;
  }
  Var<T> y = ad::layer_norm(ad::add(x, *attn), tape.param(store.get(dec_name(l, "ln1.gamma"))),
                            tape.param(store.get(dec_name(l, "ln1.beta"))));
  Var<T> f = ad::relu(ad::add(ad::matmul(y, tape.param(store.get(dec_name(l, "ffn.w1")))),
                              tape.param(store.get(dec_name(l, "ffn.b1")))));
  f = ad::add(ad::matmul(f, tape.param(store.get(dec_name(l, "ffn.w2")))), tape.param(store.get(dec_name(l, "ffn.b2"))));
  return ad::layer_norm(ad::add(y, f), tape.param(store.get(dec_name(l, "ln2.gamma"))),
                        tape.param(store.get(dec_name(l, "ln2.beta"))));
}

// Runs all decoder layers; returns the final representation at `slot`.
template <typename T>
Var<T> decode(Tape<T>& tape, ParamStore<T>& store, const DecoderConfig& c, Var<T> seq,
              const std::vector<PositionRole>& roles, std::size_t slot, AttentionTrace<T>* trace = nullptr) {
  Var<T> x = seq;
  for (std::size_t l = 0; l < c.layers; ++l) x = attention_layer(tape, store, c, l, x, roles, trace);
  return ad::gather(x, {static_cast<std::uint32_t>(slot)});
}

// Logits x_m U_0^T + b_m over the rows of `entities`.
template <typename T>
Var<T> score_logits(Var<T> x_m, Var<T> entities, Var<T> b_m) {
  return ad::add(ad::matmul(x_m, ad::transpose(entities)), b_m);
}

// Softmax of a logit vector (plain doubles, for reporting).
inline std::vector<double> probabilities(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double mx = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (auto& v : p) z += (v = std::exp(v - mx));
  for (auto& v : p) v /= z;
  return p;
}

}  // namespace thor::dec
