#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation in creation order, which is already a
// topological order, so backward() is a single reverse sweep. Parameters live
// in a ParamStore outside the tape; binding a parameter onto a tape creates a
// leaf whose gradient is added into Parameter::grad when backward() runs.
// Gradients accumulate across backward() calls until zero_grad().
//
// The scalar type is a template parameter: float for training, double for
// finite-difference checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "thor/errors.hpp"
#include "thor/rng.hpp"

namespace thor::ad {

template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T{0}) : rows(r), cols(c), data(r * c, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<T>> init) {
    Matrix m;
    m.rows = init.size();
    m.cols = m.rows ? init.begin()->size() : 0;
    for (const auto& r : init) {
      if (r.size() != m.cols) throw ShapeError("ragged initializer");
      m.data.insert(m.data.end(), r.begin(), r.end());
    }
    return m;
  }

  T& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::span<T> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const T> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_str() const { return std::to_string(rows) + "x" + std::to_string(cols); }

  template <typename U>
  Matrix<U> cast() const {
    Matrix<U> out(rows, cols);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  bool operator==(const Matrix&) const = default;
};

template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
};

// Named parameters with stable insertion order and stable addresses.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;
  // Deep copy: the copy owns its own parameters (values and gradients).
  ParamStore(const ParamStore& o) : index_(o.index_) {
    params_.reserve(o.params_.size());
    for (const auto& p : o.params_) params_.push_back(std::make_unique<Parameter<T>>(*p));
  }
  ParamStore& operator=(const ParamStore& o) {
    if (this != &o) *this = ParamStore(o);
    return *this;
  }

  Parameter<T>& add(const std::string& name, Matrix<T> init) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->grad = Matrix<T>(init.rows, init.cols);
    p->value = std::move(init);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no parameter named " + name);
    return *params_[it->second];
  }
  const Parameter<T>& get(const std::string& name) const {
    return const_cast<ParamStore*>(this)->get(name);
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& at(std::size_t i) { return *params_[i]; }
  const Parameter<T>& at(std::size_t i) const { return *params_[i]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) std::fill(p->grad.data.begin(), p->grad.data.end(), T{0});
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : params_) out.add(p->name, p->value.template cast<U>());
    return out;
  }

  // Values only; gradients are not part of equality.
  bool same_values(const ParamStore& o) const {
    if (o.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (at(i).name != o.at(i).name || !(at(i).value == o.at(i).value)) return false;
    }
    return true;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

template <typename T>
class Tape;

// Handle to a tape node.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::uint32_t id = 0;

  const Matrix<T>& value() const { return tape->value(id); }
  std::size_t rows() const { return value().rows; }
  std::size_t cols() const { return value().cols; }
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Matrix<T> m) { return push(std::move(m), false, {}); }

  Var<T> param(Parameter<T>& p) {
    auto v = push(p.value, true, {});
    nodes_[v.id].param = &p;
    return v;
  }

  Var<T> push(Matrix<T> value, bool needs_grad, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  const Matrix<T>& value(std::uint32_t id) const { return nodes_[id].value; }
  bool needs_grad(std::uint32_t id) const { return nodes_[id].needs_grad; }

  // Gradient buffer of a node, allocated as zeros on first touch.
  Matrix<T>& grad(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty() && !n.value.empty()) n.grad = Matrix<T>(n.value.rows, n.value.cols);
    n.grad_touched = true;
    return n.grad;
  }

  bool has_grad(std::uint32_t id) const { return nodes_[id].grad_touched; }
  const Matrix<T>& grad_value(std::uint32_t id) const { return nodes_[id].grad; }

  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a 1x1 root. Parameter leaves add their adjoint into the
  // bound Parameter::grad.
  void backward(Var<T> root) {
    if (root.tape != this) throw ContractError("backward: root belongs to another tape");
    const Matrix<T>& rv = value(root.id);
    if (rv.rows != 1 || rv.cols != 1) {
      throw ContractError("backward: root must be a 1x1 scalar, got " + rv.shape_str());
    }
    if (!nodes_[root.id].needs_grad) return;
    for (auto& n : nodes_) {
      if (n.grad_touched) std::fill(n.grad.data.begin(), n.grad.data.end(), T{0});
      n.grad_touched = false;
    }
    grad(root.id).data[0] += T{1};
    for (std::int64_t i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.needs_grad || !n.grad_touched) continue;
      if (n.backward) n.backward(*this, static_cast<std::uint32_t>(i));
      if (n.param) {
        auto& pg = n.param->grad.data;
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad.data[k];
      }
    }
  }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool needs_grad = false;
    bool grad_touched = false;
  };

  std::vector<Node> nodes_;
};

namespace detail {

template <typename T>
void check_same_tape(const Var<T>& a, const Var<T>& b) {
  if (a.tape != b.tape) throw ContractError("operands live on different tapes");
}

enum class Broadcast { Same, Row, Scalar };

template <typename T>
Broadcast broadcast_kind(const Matrix<T>& a, const Matrix<T>& b, const char* op) {
  if (a.same_shape(b)) return Broadcast::Same;
  if (b.rows == 1 && b.cols == a.cols) return Broadcast::Row;
  if (b.rows == 1 && b.cols == 1) return Broadcast::Scalar;
  throw ShapeError(std::string(op) + ": cannot broadcast " + b.shape_str() + " onto " + a.shape_str());
}

template <typename T>
std::size_t broadcast_index(Broadcast kind, std::size_t flat, std::size_t cols) {
  switch (kind) {
    case Broadcast::Same:
      return flat;
    case Broadcast::Row:
      return flat % cols;
    case Broadcast::Scalar:
      return 0;
  }
  return 0;
}

// C += A * B (shapes pre-checked).
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T{0}) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols != B.rows) {
    throw ShapeError("matmul: inner dimensions differ (" + A.shape_str() + " * " + B.shape_str() + ")");
  }
  Matrix<T> out(A.rows, B.cols);
  detail::gemm_acc(A.data.data(), B.data.data(), out.data.data(), A.rows, A.cols, B.cols);
  Tape<T>& t = *a.tape;
  const bool ng = t.needs_grad(a.id) || t.needs_grad(b.id);
  return t.push(std::move(out), ng, [ia = a.id, ib = b.id](Tape<T>& t, std::uint32_t self) {
    const auto& G = t.grad_value(self);
    const auto& A = t.value(ia);
    const auto& B = t.value(ib);
    const std::size_t m = A.rows, k = A.cols, n = B.cols;
    if (t.needs_grad(ia)) {
      auto& dA = t.grad(ia);  // dA += G * B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const T g = G.data[i * n + j];
          if (g == T{0}) continue;
          for (std::size_t p = 0; p < k; ++p) dA.data[i * k + p] += g * B.data[p * n + j];
        }
    }
    if (t.needs_grad(ib)) {
      auto& dB = t.grad(ib);  // dB += A^T * G
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T av = A.data[i * k + p];
          if (av == T{0}) continue;
          for (std::size_t j = 0; j < n; ++j) dB.data[p * n + j] += av * G.data[i * n + j];
        }
    }
  });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  const auto& A = a.value();
  Matrix<T> out(A.cols, A.rows);
  for (std::size_t i = 0; i < A.rows; ++i)
    for (std::size_t j = 0; j < A.cols; ++j) out(j, i) = A(i, j);
  Tape<T>& t = *a.tape;
  return t.push(std::move(out), t.needs_grad(a.id), [ia = a.id](Tape<T>& t, std::uint32_t self) {
    const auto& G = t.grad_value(self);
    auto& dA = t.grad(ia);
    for (std::size_t i = 0; i < dA.rows; ++i)
      for (std::size_t j = 0; j < dA.cols; ++j) dA(i, j) += G(j, i);
  });
}

// Elementwise a + b; b may be same-shape, a 1xcols row, or 1x1.
template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  const auto kind = detail::broadcast_kind(A, B, "add");
  Matrix<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += B.data[detail::broadcast_index<T>(kind, i, A.cols)];
  Tape<T>& t = *a.tape;
  const bool ng = t.needs_grad(a.id) || t.needs_grad(b.id);
  return t.push(std::move(out), ng, [ia = a.id, ib = b.id, kind](Tape<T>& t, std::uint32_t self) {
    const auto& G = t.grad_value(self);
    if (t.needs_grad(ia)) {
      auto& dA = t.grad(ia);
      for (std::size_t i = 0; i < G.size(); ++i) dA.data[i] += G.data[i];
    }
    if (t.needs_grad(ib)) {
      auto& dB = t.grad(ib);
      for (std::size_t i = 0; i < G.size(); ++i) dB.data[detail::broadcast_index<T>(kind, i, G.cols)] += G.data[i];
    }
  });
}

// Elementwise a * b with the same broadcasting rules as add.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  const auto kind = detail::broadcast_kind(A, B, "mul");
  Matrix<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= B.data[detail::broadcast_index<T>(kind, i, A.cols)];
  Tape<T>& t = *a.tape;
  const bool ng = t.needs_grad(a.id) || t.needs_grad(b.id);
  return t.push(std::move(out), ng, [ia = a.id, ib = b.id, kind](Tape<T>& t, std::uint32_t self) {
    const auto& G = t.grad_value(self);
    const auto& A = t.value(ia);
    const auto& B = t.value(ib);
    if (t.needs_grad(ia)) {
      auto& dA = t.grad(ia);
      for (std::size_t i = 0; i < G.size(); ++i)
        dA.data[i] += G.data[i] * B.data[detail::broadcast_index<T>(kind, i, G.cols)];
    }
    if (t.needs_grad(ib)) {
      auto& dB = t.grad(ib);
      for (std::size_t i = 0; i < G.size(); ++i)
        dB.data[detail::broadcast_index<T>(kind, i, G.cols)] += G.data[i] * A.data[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  return mul(a, a.tape->constant(Matrix<T>(1, 1, factor)));
}

template <typename T>
Var<T> relu(Var<T> a) {
  Matrix<T> out = a.value();
  for (auto& x : out.data) x = x > T{0} ? x : T{0};
  Tape<T>& t = *a.tape;
  return t.push(std::move(out), t.needs_grad(a.id), [ia = a.id](Tape<T>& t, std::uint32_t self) {
    const auto& G = t.grad_value(self);
    const auto& A = t.value(ia);
    auto& dA = t.grad(ia);
    for (std::size_t i = 0; i < G.size(); ++i)
      if (A.data[i] > T{0}) dA.data[i] += G.data[i];
  });
}

// Stacks the rows of every part (all parts share a column count).
template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape<T>& t = *parts[0].tape;
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  bool ng = false;
  std::vector<std::uint32_t> ids;
  ids.reserve(parts.size());
  for (const auto& p : parts) {
    detail::check_same_tape(parts[0], p);
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    rows += p.rows();
    ng = ng || t.needs_grad(p.id);
    ids.push_back(p.id);
  }
  Matrix<T> out(rows, cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += v.size();
  }
  return t.push(std::move(out), ng, [ids = std::move(ids)](Tape<T>& t, std::uint32_t self) {
    const auto& G = t.grad_value(self);
    std::size_t off = 0;
    for (auto id : ids) {
      const std::size_t n = t.value(id).size();
      if (t.needs_grad(id)) {
        auto& d = t.grad(id);
        for (std::size_t i = 0; i < n; ++i) d.data[i] += G.data[off + i];
      }
      off += n;
    }
  });
}

template <typename T>
Var<T> concat_rows(std::initializer_list<Var<T>> parts) {
  std::vector<Var<T>> v(parts);
  return concat_rows<T>(std::span<const Var<T>>(v));
}

// Per-row normalization to zero mean / unit variance, then gamma * x + beta.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  detail::check_same_tape(x, gamma);
  detail::check_same_tape(x, beta);
  const auto& X = x.value();
  const std::size_t n = X.cols;
  if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n) {
    throw ShapeError("layer_norm: gamma/beta must be 1x" + std::to_string(n));
  }
  Matrix<T> xhat(X.rows, n);
  std::vector<T> inv_std(X.rows);
  Matrix<T> out(X.rows, n);
  const auto& g = gamma.value();
  const auto& b = beta.value();
  for (std::size_t i = 0; i < X.rows; ++i) {
    T mean{0};
    for (std::size_t j = 0; j < n; ++j) mean += X(i, j);
    mean /= static_cast<T>(n);
    T var{0};
    for (std::size_t j = 0; j < n; ++j) var += (X(i, j) - mean) * (X(i, j) - mean);
    var /= static_cast<T>(n);
    inv_std[i] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat(i, j) = (X(i, j) - mean) * inv_std[i];
      out(i, j) = g.data[j] * xhat(i, j) + b.data[j];
    }
  }
  Tape<T>& t = *x.tape;
  const bool ng = t.needs_grad(x.id) || t.needs_grad(gamma.id) || t.needs_grad(beta.id);
  return t.push(std::move(out), ng,
                [ix = x.id, ig = gamma.id, ib = beta.id, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                    Tape<T>& t, std::uint32_t self) {
                  const auto& G = t.grad_value(self);
                  const std::size_t rows = G.rows, n = G.cols;
                  if (t.needs_grad(ig)) {
                    auto& dg = t.grad(ig);
                    for (std::size_t i = 0; i < rows; ++i)
                      for (std::size_t j = 0; j < n; ++j) dg.data[j] += G(i, j) * xhat(i, j);
                  }
                  if (t.needs_grad(ib)) {
                    auto& db = t.grad(ib);
                    for (std::size_t i = 0; i < rows; ++i)
                      for (std::size_t j = 0; j < n; ++j) db.data[j] += G(i, j);
                  }
                  if (t.needs_grad(ix)) {
                    const auto& gamma = t.value(ig);
                    auto& dx = t.grad(ix);
                    std::vector<T> dxhat(n);
                    for (std::size_t i = 0; i < rows; ++i) {
                      T mean_d{0}, mean_dx{0};
                      for (std::size_t j = 0; j < n; ++j) {
                        dxhat[j] = G(i, j) * gamma.data[j];
                        mean_d += dxhat[j];
                        mean_dx += dxhat[j] * xhat(i, j);
                      }
                      mean_d /= static_cast<T>(n);
                      mean_dx /= static_cast<T>(n);
                      for (std::size_t j = 0; j < n; ++j)
                        dx(i, j) += inv_std[i] * (dxhat[j] - mean_d - xhat(i, j) * mean_dx);
                    }
                  }
                });
}

template <typename T>
void softmax_row_inplace(std::span<T> row) {
  if (row.empty()) return;
  const T mx = *std::max_element(row.begin(), row.end());
  T z{0};
  for (auto& v : row) {
    v = std::exp(v - mx);
    z += v;
  }
  for (auto& v : row) v /= z;
}

template <typename T>
Var<T> rowwise_softmax(Var<T> x) {
  Matrix<T> out = x.value();
  for (std::size_t i = 0; i < out.rows; ++i) softmax_row_inplace(out.row(i));
  Tape<T>& t = *x.tape;
  return t.push(std::move(out), t.needs_grad(x.id), [ix = x.id](Tape<T>& t, std::uint32_t self) {
    const auto& G = t.grad_value(self);
    const auto& Y = t.value(self);
    auto& dx = t.grad(ix);
    for (std::size_t i = 0; i < Y.rows; ++i) {
      T dot{0};
      for (std::size_t j = 0; j < Y.cols; ++j) dot += G(i, j) * Y(i, j);
      for (std::size_t j = 0; j < Y.cols; ++j) dx(i, j) += Y(i, j) * (G(i, j) - dot);
    }
  });
}

// out[e] = x[index[e]].
template <typename T>
Var<T> gather(Var<T> x, std::vector<std::uint32_t> index) {
  const auto& X = x.value();
  Matrix<T> out(index.size(), X.cols);
  for (std::size_t e = 0; e < index.size(); ++e) {
    if (index[e] >= X.rows) {
      throw IndexError("gather: row " + std::to_string(index[e]) + " out of range for " + X.shape_str());
    }
    std::copy_n(X.data.begin() + static_cast<std::ptrdiff_t>(index[e] * X.cols), X.cols,
                out.data.begin() + static_cast<std::ptrdiff_t>(e * X.cols));
  }
  Tape<T>& t = *x.tape;
  return t.push(std::move(out), t.needs_grad(x.id), [ix = x.id, index = std::move(index)](Tape<T>& t, std::uint32_t self) {
    const auto& G = t.grad_value(self);
    auto& dx = t.grad(ix);
    const std::size_t c = G.cols;
    for (std::size_t e = 0; e < index.size(); ++e)
      for (std::size_t j = 0; j < c; ++j) dx.data[index[e] * c + j] += G.data[e * c + j];
  });
}

// out[i] = sum of messages[e] over e with dst[e] == i; out has out_rows rows.
template <typename T>
Var<T> scatter_add(Var<T> messages, std::vector<std::uint32_t> dst, std::size_t out_rows) {
  const auto& M = messages.value();
  if (dst.size() != M.rows) {
    throw ShapeError("scatter_add: " + std::to_string(dst.size()) + " indices for " + M.shape_str() + " messages");
  }
  Matrix<T> out(out_rows, M.cols);
  for (std::size_t e = 0; e < dst.size(); ++e) {
    if (dst[e] >= out_rows) {
      throw IndexError("scatter_add: destination " + std::to_string(dst[e]) + " >= " + std::to_string(out_rows));
    }
    for (std::size_t j = 0; j < M.cols; ++j) out.data[dst[e] * M.cols + j] += M.data[e * M.cols + j];
  }
  Tape<T>& t = *messages.tape;
  return t.push(std::move(out), t.needs_grad(messages.id),
                [im = messages.id, dst = std::move(dst)](Tape<T>& t, std::uint32_t self) {
                  const auto& G = t.grad_value(self);
                  auto& dm = t.grad(im);
                  const std::size_t c = G.cols;
                  for (std::size_t e = 0; e < dst.size(); ++e)
                    for (std::size_t j = 0; j < c; ++j) dm.data[e * c + j] += G.data[dst[e] * c + j];
                });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T s{0};
  for (auto v : x.value().data) s += v;
  Tape<T>& t = *x.tape;
  return t.push(Matrix<T>(1, 1, s), t.needs_grad(x.id), [ix = x.id](Tape<T>& t, std::uint32_t self) {
    const T g = t.grad_value(self).data[0];
    for (auto& d : t.grad(ix).data) d += g;
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const auto n = x.value().size();
  if (n == 0) throw ShapeError("mean of empty matrix");
  return scale(sum(x), T{1} / static_cast<T>(n));
}

// Mean of a list of 1x1 values.
template <typename T>
Var<T> mean_of(std::span<const Var<T>> scalars) {
  return mean(concat_rows<T>(scalars));
}

// -log softmax(logits)[target] for a 1xn row of logits.
//
// When tail_count > 0, the candidate set additionally contains tail_count
// implicit candidates whose logit is the 1x1 value tail_logit. The loss is then
// exactly the cross entropy over n + tail_count candidates without
// materializing the shared rows.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::size_t target, std::size_t tail_count = 0,
                     std::optional<Var<T>> tail_logit = std::nullopt) {
  const auto& Z = logits.value();
  if (Z.rows != 1) throw ShapeError("cross_entropy: logits must be 1xn, got " + Z.shape_str());
  if (target >= Z.cols) {
    throw IndexError("cross_entropy: target " + std::to_string(target) + " >= " + std::to_string(Z.cols));
  }
  if (tail_count > 0 && !tail_logit) throw ContractError("cross_entropy: tail_count without tail_logit");
  const T tail = tail_count > 0 ? tail_logit->value().data[0] : T{0};
  const auto top = std::max_element(Z.data.begin(), Z.data.end());
  const bool tail_top = tail_count > 0 && tail > *top;
  const T mx = tail_top ? tail : *top;
  // log(z) = log1p(rest), with rest the mass of everything but one maximal
  // term; keeps precision when one logit dominates.
  T rest{0};
  for (auto it = Z.data.begin(); it != Z.data.end(); ++it)
    if (tail_top || it != top) rest += std::exp(*it - mx);
  const T tail_mass = tail_count > 0 ? static_cast<T>(tail_count) * std::exp(tail - mx) : T{0};
  rest += tail_top ? tail_mass - T{1} : tail_mass;
  const T z = T{1} + rest;
  const T loss = (mx - Z.data[target]) + std::log1p(rest);
  Tape<T>& t = *logits.tape;
  const std::uint32_t tail_id = tail_count > 0 ? tail_logit->id : logits.id;
  const bool ng = t.needs_grad(logits.id) || (tail_count > 0 && t.needs_grad(tail_id));
  return t.push(Matrix<T>(1, 1, loss), ng,
                [il = logits.id, tail_id, target, tail_count, mx, z, tail_mass](Tape<T>& t, std::uint32_t self) {
                  const T g = t.grad_value(self).data[0];
                  if (t.needs_grad(il)) {
                    const auto& Z = t.value(il);
                    auto& dz = t.grad(il);
                    for (std::size_t j = 0; j < Z.cols; ++j) dz.data[j] += g * std::exp(Z.data[j] - mx) / z;
                    dz.data[target] -= g;
                  }
                  if (tail_count > 0 && t.needs_grad(tail_id)) t.grad(tail_id).data[0] += g * tail_mass / z;
                });
}

// ---------------------------------------------------------------------------
// Initialization, optimization, checkpoints

template <typename T>
Matrix<T> glorot(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix<T> m(rows, cols);
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  for (auto& v : m.data) v = static_cast<T>(rng.uniform(-a, a));
  return m;
}

template <typename T>
Matrix<T> uniform(std::size_t rows, std::size_t cols, double lo, double hi, Rng& rng) {
  Matrix<T> m(rows, cols);
  for (auto& v : m.data) v = static_cast<T>(rng.uniform(lo, hi));
  return m;
}

template <typename T>
T global_grad_norm(const ParamStore<T>& store) {
  double s = 0.0;
  for (std::size_t i = 0; i < store.size(); ++i)
    for (auto g : store.at(i).grad.data) s += static_cast<double>(g) * static_cast<double>(g);
  return static_cast<T>(std::sqrt(s));
}

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
template <typename T>
T clip_grad_norm(ParamStore<T>& store, T max_norm) {
  const T norm = global_grad_norm(store);
  if (norm > max_norm && norm > T{0}) {
    const T f = max_norm / norm;
    for (std::size_t i = 0; i < store.size(); ++i)
      for (auto& g : store.at(i).grad.data) g *= f;
  }
  return norm;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamStore<T>& store) {
    if (m_.size() != store.size()) {
      m_.clear();
      v_.clear();
      for (std::size_t i = 0; i < store.size(); ++i) {
        m_.emplace_back(store.at(i).value.size(), 0.0);
        v_.emplace_back(store.at(i).value.size(), 0.0);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < store.size(); ++i) {
      auto& p = store.at(i);
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double g = static_cast<double>(p.grad.data[k]);
        m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0 - cfg_.beta1) * g;
        v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m_[i][k] / bc1;
        const double vhat = v_[i][k] / bc2;
        p.value.data[k] = static_cast<T>(static_cast<double>(p.value.data[k]) - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  std::uint64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace thor::ad
