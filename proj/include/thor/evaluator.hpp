#pragma once

// Filtered ranking evaluation with head/tail, value and all-position breakdowns.

#include <algorithm>
#include <cstdint>
#include <exception>
#include <iomanip>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "thor/errors.hpp"
#include "thor/hkg.hpp"

namespace thor::eval {

// Mean-tie rank of `answer` among the candidates not in `filter_out`.
// `filter_out` must be sorted.
inline double rank_of(std::span<const double> scores, std::uint32_t answer, std::span<const std::uint32_t> filter_out = {}) {
  if (answer >= scores.size()) throw ContractError("rank_of: answer index out of range");
  if (std::binary_search(filter_out.begin(), filter_out.end(), answer)) throw ContractError("rank_of: answer is filtered out");
  const double s = scores[answer];
  std::size_t greater = 0, equal = 0;
  for (std::uint32_t i = 0; i < scores.size(); ++i) {
    if (i == answer) continue;
    if (scores[i] > s) {
      ++greater;
    } else if (scores[i] == s) {
      ++equal;
    }
  }
  // Subtract filtered competitors instead of testing every index.
  for (auto i : filter_out) {
    if (i >= scores.size()) continue;
    if (scores[i] > s) {
      --greater;
    } else if (scores[i] == s) {
      --equal;
    }
  }
  return 1.0 + static_cast<double>(greater) + static_cast<double>(equal) / 2.0;
}

// Entities that complete a masked query to a known fact. Qualifiers are
// compared as a multiset, so their order in a fact does not matter.
class KnownFacts {
 public:
  KnownFacts() = default;
  explicit KnownFacts(std::span<const HyperFact> facts) {
    for (const auto& f : facts) add(f);
  }

  void add(const HyperFact& f) {
    insert(signature(f, MaskedPosition::head()), f.head.value);
    insert(signature(f, MaskedPosition::tail()), f.tail.value);
    for (std::uint32_t i = 0; i < f.arity(); ++i)
      insert(signature(f, MaskedPosition::value(i)), f.qualifiers[i].value.value);
  }

  // Sorted, deduplicated completions of the query's masked position.
  std::vector<std::uint32_t> completions(const QueryFact& q) const {
    auto it = all_.find(signature(q.base, q.mask));
    if (it == all_.end()) return {};
    return it->second;
  }

  // Completions other than the query's answer.
  std::vector<std::uint32_t> filter_for(const QueryFact& q) const {
    auto c = completions(q);
    if (q.answer) c.erase(std::remove(c.begin(), c.end(), q.answer->value), c.end());
    return c;
  }

 private:
  static std::vector<std::uint32_t> signature(const HyperFact& f, MaskedPosition m) {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> quals;
    std::uint32_t masked_key = UINT32_MAX;
    for (std::uint32_t i = 0; i < f.arity(); ++i) {
      if (m.kind == MaskedPosition::Kind::Value && m.index == i) {
        masked_key = f.qualifiers[i].key.value;
        continue;
      }
      quals.emplace_back(f.qualifiers[i].key.value, f.qualifiers[i].value.value);
    }
    std::sort(quals.begin(), quals.end());
    std::vector<std::uint32_t> sig = {static_cast<std::uint32_t>(m.kind), f.relation.value,
                                      m.kind == MaskedPosition::Kind::Head ? UINT32_MAX : f.head.value,
                                      m.kind == MaskedPosition::Kind::Tail ? UINT32_MAX : f.tail.value, masked_key};
    for (const auto& [k, v] : quals) {
      sig.push_back(k);
      sig.push_back(v);
    }
    return sig;
  }

  void insert(std::vector<std::uint32_t> sig, std::uint32_t e) {
    auto& v = all_[std::move(sig)];
    auto it = std::lower_bound(v.begin(), v.end(), e);
    if (it == v.end() || *it != e) v.insert(it, e);
  }

  std::map<std::vector<std::uint32_t>, std::vector<std::uint32_t>> all_;
};

struct Breakdown {
  std::size_t count = 0;
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;
};

struct Metrics {
  Breakdown ht;   // head and tail queries
  Breakdown v;    // value queries
  Breakdown all;  // every query, averaged jointly

  double mrr_ht() const { return ht.mrr; }
  double mrr_all() const { return all.mrr; }
};

// Aggregates per-query ranks; order of `ranks` does not affect the result
// beyond floating-point summation, which runs in the given order.
inline Metrics aggregate(std::span<const double> ranks, std::span<const MaskedPosition> masks) {
  if (ranks.size() != masks.size()) throw ShapeError("aggregate: ranks and masks differ in length");
  Metrics m;
  auto add = [](Breakdown& b, double rank) {
    ++b.count;
    b.mrr += 1.0 / rank;
    b.hits1 += rank <= 1.0 ? 1.0 : 0.0;
    b.hits3 += rank <= 3.0 ? 1.0 : 0.0;
    b.hits10 += rank <= 10.0 ? 1.0 : 0.0;
  };
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    add(m.all, ranks[i]);
    add(masks[i].is_head_or_tail() ? m.ht : m.v, ranks[i]);
  }
  for (Breakdown* b : {&m.ht, &m.v, &m.all}) {
    if (b->count == 0) continue;
    const double n = static_cast<double>(b->count);
    b->mrr /= n;
    b->hits1 /= n;
    b->hits3 /= n;
    b->hits10 /= n;
  }
  return m;
}

struct EvalOptions {
  bool filtered = true;
  std::size_t threads = 1;
};

// Ranks every query. `scorer(query, worker)` returns one score per entity;
// `worker` is in [0, threads) and lets callers keep per-thread scratch.
// Per-query ranks are collected by index, so results do not depend on the
// thread count.
template <typename Scorer>
std::vector<double> rank_queries(Scorer&& scorer, std::span<const QueryFact> queries, const KnownFacts& known,
                                 const EvalOptions& opt = {}) {
  std::vector<double> ranks(queries.size());
  auto run = [&](std::size_t worker, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& q = queries[i];
      if (!q.answer) throw ContractError("evaluation query without an answer");
      const std::vector<double> s = scorer(q, worker);
      const auto filt = opt.filtered ? known.filter_for(q) : std::vector<std::uint32_t>{};
      ranks[i] = rank_of(s, q.answer->value, filt);
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(opt.threads, queries.size()));
  if (threads == 1) {
    run(0, 0, queries.size());
    return ranks;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (queries.size() + threads - 1) / threads;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        run(w, w * chunk, std::min(queries.size(), (w + 1) * chunk));
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return ranks;
}

template <typename Scorer>
Metrics evaluate(Scorer&& scorer, std::span<const QueryFact> queries, const KnownFacts& known, const EvalOptions& opt = {}) {
  const auto ranks = rank_queries(std::forward<Scorer>(scorer), queries, known, opt);
  std::vector<MaskedPosition> masks;
  masks.reserve(queries.size());
  for (const auto& q : queries) masks.push_back(q.mask);
  return aggregate(ranks, masks);
}

inline std::string format_table(const Metrics& m) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "breakdown" << std::right << std::setw(8) << "queries" << std::setw(10) << "MRR"
     << std::setw(10) << "Hits@1" << std::setw(10) << "Hits@3" << std::setw(10) << "Hits@10" << '\n';
  auto row = [&](const char* name, const Breakdown& b) {
    os << std::left << std::setw(10) << name << std::right << std::setw(8) << b.count << std::fixed << std::setprecision(4)
       << std::setw(10) << b.mrr << std::setw(10) << b.hits1 << std::setw(10) << b.hits3 << std::setw(10) << b.hits10
       << '\n';
  };
  row("H/T", m.ht);
  row("V", m.v);
  row("ALL", m.all);
  return os.str();
}

inline std::string format_tsv(const Metrics& m) {
  std::ostringstream os;
  os << std::setprecision(10);
  auto rows = [&](const char* name, const Breakdown& b) {
    os << "mrr\t" << name << '\t' << b.mrr << '\n';
    os << "hits@1\t" << name << '\t' << b.hits1 << '\n';
    os << "hits@3\t" << name << '\t' << b.hits3 << '\n';
    os << "hits@10\t" << name << '\t' << b.hits10 << '\n';
    os << "count\t" << name << '\t' << b.count << '\n';
  };
  rows("H/T", m.ht);
  rows("V", m.v);
  rows("ALL", m.all);
  return os.str();
}

}  // namespace thor::eval
