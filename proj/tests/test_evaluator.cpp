#include <gtest/gtest.h>

#include "thor/evaluator.hpp"
#include "thor/rng.hpp"
#include "thor/synthetic.hpp"

using namespace thor;
using eval::rank_of;

TEST(Rank, HandFixtures) {
  const std::vector<double> s = {0.5, 0.3, 0.2};
  EXPECT_EQ(rank_of(s, 1), 2.0);
  EXPECT_EQ(rank_of(s, 2), 3.0);
  const std::vector<double> tie = {0.4, 0.4, 0.2};
  EXPECT_EQ(rank_of(tie, 0), 1.5);
  EXPECT_EQ(rank_of(tie, 1), 1.5);
  const std::vector<std::uint32_t> f = {1};
  EXPECT_EQ(rank_of(tie, 0, f), 1.0);
  const std::vector<std::uint32_t> g = {0};
  EXPECT_EQ(rank_of(s, 1, g), 1.0);
  EXPECT_EQ(rank_of(s, 0, std::vector<std::uint32_t>{1, 2}), 1.0);
  const std::vector<double> all_tied(4, 0.25);
  EXPECT_EQ(rank_of(all_tied, 3), 2.5);
}

TEST(Rank, Contracts) {
  const std::vector<double> s = {0.5, 0.3};
  const std::vector<std::uint32_t> f = {1};
  EXPECT_THROW(rank_of(s, 1, f), ContractError);
  EXPECT_THROW(rank_of(s, 2), ContractError);
}

TEST(Rank, MatchesBruteForceDefinition) {
  Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.index(12);
    std::vector<double> s(n);
    for (auto& v : s) v = static_cast<double>(rng.index(4));  // frequent ties
    const auto answer = static_cast<std::uint32_t>(rng.index(n));
    std::vector<std::uint32_t> filt;
    for (std::uint32_t i = 0; i < n; ++i)
      if (i != answer && rng.index(3) == 0) filt.push_back(i);
    double expect = 1.0;
    for (std::uint32_t i = 0; i < n; ++i) {
      if (i == answer || std::binary_search(filt.begin(), filt.end(), i)) continue;
      if (s[i] > s[answer]) expect += 1.0;
      if (s[i] == s[answer]) expect += 0.5;
    }
    ASSERT_EQ(rank_of(s, answer, filt), expect);
    ASSERT_GE(1.0 / rank_of(s, answer, filt), 1.0 / rank_of(s, answer));
  }
}

TEST(KnownFacts, FiltersOtherCompletions) {
  const auto kg = Hkg::from_raw(std::vector<RawFact>{{"a", "r", "b", {}}, {"a", "r", "c", {}}, {"a", "s", "d", {}}});
  eval::KnownFacts known(kg.facts());
  const auto q = make_query(kg.fact(0), MaskedPosition::tail());
  EXPECT_EQ(known.completions(q), (std::vector<std::uint32_t>{1, 2}));
  EXPECT_EQ(known.filter_for(q), (std::vector<std::uint32_t>{2}));
  // Scores put c above b; filtering c makes b first.
  const std::vector<double> s = {0.0, 0.4, 0.5, 0.1};
  EXPECT_EQ(rank_of(s, 1), 2.0);
  EXPECT_EQ(rank_of(s, 1, known.filter_for(q)), 1.0);
  // A unique completion has nothing to filter.
  EXPECT_TRUE(known.filter_for(make_query(kg.fact(2), MaskedPosition::tail())).empty());
}

TEST(KnownFacts, QualifierOrderIgnored) {
  const auto kg = Hkg::from_raw(std::vector<RawFact>{{"a", "r", "b", {{"k", "x"}, {"j", "y"}}},
                                                     {"a", "r", "c", {{"j", "y"}, {"k", "x"}}}});
  eval::KnownFacts known(kg.facts());
  EXPECT_EQ(known.filter_for(make_query(kg.fact(0), MaskedPosition::tail())), (std::vector<std::uint32_t>{4}));
}

namespace {

std::vector<QueryFact> random_queries(Rng& rng, Hkg& kg) {
  kg = synth::random_hkg(rng, 12, 2, 8, 3);
  return generate_queries(kg);
}

}  // namespace

TEST(Evaluate, UniformModelMatchesClosedForm) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    Hkg kg;
    const auto qs = random_queries(rng, kg);
    eval::KnownFacts known(kg.facts());
    const std::size_t n = kg.entity_count();
    auto uniform = [&](const QueryFact&, std::size_t) { return std::vector<double>(n, 1.0 / static_cast<double>(n)); };
    for (bool filtered : {true, false}) {
      const auto m = eval::evaluate(uniform, qs, known, {filtered, 1});
      // All candidates tie: rank = (c + 1) / 2 with c surviving candidates.
      double expect = 0.0;
      for (const auto& q : qs) {
        const double c = static_cast<double>(n - (filtered ? known.filter_for(q).size() : 0));
        expect += 2.0 / (c + 1.0);
      }
      expect /= static_cast<double>(qs.size());
      ASSERT_NEAR(m.mrr_all(), expect, 1e-9);
    }
  }
}

TEST(Evaluate, OracleModelScoresOne) {
  Rng rng(3);
  Hkg kg;
  const auto qs = random_queries(rng, kg);
  eval::KnownFacts known(kg.facts());
  auto oracle = [&](const QueryFact& q, std::size_t) {
    std::vector<double> s(kg.entity_count(), 0.0);
    s[q.answer->value] = 1.0;
    return s;
  };
  const auto m = eval::evaluate(oracle, qs, known);
  EXPECT_EQ(m.mrr_all(), 1.0);
  EXPECT_EQ(m.mrr_ht(), 1.0);
  EXPECT_EQ(m.all.hits1, 1.0);
}

TEST(Evaluate, FilteringNeverHurtsAndThreadsDoNotMatter) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Hkg kg;
    const auto qs = random_queries(rng, kg);
    eval::KnownFacts known(kg.facts());
    // Deterministic pseudo-random scores derived from the query itself.
    auto scorer = [&](const QueryFact& q, std::size_t) {
      Rng r(q.base.relation.value * 7919ULL + q.answer->value * 31ULL + static_cast<std::uint64_t>(q.mask.kind) +
            *q.source_fact * 104729ULL);
      std::vector<double> s(kg.entity_count());
      for (auto& v : s) v = static_cast<double>(r.index(5));
      return s;
    };
    const auto raw = eval::rank_queries(scorer, qs, known, {false, 1});
    const auto fil = eval::rank_queries(scorer, qs, known, {true, 1});
    for (std::size_t i = 0; i < qs.size(); ++i) ASSERT_LE(fil[i], raw[i]);
    const auto a = eval::evaluate(scorer, qs, known, {true, 1});
    const auto b = eval::evaluate(scorer, qs, known, {true, 4});
    EXPECT_EQ(eval::format_tsv(a), eval::format_tsv(b));
  }
}

TEST(Aggregate, BreakdownsShareRanks) {
  const std::vector<double> ranks = {1.0, 2.0, 4.0, 1.5};
  const std::vector<MaskedPosition> masks = {MaskedPosition::head(), MaskedPosition::tail(), MaskedPosition::value(0),
                                             MaskedPosition::value(1)};
  const auto m = eval::aggregate(ranks, masks);
  EXPECT_EQ(m.ht.count, 2u);
  EXPECT_EQ(m.v.count, 2u);
  EXPECT_DOUBLE_EQ(m.mrr_ht(), 0.75);
  EXPECT_DOUBLE_EQ(m.v.mrr, (0.25 + 1.0 / 1.5) / 2);
  EXPECT_DOUBLE_EQ(m.mrr_all(), (1.0 + 0.5 + 0.25 + 1.0 / 1.5) / 4);
  EXPECT_DOUBLE_EQ(m.all.hits1, 0.25);
  EXPECT_DOUBLE_EQ(m.all.hits3, 0.75);
  EXPECT_DOUBLE_EQ(m.all.hits10, 1.0);
  EXPECT_THROW(eval::aggregate(ranks, std::span<const MaskedPosition>(masks).first(2)), ShapeError);
}

TEST(Format, TableAndTsv) {
  const std::vector<double> ranks = {1.0, 2.0};
  const std::vector<MaskedPosition> masks = {MaskedPosition::head(), MaskedPosition::value(0)};
  const auto m = eval::aggregate(ranks, masks);
  const auto tsv = eval::format_tsv(m);
  EXPECT_NE(tsv.find("mrr\tH/T\t1\n"), std::string::npos);
  EXPECT_NE(tsv.find("mrr\tV\t0.5\n"), std::string::npos);
  EXPECT_NE(tsv.find("mrr\tALL\t0.75\n"), std::string::npos);
  EXPECT_NE(tsv.find("count\tALL\t2\n"), std::string::npos);
  const auto table = eval::format_table(m);
  EXPECT_NE(table.find("ALL"), std::string::npos);
  EXPECT_NE(table.find("0.7500"), std::string::npos);
}
