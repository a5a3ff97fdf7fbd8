#include <gtest/gtest.h>

#include <random>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "prism/error.hpp"
#include "prism/fact_graph.hpp"

using namespace prism;

namespace {

std::vector<SentenceSpan> chain(std::vector<double> risks, std::size_t len = 3) {
  std::vector<SentenceSpan> s;
  for (std::size_t j = 0; j < risks.size(); ++j) {
    s.push_back({static_cast<SentenceId>(j + 1), j * len, (j + 1) * len, risks[j]});
  }
  return s;
}

}  // namespace

TEST(PropagateRisk, LowerPredecessorRiskChangesNothing) {
  auto g = propagate_risk(chain({0.2, 0.7}), std::vector<DependencyEdge>{{1, 2}});
  EXPECT_EQ(g.effective_risk, (std::vector<double>{0.2, 0.7}));
}

TEST(PropagateRisk, InheritsHigherPredecessorRisk) {
  auto g = propagate_risk(chain({0.7, 0.2}), std::vector<DependencyEdge>{{1, 2}});
  EXPECT_EQ(g.effective_risk, (std::vector<double>{0.7, 0.7}));
}

TEST(PropagateRisk, OneHopLeavesUnconnectedSentenceAlone) {
  auto g = propagate_risk(chain({0.9, 0.0, 0.0}), std::vector<DependencyEdge>{{1, 2}});
  EXPECT_EQ(g.effective_risk, (std::vector<double>{0.9, 0.9, 0.0}));
}

TEST(PropagateRisk, OneHopUsesRawPredecessorRisk) {
  const std::vector<DependencyEdge> edges{{1, 2}, {2, 3}};
  auto onehop = propagate_risk(chain({0.9, 0.0, 0.0}), edges);
  EXPECT_EQ(onehop.effective_risk, (std::vector<double>{0.9, 0.9, 0.0}));
  auto fix = propagate_risk(chain({0.9, 0.0, 0.0}), edges, RiskPropagation::fixpoint);
  EXPECT_EQ(fix.effective_risk, (std::vector<double>{0.9, 0.9, 0.9}));
}

TEST(PropagateRisk, MultiplePredecessorsTakeMaximum) {
  auto g = propagate_risk(chain({0.3, 0.8, 0.1, 0.5}),
                          std::vector<DependencyEdge>{{1, 4}, {2, 4}, {3, 4}});
  EXPECT_EQ(g.effective_risk[3], 0.8);
}

TEST(PropagateRisk, RejectsBadEdges) {
  const auto s = chain({0.1, 0.2, 0.3});
  EXPECT_THROW(propagate_risk(s, std::vector<DependencyEdge>{{2, 2}}), AnnotationError);
  EXPECT_THROW(propagate_risk(s, std::vector<DependencyEdge>{{3, 1}}), AnnotationError);
  EXPECT_THROW(propagate_risk(s, std::vector<DependencyEdge>{{1, 4}}), AnnotationError);
  EXPECT_THROW(propagate_risk(s, std::vector<DependencyEdge>{{0, 1}}), AnnotationError);
}

TEST(PropagateRisk, RejectsBadSentences) {
  EXPECT_THROW(propagate_risk(chain({1.7}), {}), AnnotationError);
  EXPECT_THROW(propagate_risk(chain({-0.1}), {}), AnnotationError);
  auto empty = chain({0.1});
  empty[0].token_end = empty[0].token_start;
  EXPECT_THROW(propagate_risk(empty, {}), AnnotationError);
  auto overlap = chain({0.1, 0.2});
  overlap[1].token_start = 1;
  EXPECT_THROW(propagate_risk(overlap, {}), AnnotationError);
  auto misnumbered = chain({0.1, 0.2});
  misnumbered[1].index = 5;
  EXPECT_THROW(propagate_risk(misnumbered, {}), AnnotationError);
}

TEST(PropagateRisk, ParsesModeNames) {
  EXPECT_EQ(parse_risk_propagation("onehop"), RiskPropagation::onehop);
  EXPECT_EQ(parse_risk_propagation("fixpoint"), RiskPropagation::fixpoint);
  EXPECT_THROW(parse_risk_propagation("transitive"), ConfigError);
}

TEST(PropagateRisk, MatchesFixpointOracle) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 500; ++i) {
    auto dag = fixture::random_dag(rng, 10);
    auto g = propagate_risk(dag.sentences, dag.edges, RiskPropagation::fixpoint);
    EXPECT_EQ(g.effective_risk, oracle::fixpoint_risk(dag.sentences, dag.edges));
  }
}

TEST(TokenSignals, ZeroRiskGivesUnitWeights) {
  auto g = propagate_risk(chain({0.0, 0.0}), {});
  std::vector<std::uint8_t> valid(6, 1);
  auto sig = derive_token_signals(g, std::vector<FactSpan>{{1, 1, 2, 1}}, valid, 6);
  EXPECT_EQ(sig.support_weight, std::vector<double>(6, 1.0));
}

TEST(TokenSignals, SentenceWeightAndSingleFactToken) {
  std::vector<SentenceSpan> s{{1, 3, 6, 0.7}};
  auto g = propagate_risk(s, {});
  std::vector<std::uint8_t> valid(8, 1);
  auto sig = derive_token_signals(g, std::vector<FactSpan>{{1, 4, 5, 1}}, valid, 8);
  EXPECT_EQ(sig.fact_mask, (std::vector<std::uint8_t>{0, 0, 0, 0, 1, 0, 0, 0}));
  for (std::size_t t = 3; t < 6; ++t) EXPECT_EQ(sig.support_weight[t], 1.0 - 0.7);
  EXPECT_EQ(sig.support_weight[0], 1.0);
  EXPECT_EQ(sig.support_weight[7], 1.0);
}

TEST(TokenSignals, OverlappingFactsUnion) {
  std::vector<SentenceSpan> s{{1, 0, 8, 0.4}};
  auto g = propagate_risk(s, {});
  std::vector<std::uint8_t> valid(8, 1);
  auto sig = derive_token_signals(g, std::vector<FactSpan>{{1, 3, 6, 1}, {2, 5, 7, 1}}, valid, 8);
  EXPECT_EQ(sig.fact_mask, (std::vector<std::uint8_t>{0, 0, 0, 1, 1, 1, 1, 0}));
}

TEST(TokenSignals, FactMaskRestrictedToValidPositions) {
  std::vector<SentenceSpan> s{{1, 0, 4, 0.5}};
  auto g = propagate_risk(s, {});
  std::vector<std::uint8_t> valid{1, 1, 0, 1};
  auto sig = derive_token_signals(g, std::vector<FactSpan>{{1, 1, 4, 1}}, valid, 4);
  EXPECT_EQ(sig.fact_mask, (std::vector<std::uint8_t>{0, 1, 0, 1}));
}

TEST(TokenSignals, RejectsFactOutsideOwner) {
  auto g = propagate_risk(chain({0.1, 0.2}), {});
  std::vector<std::uint8_t> valid(6, 1);
  EXPECT_THROW(derive_token_signals(g, std::vector<FactSpan>{{1, 2, 4, 1}}, valid, 6),
               AnnotationError);
  EXPECT_THROW(derive_token_signals(g, std::vector<FactSpan>{{1, 0, 1, 3}}, valid, 6),
               AnnotationError);
  EXPECT_THROW(derive_token_signals(g, {}, std::vector<std::uint8_t>(5, 1), 6), AnnotationError);
}

TEST(Segment, TwoPeriods) {
  std::vector<std::string> t{"Hi", ".", "Bye", "."};
  auto s = segment_sentences(t);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].token_start, 0u);
  EXPECT_EQ(s[0].token_end, 2u);
  EXPECT_EQ(s[1].token_start, 2u);
  EXPECT_EQ(s[1].token_end, 4u);
}

TEST(Segment, NoPunctuationIsOneSentence) {
  std::vector<std::string> t{"A", "B", "C"};
  auto s = segment_sentences(t);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].token_end, 3u);
}

TEST(Segment, QuestionThenPeriod) {
  std::vector<std::string> t{"Why", "?", "It", "is", "."};
  auto s = segment_sentences(t);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].token_end, 2u);
  EXPECT_EQ(s[1].token_start, 2u);
  EXPECT_EQ(s[1].token_end, 5u);
  EXPECT_EQ(s[1].index, 2u);
}

TEST(Segment, SentenceLookup) {
  std::vector<SentenceSpan> s{{1, 2, 4, 0.0}, {2, 5, 7, 0.0}};
  auto g = propagate_risk(s, {});
  EXPECT_FALSE(g.sentence_of(0).has_value());
  EXPECT_EQ(g.sentence_of(3), 0u);
  EXPECT_FALSE(g.sentence_of(4).has_value());
  EXPECT_EQ(g.sentence_of(5), 1u);
  EXPECT_FALSE(g.sentence_of(7).has_value());
}
