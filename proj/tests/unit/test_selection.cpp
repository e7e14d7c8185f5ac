#include <gtest/gtest.h>

#include "bestn/error.hpp"
#include "bestn/selection.hpp"
#include "oracles.hpp"
#include "unit/test_util.hpp"

using namespace bestn;
using namespace bestn::test;

namespace {

ProblemGroup group_of(const std::vector<std::string>& answers, const std::vector<int>& labels = {}) {
    ProblemGroup g{"g", {}};
    for (std::size_t i = 0; i < answers.size(); ++i) {
        RolloutTrace r;
        r.problem_id = "g";
        r.rollout_id = i;
        r.final_answer = answers[i];
        r.label = labels.empty() ? 0 : labels[i];
        g.rollouts.push_back(r);
    }
    return g;
}

}  // namespace

TEST(Canonicalize, NormalizesWrappersCaseAndNumbers) {
    EXPECT_EQ(canonicalize_answer("  Foo "), "foo");
    EXPECT_EQ(canonicalize_answer("$42$"), "42");
    EXPECT_EQ(canonicalize_answer("{ $X$ }"), "x");
    EXPECT_EQ(canonicalize_answer("3.0"), "3");
    EXPECT_EQ(canonicalize_answer("+3"), "3");
    EXPECT_EQ(canonicalize_answer("-0"), "0");
    EXPECT_EQ(canonicalize_answer("0.5"), canonicalize_answer(".50"));
    EXPECT_EQ(canonicalize_answer("1e3"), "1000");
    EXPECT_EQ(canonicalize_answer("nan"), "nan");
    EXPECT_EQ(canonicalize_answer("x+1"), "x+1");
}

TEST(Canonicalize, IsIdempotent) {
    for (const char* a : {" $ {A} $ ", "3.000", "{{}}", "$", "  ", "1/2", "-7.25", "{$1e-3$}", "INF"}) {
        const auto once = canonicalize_answer(a);
        EXPECT_EQ(canonicalize_answer(once), once) << a;
    }
}

TEST(BestOfN, Examples) {
    const auto g = group_of({"a", "b", "c"});
    EXPECT_EQ(best_of_n(g, std::vector<double>{0.1, 0.8, 0.3}, Direction::HigherBetter).chosen_rollout_id, 1u);
    EXPECT_EQ(best_of_n(g, std::vector<double>{0.5, 0.5, 0.5}, Direction::HigherBetter).chosen_rollout_id, 0u);
    EXPECT_EQ(best_of_n(g, std::vector<double>{0.5, 0.5, 0.5}, Direction::LowerBetter).chosen_rollout_id, 0u);
    EXPECT_THROW(best_of_n(g, std::vector<double>{0.1}, Direction::HigherBetter), UsageError);
}

TEST(BestOfN, TieGoesToLowestRolloutIdNotPosition) {
    auto g = group_of({"a", "b", "c"});
    g.rollouts[0].rollout_id = 9;
    g.rollouts[1].rollout_id = 4;
    g.rollouts[2].rollout_id = 6;
    EXPECT_EQ(best_of_n(g, std::vector<double>{1, 1, 1}, Direction::HigherBetter).chosen_rollout_id, 4u);
}

TEST(BestOfN, MatchesLinearScanAndIsMonotoneInvariant) {
    Rng rng(8);
    const auto g = group_of(std::vector<std::string>(16, "x"));
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> s(16);
        for (auto& x : s) x = static_cast<double>(uniform_index(rng, 8)) / 8.0;  // forces ties
        std::size_t best = 0;
        for (std::size_t i = 1; i < s.size(); ++i) {
            if (s[i] > s[best]) best = i;
        }
        const auto res = best_of_n(g, s, Direction::HigherBetter);
        EXPECT_EQ(res.chosen_index, best);
        std::vector<double> t(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) t[i] = std::exp(3.0 * s[i]) - 7.0;
        EXPECT_EQ(best_of_n(g, t, Direction::HigherBetter).chosen_index, best);
    }
}

TEST(WeightedVote, Examples) {
    const auto g = group_of({"A", "B", "B"});
    const auto res = weighted_majority_vote(g, std::vector<double>{0.9, 0.2, 0.3});
    EXPECT_EQ(res.selected_answer, "a");
    EXPECT_EQ(res.chosen_rollout_id, 0u);
    const auto tally = tally_votes(g, std::vector<double>{0.9, 0.2, 0.3});
    EXPECT_DOUBLE_EQ(tally.at("a"), 0.9);
    EXPECT_DOUBLE_EQ(tally.at("b"), 0.5);

    const auto single = group_of({"7"});
    EXPECT_EQ(weighted_majority_vote(single, std::vector<double>{0.1}).selected_answer, "7");
}

TEST(WeightedVote, RepresentativeIsHighestScoredCarrier) {
    const auto g = group_of({"x", "y", "y", "y"});
    const auto res = weighted_majority_vote(g, std::vector<double>{0.9, 0.3, 0.5, 0.4});
    EXPECT_EQ(res.selected_answer, "y");
    EXPECT_EQ(res.chosen_rollout_id, 2u);
}

TEST(WeightedVote, MergesEquivalentSurfaceForms) {
    const auto g = group_of({"3", "$3$", "3.0", "4", "4"});
    EXPECT_EQ(weighted_majority_vote(g, std::vector<double>(5, 1.0)).selected_answer, "3");
}

TEST(WeightedVote, Refusals) {
    auto g = group_of({"a", "b"});
    EXPECT_THROW(weighted_majority_vote(g, std::vector<double>{-0.1, 1.0}), UsageError);
    g.rollouts[1].final_answer.reset();
    EXPECT_THROW(weighted_majority_vote(g, std::vector<double>{1.0, 1.0}), UsageError);
    EXPECT_THROW(majority_vote(g), UsageError);
}

TEST(MajorityVote, Examples) {
    EXPECT_EQ(majority_vote(group_of({"A", "A", "B"})).selected_answer, "a");
    EXPECT_EQ(majority_vote(group_of({"b", "a"})).selected_answer, "a");
    EXPECT_EQ(majority_vote(group_of({"b", "a"})).chosen_rollout_id, 1u);
}

TEST(MajorityVote, MatchesCountingOracleAndUnitWeightVote) {
    Rng rng(16);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<std::string> answers(16);
        for (auto& a : answers) a = std::string(1, static_cast<char>('a' + uniform_index(rng, 5)));
        const auto g = group_of(answers);
        const auto mv = majority_vote(g);
        EXPECT_EQ(mv.selected_answer, oracle::vote(answers, std::vector<double>(16, 1.0)));
        const auto wmv = weighted_majority_vote(g, std::vector<double>(16, 1.0));
        EXPECT_EQ(mv.selected_answer, wmv.selected_answer);
        EXPECT_EQ(mv.chosen_rollout_id, wmv.chosen_rollout_id);
    }
}

TEST(WeightedVote, MatchesTallyOracle) {
    Rng rng(61);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<std::string> answers(12);
        std::vector<double> w(12);
        for (auto& a : answers) a = std::to_string(uniform_index(rng, 4));
        for (auto& x : w) x = static_cast<double>(uniform_index(rng, 4)) * 0.25;  // ties happen
        EXPECT_EQ(weighted_majority_vote(group_of(answers), w).selected_answer, oracle::vote(answers, w));
    }
}

TEST(RandomSelect, DeterministicAndUniform) {
    const auto one = group_of({"a"});
    EXPECT_EQ(random_select(one, 5).chosen_rollout_id, 0u);
    const auto g = group_of({"a", "b", "c", "d"});
    EXPECT_EQ(random_select(g, 123).chosen_index, random_select(g, 123).chosen_index);
    std::vector<int> counts(4, 0);
    const int draws = 10000;
    for (int s = 0; s < draws; ++s) ++counts[random_select(g, static_cast<std::uint64_t>(s)).chosen_index];
    for (int c : counts) EXPECT_NEAR(static_cast<double>(c) / draws, 0.25, 0.02);
}

TEST(OracleHit, IsLogicalOr) {
    EXPECT_EQ(oracle_hit(group_of({"a", "b", "c"}, {0, 0, 1})), 1);
    EXPECT_EQ(oracle_hit(group_of({"a", "b", "c"}, {0, 0, 0})), 0);
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<int> labels(1 + uniform_index(rng, 8));
        bool any = false;
        for (auto& y : labels) {
            y = uniform01(rng) < 0.15;
            any = any || y;
        }
        EXPECT_EQ(oracle_hit(group_of(std::vector<std::string>(labels.size(), "a"), labels)), any ? 1 : 0);
    }
}

TEST(AnswerIsCorrect, ChecksLabelledCarriers) {
    const auto g = group_of({"5", "$5$", "6"}, {0, 1, 0});
    EXPECT_TRUE(answer_is_correct(g, "5"));
    EXPECT_FALSE(answer_is_correct(g, "6"));
}
