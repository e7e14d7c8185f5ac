#pragma once

// Best-of-N and voting strategies that turn per-rollout scores into one
// answer per problem. All tie-breaks are deterministic: lowest rollout_id for
// score ties, lexicographically smallest canonical answer for vote ties.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bestn/trace_store.hpp"

namespace bestn {

enum class Direction { HigherBetter, LowerBetter };

struct SelectionResult {
    std::string problem_id;
    std::uint64_t chosen_rollout_id = 0;
    std::size_t chosen_index = 0;  // position within the group's rollouts
    std::vector<double> scores;    // one per rollout, group order
    std::string strategy;
    std::optional<std::string> selected_answer;
};

// Accumulated weight S(a) per canonical answer.
using VoteTally = std::map<std::string, double>;

// Trims whitespace, case-folds, strips surrounding `$...$` and `{...}` pairs
// until none remain, and rewrites strings that parse as finite numbers into
// a shortest stable decimal form ("3.0" and "3" both become "3").
// Idempotent.
std::string canonicalize_answer(std::string_view answer);

// Arg-extremum over `scores` per `direction`; ties go to the lowest
// rollout_id. Throws UsageError on length mismatch or an empty group.
SelectionResult best_of_n(const ProblemGroup& group, std::span<const double> scores, Direction direction,
                          std::string strategy = "bon");

VoteTally tally_votes(const ProblemGroup& group, std::span<const double> scores);

// Picks a* = argmax_a S(a) (ties: smallest canonical answer). The returned
// rollout is the highest-scored rollout carrying a*, lowest id on ties.
// Throws UsageError if any rollout lacks final_answer or scores are negative.
SelectionResult weighted_majority_vote(const ProblemGroup& group, std::span<const double> scores,
                                       std::string strategy = "wmv");

// Plain vote counting; behaves exactly like weighted_majority_vote with unit
// scores but is computed with integer counts.
SelectionResult majority_vote(const ProblemGroup& group);

// Uniform choice, deterministic per (seed, problem_id).
SelectionResult random_select(const ProblemGroup& group, std::uint64_t seed);

// 1 iff any rollout is labeled correct.
int oracle_hit(const ProblemGroup& group);

// For vote strategies: the answer counts as correct when it matches the
// canonical answer of some label-1 rollout in the group.
bool answer_is_correct(const ProblemGroup& group, const std::string& canonical_answer);

}  // namespace bestn
