#include "bestn/selection.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "bestn/error.hpp"
#include "bestn/rng.hpp"

namespace bestn {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::optional<double> parse_number(std::string_view s) {
    if (s.empty()) return std::nullopt;
    std::string_view body = s;
    if (body.front() == '+') body.remove_prefix(1);
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), value);
    if (ec != std::errc() || ptr != body.data() + body.size() || !std::isfinite(value)) return std::nullopt;
    return value;
}

void check_sizes(const ProblemGroup& group, std::span<const double> scores) {
    if (group.rollouts.empty()) throw UsageError("empty group " + group.problem_id);
    if (scores.size() != group.rollouts.size()) {
        throw UsageError("group " + group.problem_id + " has " + std::to_string(group.rollouts.size()) +
                         " rollouts but " + std::to_string(scores.size()) + " scores");
    }
}

}  // namespace

std::string canonicalize_answer(std::string_view answer) {
    std::string s(trim(answer));
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    for (;;) {
        std::string_view v = trim(s);
        if (v.size() >= 2 && ((v.front() == '$' && v.back() == '$') || (v.front() == '{' && v.back() == '}'))) {
            v = v.substr(1, v.size() - 2);
            s = std::string(trim(v));
            continue;
        }
        s = std::string(v);
        break;
    }
    if (auto number = parse_number(s)) {
        double x = *number == 0.0 ? 0.0 : *number;
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.15g", x);
        return buf;
    }
    return s;
}

SelectionResult best_of_n(const ProblemGroup& group, std::span<const double> scores, Direction direction,
                          std::string strategy) {
    check_sizes(group, scores);
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        const bool better = direction == Direction::HigherBetter ? scores[i] > scores[best] : scores[i] < scores[best];
        const bool tie_lower_id = scores[i] == scores[best] && group.rollouts[i].rollout_id < group.rollouts[best].rollout_id;
        if (better || tie_lower_id) best = i;
    }
    SelectionResult result;
    result.problem_id = group.problem_id;
    result.chosen_index = best;
    result.chosen_rollout_id = group.rollouts[best].rollout_id;
    result.scores.assign(scores.begin(), scores.end());
    result.strategy = std::move(strategy);
    result.selected_answer = group.rollouts[best].final_answer;
    return result;
}

VoteTally tally_votes(const ProblemGroup& group, std::span<const double> scores) {
    check_sizes(group, scores);
    VoteTally tally;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const auto& r = group.rollouts[i];
        if (!r.final_answer) {
            throw UsageError("weighted majority vote needs final_answer; missing on (" + r.problem_id + ", " +
                             std::to_string(r.rollout_id) + ")");
        }
        if (!(scores[i] >= 0.0)) throw UsageError("vote weights must be non-negative");
        tally[canonicalize_answer(*r.final_answer)] += scores[i];
    }
    return tally;
}

SelectionResult weighted_majority_vote(const ProblemGroup& group, std::span<const double> scores,
                                       std::string strategy) {
    const VoteTally tally = tally_votes(group, scores);
    // std::map iterates in lexicographic order, so strict > keeps the
    // smallest answer on ties.
    auto winner = tally.begin();
    for (auto it = tally.begin(); it != tally.end(); ++it) {
        if (it->second > winner->second) winner = it;
    }
    std::optional<std::size_t> rep;
    for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
        if (canonicalize_answer(*group.rollouts[i].final_answer) != winner->first) continue;
        if (!rep || scores[i] > scores[*rep] ||
            (scores[i] == scores[*rep] && group.rollouts[i].rollout_id < group.rollouts[*rep].rollout_id)) {
            rep = i;
        }
    }
    SelectionResult result;
    result.problem_id = group.problem_id;
    result.chosen_index = *rep;
    result.chosen_rollout_id = group.rollouts[*rep].rollout_id;
    result.scores.assign(scores.begin(), scores.end());
    result.strategy = std::move(strategy);
    result.selected_answer = winner->first;
    return result;
}

SelectionResult majority_vote(const ProblemGroup& group) {
    if (group.rollouts.empty()) throw UsageError("empty group " + group.problem_id);
    std::map<std::string, std::size_t> counts;
    std::map<std::string, std::size_t> first;  // lowest-id rollout per answer
    for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
        const auto& r = group.rollouts[i];
        if (!r.final_answer) {
            throw UsageError("majority vote needs final_answer; missing on (" + r.problem_id + ", " +
                             std::to_string(r.rollout_id) + ")");
        }
        const auto a = canonicalize_answer(*r.final_answer);
        ++counts[a];
        auto [it, inserted] = first.emplace(a, i);
        if (!inserted && r.rollout_id < group.rollouts[it->second].rollout_id) it->second = i;
    }
    std::string best;
    std::size_t best_count = 0;
    for (const auto& [answer, n] : counts) {
        if (n > best_count) {
            best = answer;
            best_count = n;
        }
    }
    SelectionResult result;
    result.problem_id = group.problem_id;
    result.chosen_index = first.at(best);
    result.chosen_rollout_id = group.rollouts[result.chosen_index].rollout_id;
    result.scores.assign(group.rollouts.size(), 1.0);
    result.strategy = "mv";
    result.selected_answer = best;
    return result;
}

SelectionResult random_select(const ProblemGroup& group, std::uint64_t seed) {
    if (group.rollouts.empty()) throw UsageError("empty group " + group.problem_id);
    Rng rng(derive_seed(seed, group.problem_id));
    const std::size_t pick = uniform_index(rng, group.rollouts.size());
    SelectionResult result;
    result.problem_id = group.problem_id;
    result.chosen_index = pick;
    result.chosen_rollout_id = group.rollouts[pick].rollout_id;
    result.scores.assign(group.rollouts.size(), 0.0);
    result.scores[pick] = 1.0;
    result.strategy = "random";
    result.selected_answer = group.rollouts[pick].final_answer;
    return result;
}

int oracle_hit(const ProblemGroup& group) {
    return std::any_of(group.rollouts.begin(), group.rollouts.end(), [](const RolloutTrace& r) { return r.label == 1; })
               ? 1
               : 0;
}

bool answer_is_correct(const ProblemGroup& group, const std::string& canonical_answer) {
    for (const auto& r : group.rollouts) {
        if (r.label == 1 && r.final_answer && canonicalize_answer(*r.final_answer) == canonical_answer) return true;
    }
    return false;
}

}  // namespace bestn
