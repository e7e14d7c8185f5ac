#pragma once

// Token-level uncertainty signals over top-k log-probabilities and the
// trace-level aggregations used by confidence-based Best-of-N baselines.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bestn/selection.hpp"
#include "bestn/trace_store.hpp"

namespace bestn {

enum class TokenSignal { MeanNegLog, MedianLog, VarianceLog, ProbabilityGap, ShannonEntropy };

// Every signal is higher-is-better except ShannonEntropy.
Direction direction_of(TokenSignal signal);

// Stable CLI identifiers: mean, median, variance, gap, entropy.
std::string_view signal_name(TokenSignal signal);
TokenSignal parse_signal(std::string_view name);
inline constexpr TokenSignal kAllSignals[] = {TokenSignal::MeanNegLog, TokenSignal::MedianLog,
                                              TokenSignal::VarianceLog, TokenSignal::ProbabilityGap,
                                              TokenSignal::ShannonEntropy};

struct Aggregation {
    enum class Kind { FullAverage, Tail, LowestGroup, BottomGroups };

    Kind kind = Kind::FullAverage;
    std::size_t length = 0;  // tail length or group window, in tokens
    double fraction = 1.0;   // BottomGroups only

    static Aggregation full() { return {Kind::FullAverage, 0, 1.0}; }
    static Aggregation tail(std::size_t tail_len) { return {Kind::Tail, tail_len, 1.0}; }
    static Aggregation lowest_group(std::size_t window) { return {Kind::LowestGroup, window, 1.0}; }
    static Aggregation bottom_groups(std::size_t window, double fraction) {
        return {Kind::BottomGroups, window, fraction};
    }

    // Throws UsageError unless parameters are positive and fraction in (0, 1].
    void validate() const;
    bool operator==(const Aggregation&) const = default;
};

struct AggregationDefaults {
    std::size_t tail_len = 2048;
    std::size_t group_window = 1024;
    double bottom_frac = 0.10;
};

// Stable CLI identifiers: full, tail, lowest-group, bottom-groups.
std::string_view aggregation_name(Aggregation::Kind kind);
Aggregation parse_aggregation(std::string_view name, const AggregationDefaults& params = {});
inline constexpr Aggregation::Kind kAllAggregations[] = {Aggregation::Kind::FullAverage, Aggregation::Kind::Tail,
                                                         Aggregation::Kind::LowestGroup,
                                                         Aggregation::Kind::BottomGroups};

struct ConfidenceScore {
    double value = 0.0;
    TokenSignal signal = TokenSignal::MeanNegLog;
    Aggregation aggregation;
    Direction direction = Direction::HigherBetter;
};

// Top-k probabilities renormalized to sum to one.
std::vector<double> renormalized_topk(TokenTopK token);

// Throws UsageError for ProbabilityGap with k < 2 or an empty token.
double token_signal(TokenTopK token, TokenSignal signal);

std::vector<double> token_signals(const RolloutTrace& trace, TokenSignal signal);

// Means of every stride-1 window of width min(window, values.size()),
// computed from prefix sums in O(T).
std::vector<double> sliding_window_means(std::span<const double> values, std::size_t window);

// Number of windows BottomGroups keeps out of `groups`: ceil(fraction * groups),
// at least one.
std::size_t bottom_group_count(std::size_t groups, double fraction);

// Throws UsageError on empty input or invalid parameters. Sequences shorter
// than the tail or window fall back to the whole sequence.
double aggregate(std::span<const double> values, const Aggregation& agg);

ConfidenceScore score_rollout(const RolloutTrace& trace, TokenSignal signal, const Aggregation& agg);

// Best-of-N by confidence: argmax, or argmin for lower-is-better signals.
SelectionResult confidence_select(const ProblemGroup& group, TokenSignal signal, const Aggregation& agg);

// "confidence:<signal>:<agg>"
std::string confidence_strategy_id(TokenSignal signal, const Aggregation& agg);

}  // namespace bestn
