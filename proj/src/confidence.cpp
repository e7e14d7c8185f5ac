#include "bestn/confidence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bestn/error.hpp"

namespace bestn {

Direction direction_of(TokenSignal signal) {
    return signal == TokenSignal::ShannonEntropy ? Direction::LowerBetter : Direction::HigherBetter;
}

std::string_view signal_name(TokenSignal signal) {
    switch (signal) {
        case TokenSignal::MeanNegLog: return "mean";
        case TokenSignal::MedianLog: return "median";
        case TokenSignal::VarianceLog: return "variance";
        case TokenSignal::ProbabilityGap: return "gap";
        case TokenSignal::ShannonEntropy: return "entropy";
    }
    return "?";
}

TokenSignal parse_signal(std::string_view name) {
    for (auto s : kAllSignals) {
        if (signal_name(s) == name) return s;
    }
    throw UsageError("unknown confidence signal '" + std::string(name) + "'");
}

std::string_view aggregation_name(Aggregation::Kind kind) {
    switch (kind) {
        case Aggregation::Kind::FullAverage: return "full";
        case Aggregation::Kind::Tail: return "tail";
        case Aggregation::Kind::LowestGroup: return "lowest-group";
        case Aggregation::Kind::BottomGroups: return "bottom-groups";
    }
    return "?";
}

Aggregation parse_aggregation(std::string_view name, const AggregationDefaults& params) {
    Aggregation agg;
    if (name == "full") {
        agg = Aggregation::full();
    } else if (name == "tail") {
        agg = Aggregation::tail(params.tail_len);
    } else if (name == "lowest-group") {
        agg = Aggregation::lowest_group(params.group_window);
    } else if (name == "bottom-groups") {
        agg = Aggregation::bottom_groups(params.group_window, params.bottom_frac);
    } else {
        throw UsageError("unknown aggregation '" + std::string(name) + "'");
    }
    agg.validate();
    return agg;
}

void Aggregation::validate() const {
    if (kind == Kind::FullAverage) return;
    if (length == 0) throw UsageError("aggregation length must be positive");
    if (kind == Kind::BottomGroups && !(fraction > 0.0 && fraction <= 1.0)) {
        throw UsageError("bottom-groups fraction must lie in (0, 1]");
    }
}

std::vector<double> renormalized_topk(TokenTopK token) {
    if (token.empty()) throw UsageError("empty top-k row");
    const double top = *std::max_element(token.begin(), token.end());
    double z = 0.0;
    for (float l : token) z += std::exp(static_cast<double>(l) - top);
    std::vector<double> p(token.size());
    for (std::size_t j = 0; j < token.size(); ++j) p[j] = std::exp(static_cast<double>(token[j]) - top) / z;
    return p;
}

double token_signal(TokenTopK token, TokenSignal signal) {
    const std::size_t k = token.size();
    if (k == 0) throw UsageError("empty top-k row");
    switch (signal) {
        case TokenSignal::MeanNegLog: {
            double sum = 0.0;
            for (float l : token) sum += l;
            return -sum / static_cast<double>(k);
        }
        case TokenSignal::MedianLog: {
            std::vector<double> v(token.begin(), token.end());
            std::sort(v.begin(), v.end());
            return k % 2 == 1 ? v[k / 2] : 0.5 * (v[k / 2 - 1] + v[k / 2]);
        }
        case TokenSignal::VarianceLog: {
            double mean = 0.0;
            for (float l : token) mean += l;
            mean /= static_cast<double>(k);
            double ss = 0.0;
            for (float l : token) ss += (l - mean) * (l - mean);
            return ss / static_cast<double>(k);
        }
        case TokenSignal::ProbabilityGap: {
            if (k < 2) throw UsageError("probability gap needs k >= 2");
            return std::exp(static_cast<double>(token[0])) - std::exp(static_cast<double>(token[1]));
        }
        case TokenSignal::ShannonEntropy: {
            const double top = *std::max_element(token.begin(), token.end());
            double z = 0.0;
            for (float l : token) z += std::exp(static_cast<double>(l) - top);
            const double log_z = std::log(z) + top;
            double h = 0.0;
            for (float l : token) {
                const double log_p = static_cast<double>(l) - log_z;
                h -= std::exp(log_p) * log_p;
            }
            return std::max(h, 0.0);
        }
    }
    return 0.0;
}

std::vector<double> token_signals(const RolloutTrace& trace, TokenSignal signal) {
    std::vector<double> out(trace.token_count());
    for (std::size_t t = 0; t < out.size(); ++t) out[t] = token_signal(trace.token(t), signal);
    return out;
}

std::vector<double> sliding_window_means(std::span<const double> values, std::size_t window) {
    if (values.empty()) throw UsageError("cannot aggregate an empty sequence");
    if (window == 0) throw UsageError("window must be positive");
    const std::size_t n = values.size();
    const std::size_t w = std::min(window, n);
    std::vector<double> prefix(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + values[i];
    std::vector<double> means(n - w + 1);
    for (std::size_t s = 0; s < means.size(); ++s) {
        means[s] = (prefix[s + w] - prefix[s]) / static_cast<double>(w);
    }
    return means;
}

std::size_t bottom_group_count(std::size_t groups, double fraction) {
    // The small slack keeps products such as 0.1 * 30 from rounding up.
    const double x = fraction * static_cast<double>(groups);
    auto n = static_cast<std::size_t>(std::ceil(x - 1e-9 * std::max(1.0, x)));
    return std::clamp<std::size_t>(n, 1, groups);
}

double aggregate(std::span<const double> values, const Aggregation& agg) {
    if (values.empty()) throw UsageError("cannot aggregate an empty sequence");
    agg.validate();
    const std::size_t n = values.size();
    switch (agg.kind) {
        case Aggregation::Kind::FullAverage:
            return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
        case Aggregation::Kind::Tail: {
            const std::size_t len = std::min(agg.length, n);
            return std::accumulate(values.end() - static_cast<std::ptrdiff_t>(len), values.end(), 0.0) /
                   static_cast<double>(len);
        }
        case Aggregation::Kind::LowestGroup: {
            const auto means = sliding_window_means(values, agg.length);
            return *std::min_element(means.begin(), means.end());
        }
        case Aggregation::Kind::BottomGroups: {
            const std::size_t w = std::min(agg.length, n);
            const auto means = sliding_window_means(values, w);
            const std::size_t keep = bottom_group_count(means.size(), agg.fraction);
            std::vector<std::size_t> order(means.size());
            std::iota(order.begin(), order.end(), 0);
            auto by_mean = [&](std::size_t a, std::size_t b) {
                return means[a] < means[b] || (means[a] == means[b] && a < b);
            };
            std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep - 1), order.end(),
                             by_mean);
            // Token coverage of the selected windows via a difference array;
            // each token counts once however many windows contain it.
            std::vector<int> diff(n + 1, 0);
            for (std::size_t i = 0; i < keep; ++i) {
                ++diff[order[i]];
                --diff[order[i] + w];
            }
            double sum = 0.0;
            std::size_t covered = 0;
            int depth = 0;
            for (std::size_t t = 0; t < n; ++t) {
                depth += diff[t];
                if (depth > 0) {
                    sum += values[t];
                    ++covered;
                }
            }
            return sum / static_cast<double>(covered);
        }
    }
    return 0.0;
}

ConfidenceScore score_rollout(const RolloutTrace& trace, TokenSignal signal, const Aggregation& agg) {
    if (trace.token_count() == 0) {
        throw UsageError("rollout (" + trace.problem_id + ", " + std::to_string(trace.rollout_id) + ") has no tokens");
    }
    const auto values = token_signals(trace, signal);
    return ConfidenceScore{aggregate(values, agg), signal, agg, direction_of(signal)};
}

SelectionResult confidence_select(const ProblemGroup& group, TokenSignal signal, const Aggregation& agg) {
    std::vector<double> scores;
    scores.reserve(group.rollouts.size());
    for (const auto& r : group.rollouts) scores.push_back(score_rollout(r, signal, agg).value);
    return best_of_n(group, scores, direction_of(signal), confidence_strategy_id(signal, agg));
}

std::string confidence_strategy_id(TokenSignal signal, const Aggregation& agg) {
    return "confidence:" + std::string(signal_name(signal)) + ":" + std::string(aggregation_name(agg.kind));
}

}  // namespace bestn
