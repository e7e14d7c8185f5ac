#pragma once

// Experiment harness: accuracy against rollout budget under repeated
// subsampling, mean and std over seeds x calibration sets, deltas and
// gap-closed figures against a baseline, and the layer / calibration-size
// ablations.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bestn/confidence.hpp"
#include "bestn/kv_config.hpp"
#include "bestn/scorer.hpp"
#include "bestn/selection.hpp"

namespace bestn {

enum class StrategyKind { ExternalScores, WeightedVote, MajorityVote, Random, Oracle, Confidence, Scorer };

// Parsed strategy identifier: bon, wmv, mv, random, oracle, scatr,
// confidence:<signal>:<aggregation>.
struct Strategy {
    StrategyKind kind = StrategyKind::Random;
    std::string id;
    TokenSignal signal = TokenSignal::MeanNegLog;
    Aggregation aggregation;

    bool needs_scorer() const { return kind == StrategyKind::Scorer || kind == StrategyKind::WeightedVote; }
    // Learned or externally scored methods are never "the best baseline".
    bool is_baseline() const;
};

Strategy parse_strategy(std::string_view id, const AggregationDefaults& defaults = {});

// Per-rollout scores keyed by (problem_id, rollout_id), as read from a
// "problem_id<TAB>rollout_id<TAB>score" file for the `bon` strategy.
using ExternalScores = std::map<std::pair<std::string, std::uint64_t>, double>;
ExternalScores read_external_scores(const std::filesystem::path& path);

// A dataset stripped to what selection needs (ids, labels, answers) plus
// the strategy's score for every rollout, computed once.
struct PreparedStrategy {
    Strategy strategy;
    Dataset skeleton;
    std::vector<std::vector<double>> scores;  // [group][rollout], empty if unused
};

PreparedStrategy prepare_strategy(const Strategy& strategy, const Dataset& dataset,
                                  const RolloutScorer* scorer = nullptr, const ExternalScores* external = nullptr);

// Selection on the full groups, one result per problem.
std::vector<SelectionResult> select_all(const PreparedStrategy& prepared, std::uint64_t seed);

// Whether the strategy's pick on `group` counts as correct: label of the
// chosen rollout for score-based strategies, the voted answer matching a
// label-1 rollout of the same group for votes, any label-1 for oracle.
int selection_correct(const PreparedStrategy& prepared, std::size_t group_index, const std::vector<std::size_t>& subset,
                      std::uint64_t seed);

// Indices of the N rollouts drawn without replacement for one repetition;
// identical for every strategy. Sorted ascending.
std::vector<std::size_t> draw_subset(const ProblemGroup& group, std::size_t n, std::uint64_t seed, std::size_t repetition);

inline constexpr std::size_t kDefaultRepetitions = 32;

// Mean over `repetitions` draws of the mean per-problem correctness.
// Throws UsageError when n is zero or exceeds a group's size.
double accuracy_at_n(const PreparedStrategy& prepared, std::size_t n, std::uint64_t seed,
                     std::size_t repetitions = kDefaultRepetitions);

// 100 * (method - best_baseline) / (oracle - best_baseline); nullopt when
// the denominator is zero.
std::optional<double> gap_closed(double method, double best_baseline, double oracle);
double delta_accuracy(double method, double best_baseline);

struct ScorerTraining {
    enum class Mode { Single, BestLayer, Ensemble };
    Mode mode = Mode::Single;
    std::vector<std::string> layers = {"penultimate"};
    ScorerSpec spec;
    TrainOptions options;
    std::size_t search_configs = 0;  // > 0: random search per scorer (Single only)
};

struct EvalConfig {
    std::vector<std::string> strategies = {"random", "oracle", "mv", "scatr"};
    std::vector<std::size_t> budgets = {4, 8, 12, 16};
    std::size_t repetitions = kDefaultRepetitions;
    std::vector<std::uint64_t> seeds = {32, 42, 52};
    std::vector<std::string> calibration_sets = {"cal1", "cal2", "cal3"};
    double calibration_fraction = 0.8;  // of the calibration pool per set; id "all" takes everything
    std::string baseline = "best";      // strategy id, or best non-learned strategy per budget
    AggregationDefaults aggregation;
    ScorerTraining training;
    std::vector<double> ablation_fractions = {0.10, 0.25, 0.50, 1.00};
    std::size_t threads = 1;

    void validate() const;  // throws UsageError
};

// Every key is optional; unknown keys are rejected. Keys not belonging to
// the harness (dataset, calibration, scorer_path, bon_scores) are left
// for the caller and returned in `extras`.
EvalConfig eval_config_from(const KvConfig& kv, std::map<std::string, std::string>* extras = nullptr);
ScorerSpec scorer_spec_from(const KvConfig& kv, ScorerSpec base = {});

// Trained scorers keyed by (seed, calibration set id).
using ScorerKey = std::pair<std::uint64_t, std::string>;
using ScorerBank = std::map<ScorerKey, std::shared_ptr<const RolloutScorer>>;

// Problem subset for calibration set `id`: the first ceil(fraction * m)
// problems of a permutation seeded by the id; "all" keeps the pool.
Dataset calibration_subset(const Dataset& pool, const std::string& id, double fraction);

// First ceil(fraction * m) problems of a seed-determined permutation, so
// smaller fractions are nested inside larger ones.
Dataset subsample_problems(const Dataset& dataset, double fraction, std::uint64_t seed);

std::shared_ptr<const RolloutScorer> train_scorer(const Dataset& calibration, const ScorerTraining& training,
                                                  std::uint64_t seed, std::size_t threads = 1);

// One scorer per (seed, calibration set). `fraction` < 1 further subsamples
// each calibration set's problems.
ScorerBank train_scorer_bank(const Dataset& pool, const EvalConfig& config, double fraction = 1.0);

// Same scorer for every key.
ScorerBank uniform_bank(const EvalConfig& config, std::shared_ptr<const RolloutScorer> scorer);

struct CellStats {
    std::string strategy;
    std::size_t n = 0;
    std::vector<double> runs;  // one per (seed, calibration set), seed-major
    double mean = 0.0;
    double std = 0.0;  // population std over runs
    std::optional<double> delta;       // points vs the baseline
    std::optional<double> gap_closed;  // percent
};

struct EvalReport {
    std::vector<CellStats> cells;  // sorted by (strategy, n)
    std::map<std::string, std::string> metadata;

    const CellStats& cell(const std::string& strategy, std::size_t n) const;  // throws UsageError
};

// Crosses strategies x budgets x seeds x calibration sets. Throws
// UsageError when a scorer-based strategy has no scorer for some key, and
// DomainError if any run puts a strategy above the oracle.
EvalReport run_suite(const EvalConfig& config, const Dataset& dataset, const ScorerBank& scorers,
                     const ExternalScores* external = nullptr);

// Per-tag reports: scorers trained on that layer alone.
std::map<std::string, EvalReport> ablate_layers(const Dataset& dataset, const Dataset& calibration_pool,
                                                const std::vector<std::string>& layer_tags,
                                                const EvalConfig& config);

// Per-fraction reports; the calibration problem count at each fraction is
// recorded in the report metadata under "calibration_problems".
std::map<double, EvalReport> ablate_calibration_fraction(const Dataset& dataset, const Dataset& calibration_pool,
                                                         const std::vector<double>& fractions,
                                                         const EvalConfig& config);

// Tab-separated, '#'-prefixed metadata lines then one row per cell, fixed
// six-decimal formatting so reruns are byte-identical.
std::string format_report_tsv(const EvalReport& report);
std::string format_report_csv(const EvalReport& report);
// Several reports in one table with a leading key column.
std::string format_keyed_reports_tsv(const std::string& key_name,
                                     const std::vector<std::pair<std::string, const EvalReport*>>& reports);

}  // namespace bestn
