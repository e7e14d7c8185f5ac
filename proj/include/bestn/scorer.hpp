#pragma once

// Learned correctness scorer: a shallow MLP over one layer's final-token
// embedding, trained on a labeled calibration set with class-weighted
// cross-entropy, plus the random hyperparameter search and the two
// multi-layer variants (best single layer, convex ensemble).

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bestn/mlp.hpp"
#include "bestn/rng.hpp"
#include "bestn/trace_store.hpp"

namespace bestn {

inline constexpr double kProbabilityClamp = 1e-12;

// Searched hidden-layer shapes.
inline const std::vector<std::vector<std::size_t>> kHiddenDimChoices = {
    {512, 256}, {512, 256, 128}, {1024, 512}, {1024, 512, 256}};

struct ScorerSpec {
    std::size_t input_dim = 0;  // 0: take from the data at training time
    std::vector<std::size_t> hidden_dims = {512, 256};
    double dropout = 0.1;
    double input_dropout = 0.0;
    bool use_batch_norm = false;
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    std::size_t batch_size = 64;
    std::uint64_t seed = 42;
    bool standardize = false;  // per-dimension z-scoring of embeddings

    void validate() const;  // throws UsageError
    MlpShape shape() const { return {input_dim, hidden_dims, use_batch_norm}; }
    bool operator==(const ScorerSpec&) const = default;
};

struct TrainOptions {
    std::size_t max_epochs = 100;
    std::size_t early_stopping_patience = 10;
    // The rate is scaled by lr_factor on the lr_patience-th consecutive epoch
    // without a strict improvement, then the count restarts.
    std::size_t lr_patience = 3;
    double lr_factor = 0.5;
    double clip_norm = 1.0;
    // Seed of the 75/25 problem split; defaults to spec.seed. Search and
    // layer comparisons pin it so every candidate sees the same split.
    std::optional<std::uint64_t> split_seed;
};

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double learning_rate = 0.0;  // rate used during this epoch
    double best_val_loss = 0.0;  // best so far, including this epoch
    bool improved = false;
};

// Anything that maps a rollout to a correctness score in [0, 1].
class RolloutScorer {
public:
    virtual ~RolloutScorer() = default;
    virtual double score(const RolloutTrace& rollout) const = 0;
    virtual std::string describe() const = 0;
    std::vector<double> score_group(const ProblemGroup& group) const;
};

class TrainedScorer : public RolloutScorer {
public:
    ScorerSpec spec;
    Mlp network;
    std::vector<double> feature_mean;   // empty unless spec.standardize
    std::vector<double> feature_scale;  // 1 / std per dimension
    std::vector<EpochLog> training_log;
    double best_val_loss = 0.0;
    std::size_t best_epoch = 0;
    std::string layer_tag;

    std::span<const double> weights() const { return network.params(); }

    // f(e) = sigmoid(logit) in inference mode. Throws UsageError on a
    // dimension mismatch.
    double predict(std::span<const float> embedding) const;
    std::vector<double> predict_batch(const std::vector<const std::vector<float>*>& embeddings) const;

    double score(const RolloutTrace& rollout) const override;
    std::string describe() const override;
};

class EnsembleScorer : public RolloutScorer {
public:
    std::vector<TrainedScorer> members;  // one per layer
    std::vector<double> alphas;          // convex weights, same order

    double predict(const RolloutTrace& rollout) const;
    double score(const RolloutTrace& rollout) const override { return predict(rollout); }
    std::string describe() const override;
};

struct CalibrationSplit {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
};

// -w*y*log(p) - (1-y)*log(1-p) with p clamped to [1e-12, 1-1e-12].
// Throws UsageError unless w > 0.
double weighted_bce(double pred, int label, double pos_weight);

// Rescales `grad` in place so its L2 norm is at most max_norm; returns the
// norm before clipping.
double clip_global_norm(std::vector<double>& grad, double max_norm);

// N_neg / N_pos. Throws DomainError when either class is absent.
double class_weight(std::span<const int> labels);

// Deterministic 75/25 split of the distinct ids (train gets ceil(0.75 n),
// capped so validation keeps at least one). Throws UsageError for < 2 ids.
CalibrationSplit split_by_problem(std::span<const std::string> problem_ids, std::uint64_t seed);

TrainedScorer train(const Dataset& dataset, const std::string& layer_tag, const ScorerSpec& spec,
                    const TrainOptions& options = {});

// Draws one configuration from the search space.
ScorerSpec sample_spec(Rng& rng, std::size_t input_dim);

struct SearchCandidate {
    std::size_t index = 0;
    ScorerSpec spec;
    double best_val_loss = 0.0;
    std::size_t epochs = 0;
};

struct SearchResult {
    TrainedScorer best;
    std::size_t best_index = 0;
    std::vector<SearchCandidate> candidates;
};

// Candidate i uses sample_spec(Rng(derive_seed(master_seed, i))) with its own
// derived training seed; all candidates share the split seeded by
// master_seed. Lowest validation loss wins, ties to the lowest index.
// Candidates may train on up to `threads` workers; the result does not
// depend on the thread count.
SearchResult hyperparameter_search(const Dataset& dataset, const std::string& layer_tag, std::size_t n_configs,
                                   std::uint64_t master_seed, const TrainOptions& options = {},
                                   std::size_t threads = 1);
ScorerSpec search_candidate_spec(std::uint64_t master_seed, std::size_t index, std::size_t input_dim);

struct LayerSelection {
    TrainedScorer best;
    std::vector<TrainedScorer> members;  // one per tag, input order
    std::map<std::string, double> val_loss_by_layer;
};

// One scorer per tag under a shared split; returns the lowest-loss one.
LayerSelection train_best_layer(const Dataset& dataset, const std::vector<std::string>& layer_tags,
                                const ScorerSpec& spec, const TrainOptions& options = {});

// Per-layer scorers combined by softmax-parameterized convex weights fit to
// the validation loss of the mixed prediction.
EnsembleScorer train_ensemble(const Dataset& dataset, const std::vector<std::string>& layer_tags,
                              const ScorerSpec& spec, const TrainOptions& options = {});

// Convex combination of already trained per-layer scorers, weights fit on
// the validation side of the split seeded by `split_seed`.
EnsembleScorer combine_layers(const Dataset& dataset, std::vector<TrainedScorer> members, std::uint64_t split_seed);

// Fits convex weights to minimize mean weighted BCE of sum_t alpha_t p_t.
// `member_predictions[t][i]` is member t's prediction on example i.
std::vector<double> fit_convex_weights(const std::vector<std::vector<double>>& member_predictions,
                                       std::span<const int> labels, double pos_weight);

// Fraction of rollouts in `ids` whose thresholded prediction (>= 0.5)
// matches the label.
double classification_accuracy(const RolloutScorer& scorer, const Dataset& dataset,
                               std::span<const std::string> ids);

}  // namespace bestn
