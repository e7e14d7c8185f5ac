#include "bestn/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "bestn/error.hpp"
#include "bestn/parallel.hpp"

namespace bestn {

namespace {

using Eigen::MatrixXd;

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Column-per-example design matrix for the rollouts of `ids`.
struct Examples {
    MatrixXd inputs;
    std::vector<double> labels;
    std::vector<int> int_labels;
};

Examples gather(const Dataset& dataset, const std::set<std::string>& ids, const std::string& layer_tag,
                std::size_t dim) {
    std::size_t n = 0;
    for (const auto& g : dataset) {
        if (ids.count(g.problem_id)) n += g.rollouts.size();
    }
    Examples ex;
    ex.inputs.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(n));
    ex.labels.reserve(n);
    Eigen::Index col = 0;
    for (const auto& g : dataset) {
        if (!ids.count(g.problem_id)) continue;
        for (const auto& r : g.rollouts) {
            const auto& e = r.embedding(layer_tag);
            if (e.size() != dim) throw UsageError("embedding dimension mismatch in layer " + layer_tag);
            for (std::size_t j = 0; j < dim; ++j) ex.inputs(static_cast<Eigen::Index>(j), col) = e[j];
            ex.labels.push_back(r.label);
            ex.int_labels.push_back(r.label);
            ++col;
        }
    }
    return ex;
}

void standardize_in_place(MatrixXd& x, const std::vector<double>& mean, const std::vector<double>& scale) {
    for (Eigen::Index j = 0; j < x.rows(); ++j) {
        x.row(j).array() = (x.row(j).array() - mean[static_cast<std::size_t>(j)]) * scale[static_cast<std::size_t>(j)];
    }
}

std::size_t embedding_dim(const Dataset& dataset, const std::string& layer_tag) {
    for (const auto& g : dataset) {
        for (const auto& r : g.rollouts) return r.embedding(layer_tag).size();
    }
    throw UsageError("cannot train on an empty dataset");
}

std::vector<std::string> problem_ids(const Dataset& dataset) {
    std::vector<std::string> ids;
    ids.reserve(dataset.size());
    for (const auto& g : dataset) ids.push_back(g.problem_id);
    return ids;
}

// Mean weighted logistic loss in inference mode.
double validation_loss(const TrainedScorer& s, const MatrixXd& inputs, const std::vector<double>& labels,
                       double pos_weight) {
    const Eigen::VectorXd z = s.network.logits(inputs);
    double total = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        const double y = labels[static_cast<std::size_t>(i)];
        const double p = sigmoid(z(i));
        total += weighted_bce(p, static_cast<int>(y), pos_weight);
    }
    return total / static_cast<double>(z.size());
}

struct Adam {
    explicit Adam(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

    void step(std::span<double> params, std::span<const double> grad, double lr, double weight_decay) {
        ++t;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = grad[i] + weight_decay * params[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }

    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double eps = 1e-8;
    std::vector<double> m;
    std::vector<double> v;
    std::size_t t = 0;
};

}  // namespace

double clip_global_norm(std::vector<double>& grad, double max_norm) {
    double sq = 0.0;
    for (double g : grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (double& g : grad) g *= scale;
    }
    return norm;
}

void ScorerSpec::validate() const {
    if (hidden_dims.empty()) throw UsageError("hidden_dims must not be empty");
    for (auto h : hidden_dims) {
        if (h == 0) throw UsageError("hidden widths must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw UsageError("dropout must lie in [0, 1)");
    if (!(input_dropout >= 0.0 && input_dropout < 1.0)) throw UsageError("input_dropout must lie in [0, 1)");
    if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be positive");
    if (!(weight_decay >= 0.0)) throw UsageError("weight_decay must be non-negative");
    if (batch_size == 0) throw UsageError("batch_size must be positive");
}

std::vector<double> RolloutScorer::score_group(const ProblemGroup& group) const {
    std::vector<double> out;
    out.reserve(group.rollouts.size());
    for (const auto& r : group.rollouts) out.push_back(score(r));
    return out;
}

double TrainedScorer::predict(std::span<const float> embedding) const {
    if (embedding.size() != network.shape().input_dim) {
        throw UsageError("embedding dimension " + std::to_string(embedding.size()) + " does not match scorer input " +
                         std::to_string(network.shape().input_dim));
    }
    std::vector<double> x(embedding.begin(), embedding.end());
    if (!feature_mean.empty()) {
        for (std::size_t j = 0; j < x.size(); ++j) x[j] = (x[j] - feature_mean[j]) * feature_scale[j];
    }
    return sigmoid(network.logit(x));
}

std::vector<double> TrainedScorer::predict_batch(const std::vector<const std::vector<float>*>& embeddings) const {
    const auto dim = network.shape().input_dim;
    MatrixXd x(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(embeddings.size()));
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        if (embeddings[i]->size() != dim) throw UsageError("embedding dimension mismatch");
        for (std::size_t j = 0; j < dim; ++j) {
            x(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = (*embeddings[i])[j];
        }
    }
    if (!feature_mean.empty()) standardize_in_place(x, feature_mean, feature_scale);
    const Eigen::VectorXd z = network.logits(x);
    std::vector<double> out(embeddings.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid(z(static_cast<Eigen::Index>(i)));
    return out;
}

double TrainedScorer::score(const RolloutTrace& rollout) const {
    return predict(rollout.embedding(layer_tag));
}

std::string TrainedScorer::describe() const {
    std::ostringstream os;
    os << "mlp(layer=" << layer_tag << ", hidden=";
    for (std::size_t i = 0; i < spec.hidden_dims.size(); ++i) os << (i ? "x" : "") << spec.hidden_dims[i];
    os << ", best_val_loss=" << best_val_loss << ")";
    return os.str();
}

double EnsembleScorer::predict(const RolloutTrace& rollout) const {
    double p = 0.0;
    for (std::size_t t = 0; t < members.size(); ++t) p += alphas[t] * members[t].score(rollout);
    return p;
}

std::string EnsembleScorer::describe() const {
    std::ostringstream os;
    os << "ensemble(";
    for (std::size_t t = 0; t < members.size(); ++t) {
        os << (t ? ", " : "") << members[t].layer_tag << "=" << alphas[t];
    }
    os << ")";
    return os.str();
}

double weighted_bce(double pred, int label, double pos_weight) {
    if (!(pos_weight > 0.0)) throw UsageError("positive-class weight must be > 0");
    const double p = std::clamp(pred, kProbabilityClamp, 1.0 - kProbabilityClamp);
    const double y = label;
    return -pos_weight * y * std::log(p) - (1.0 - y) * std::log(1.0 - p);
}

double class_weight(std::span<const int> labels) {
    std::size_t pos = 0;
    std::size_t neg = 0;
    for (int y : labels) (y == 1 ? pos : neg)++;
    if (pos == 0 || neg == 0) {
        throw DomainError("calibration set has only " + std::string(pos == 0 ? "negative" : "positive") +
                          " labels; resample it so both classes are present");
    }
    return static_cast<double>(neg) / static_cast<double>(pos);
}

CalibrationSplit split_by_problem(std::span<const std::string> problem_ids, std::uint64_t seed) {
    std::vector<std::string> ids(problem_ids.begin(), problem_ids.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (ids.size() < 2) throw UsageError("need at least two problems to split, got " + std::to_string(ids.size()));
    Rng rng(derive_seed(seed, "split"));
    shuffle(ids.begin(), ids.end(), rng);
    const std::size_t n = ids.size();
    const std::size_t n_train = std::min((3 * n + 3) / 4, n - 1);
    CalibrationSplit split;
    split.train_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.val_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
    std::sort(split.train_ids.begin(), split.train_ids.end());
    std::sort(split.val_ids.begin(), split.val_ids.end());
    return split;
}

TrainedScorer train(const Dataset& dataset, const std::string& layer_tag, const ScorerSpec& spec_in,
                    const TrainOptions& options) {
    ScorerSpec spec = spec_in;
    spec.validate();
    const std::size_t dim = embedding_dim(dataset, layer_tag);
    if (spec.input_dim == 0) spec.input_dim = dim;
    if (spec.input_dim != dim) {
        throw UsageError("spec input_dim " + std::to_string(spec.input_dim) + " but layer " + layer_tag + " has " +
                         std::to_string(dim));
    }

    const auto ids = problem_ids(dataset);
    const auto split = split_by_problem(ids, options.split_seed.value_or(spec.seed));
    Examples tr = gather(dataset, {split.train_ids.begin(), split.train_ids.end()}, layer_tag, dim);
    Examples va = gather(dataset, {split.val_ids.begin(), split.val_ids.end()}, layer_tag, dim);
    const double pos_weight = class_weight(tr.int_labels);

    TrainedScorer scorer;
    scorer.spec = spec;
    scorer.layer_tag = layer_tag;
    if (spec.standardize) {
        scorer.feature_mean.resize(dim);
        scorer.feature_scale.resize(dim);
        for (std::size_t j = 0; j < dim; ++j) {
            const auto row = tr.inputs.row(static_cast<Eigen::Index>(j)).array();
            const double mean = row.mean();
            const double var = (row - mean).square().mean();
            scorer.feature_mean[j] = mean;
            scorer.feature_scale[j] = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
        }
        standardize_in_place(tr.inputs, scorer.feature_mean, scorer.feature_scale);
        standardize_in_place(va.inputs, scorer.feature_mean, scorer.feature_scale);
    }

    scorer.network = Mlp(spec.shape());
    Rng init_rng(derive_seed(spec.seed, "init"));
    scorer.network.init_glorot(init_rng);
    Rng shuffle_rng(derive_seed(spec.seed, "shuffle"));
    Rng dropout_rng(derive_seed(spec.seed, "dropout"));

    Adam adam(scorer.network.params().size());
    double lr = spec.learning_rate;
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> best_params;
    std::vector<double> best_buffers;
    std::size_t since_improvement = 0;
    std::size_t plateau = 0;

    const std::size_t n = tr.labels.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> grad;
    std::vector<double> batch_labels;

    for (std::size_t epoch = 1; epoch <= options.max_epochs; ++epoch) {
        shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += spec.batch_size) {
            const std::size_t b = std::min(spec.batch_size, n - start);
            MatrixXd x(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(b));
            batch_labels.resize(b);
            for (std::size_t i = 0; i < b; ++i) {
                x.col(static_cast<Eigen::Index>(i)) = tr.inputs.col(static_cast<Eigen::Index>(order[start + i]));
                batch_labels[i] = tr.labels[order[start + i]];
            }
            const bool any_dropout = spec.dropout > 0.0 || spec.input_dropout > 0.0;
            DropoutMasks masks;
            if (any_dropout) masks = scorer.network.sample_masks(b, spec.input_dropout, spec.dropout, dropout_rng);
            const double loss = scorer.network.loss(x, batch_labels, pos_weight, any_dropout ? &masks : nullptr, &grad,
                                                    /*update_running_stats=*/true);
            if (!std::isfinite(loss)) {
                throw DomainError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                                  std::to_string(start) + " (lr=" + std::to_string(lr) + ")");
            }
            clip_global_norm(grad, options.clip_norm);
            adam.step(scorer.network.params(), grad, lr, spec.weight_decay);
            epoch_loss += loss * static_cast<double>(b);
        }

        const double val = validation_loss(scorer, va.inputs, va.labels, pos_weight);
        if (!std::isfinite(val)) throw DomainError("non-finite validation loss at epoch " + std::to_string(epoch));
        EpochLog log;
        log.epoch = epoch;
        log.train_loss = epoch_loss / static_cast<double>(n);
        log.val_loss = val;
        log.learning_rate = lr;
        log.improved = val < best;
        if (log.improved) {
            best = val;
            best_params.assign(scorer.network.params().begin(), scorer.network.params().end());
            best_buffers.assign(scorer.network.buffers().begin(), scorer.network.buffers().end());
            scorer.best_epoch = epoch;
            since_improvement = 0;
            plateau = 0;
        } else {
            ++since_improvement;
            if (++plateau >= options.lr_patience) {
                lr *= options.lr_factor;
                plateau = 0;
            }
        }
        log.best_val_loss = best;
        scorer.training_log.push_back(log);
        if (since_improvement >= options.early_stopping_patience) break;
    }

    std::copy(best_params.begin(), best_params.end(), scorer.network.params().begin());
    std::copy(best_buffers.begin(), best_buffers.end(), scorer.network.buffers().begin());
    scorer.best_val_loss = best;
    return scorer;
}

ScorerSpec sample_spec(Rng& rng, std::size_t input_dim) {
    auto log_uniform = [&](double lo, double hi) {
        return std::exp(std::log(lo) + uniform01(rng) * (std::log(hi) - std::log(lo)));
    };
    static constexpr double kDropouts[] = {0.0, 0.1, 0.2, 0.3};
    static constexpr double kInputDropouts[] = {0.0, 0.1, 0.2};
    static constexpr std::size_t kBatches[] = {32, 64, 128};
    ScorerSpec spec;
    spec.input_dim = input_dim;
    spec.hidden_dims = kHiddenDimChoices[uniform_index(rng, kHiddenDimChoices.size())];
    spec.dropout = kDropouts[uniform_index(rng, 4)];
    spec.input_dropout = kInputDropouts[uniform_index(rng, 3)];
    spec.use_batch_norm = uniform01(rng) < 0.5;
    spec.learning_rate = log_uniform(1e-5, 1e-2);
    // Weight decay: point mass at zero (one draw in five), else log-uniform.
    const bool zero_decay = uniform_index(rng, 5) == 0;
    const double decay = log_uniform(1e-6, 1e-2);
    spec.weight_decay = zero_decay ? 0.0 : decay;
    spec.batch_size = kBatches[uniform_index(rng, 3)];
    return spec;
}

ScorerSpec search_candidate_spec(std::uint64_t master_seed, std::size_t index, std::size_t input_dim) {
    Rng rng(derive_seed(master_seed, static_cast<std::uint64_t>(index)));
    ScorerSpec spec = sample_spec(rng, input_dim);
    spec.seed = derive_seed(master_seed, "candidate-" + std::to_string(index));
    return spec;
}

SearchResult hyperparameter_search(const Dataset& dataset, const std::string& layer_tag, std::size_t n_configs,
                                   std::uint64_t master_seed, const TrainOptions& options, std::size_t threads) {
    if (n_configs == 0) throw UsageError("n_configs must be positive");
    const std::size_t dim = embedding_dim(dataset, layer_tag);
    TrainOptions opts = options;
    opts.split_seed = options.split_seed.value_or(master_seed);
    std::vector<std::optional<TrainedScorer>> trained(n_configs);
    parallel_for(n_configs, threads, [&](std::size_t i) {
        trained[i] = train(dataset, layer_tag, search_candidate_spec(master_seed, i, dim), opts);
    });
    SearchResult result;
    for (std::size_t i = 0; i < n_configs; ++i) {
        const auto& t = *trained[i];
        result.candidates.push_back({i, t.spec, t.best_val_loss, t.training_log.size()});
        if (i == 0 || t.best_val_loss < trained[result.best_index]->best_val_loss) result.best_index = i;
    }
    result.best = std::move(*trained[result.best_index]);
    return result;
}

LayerSelection train_best_layer(const Dataset& dataset, const std::vector<std::string>& layer_tags,
                                const ScorerSpec& spec, const TrainOptions& options) {
    if (layer_tags.empty()) throw UsageError("need at least one layer tag");
    TrainOptions opts = options;
    opts.split_seed = options.split_seed.value_or(spec.seed);
    LayerSelection result;
    std::size_t best = 0;
    for (std::size_t t = 0; t < layer_tags.size(); ++t) {
        result.members.push_back(train(dataset, layer_tags[t], spec, opts));
        result.val_loss_by_layer[layer_tags[t]] = result.members.back().best_val_loss;
        if (result.members[t].best_val_loss < result.members[best].best_val_loss) best = t;
    }
    result.best = result.members[best];
    return result;
}

std::vector<double> fit_convex_weights(const std::vector<std::vector<double>>& member_predictions,
                                       std::span<const int> labels, double pos_weight) {
    const std::size_t k = member_predictions.size();
    if (k == 0) throw UsageError("no ensemble members");
    const std::size_t n = labels.size();
    std::vector<double> logits(k, 0.0);
    std::vector<double> alpha(k, 1.0 / static_cast<double>(k));
    if (k == 1 || n == 0) return alpha;

    auto softmax = [&] {
        const double top = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (std::size_t t = 0; t < k; ++t) z += (alpha[t] = std::exp(logits[t] - top));
        for (double& a : alpha) a /= z;
    };
    // Adam on the softmax logits; the objective is smooth and convex in alpha.
    std::vector<double> m(k, 0.0), v(k, 0.0), g(k);
    constexpr double lr = 0.05;
    for (int step = 1; step <= 2000; ++step) {
        softmax();
        std::vector<double> d_alpha(k, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double p = 0.0;
            for (std::size_t t = 0; t < k; ++t) p += alpha[t] * member_predictions[t][i];
            p = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
            const double y = labels[i];
            const double dl_dp = -pos_weight * y / p + (1.0 - y) / (1.0 - p);
            for (std::size_t t = 0; t < k; ++t) d_alpha[t] += dl_dp * member_predictions[t][i] / static_cast<double>(n);
        }
        double mean_d = 0.0;
        for (std::size_t t = 0; t < k; ++t) mean_d += alpha[t] * d_alpha[t];
        for (std::size_t t = 0; t < k; ++t) {
            g[t] = alpha[t] * (d_alpha[t] - mean_d);
            m[t] = 0.9 * m[t] + 0.1 * g[t];
            v[t] = 0.999 * v[t] + 0.001 * g[t] * g[t];
            const double mh = m[t] / (1.0 - std::pow(0.9, step));
            const double vh = v[t] / (1.0 - std::pow(0.999, step));
            logits[t] -= lr * mh / (std::sqrt(vh) + 1e-8);
        }
    }
    softmax();
    return alpha;
}

EnsembleScorer train_ensemble(const Dataset& dataset, const std::vector<std::string>& layer_tags,
                              const ScorerSpec& spec, const TrainOptions& options) {
    if (layer_tags.empty()) throw UsageError("need at least one layer tag");
    TrainOptions opts = options;
    opts.split_seed = options.split_seed.value_or(spec.seed);
    std::vector<TrainedScorer> members;
    for (const auto& tag : layer_tags) members.push_back(train(dataset, tag, spec, opts));
    return combine_layers(dataset, std::move(members), *opts.split_seed);
}

EnsembleScorer combine_layers(const Dataset& dataset, std::vector<TrainedScorer> members, std::uint64_t split_seed) {
    if (members.empty()) throw UsageError("no ensemble members");
    EnsembleScorer ensemble;
    ensemble.members = std::move(members);
    const auto split = split_by_problem(problem_ids(dataset), split_seed);
    const std::set<std::string> val_ids(split.val_ids.begin(), split.val_ids.end());
    const std::set<std::string> train_ids(split.train_ids.begin(), split.train_ids.end());
    std::vector<int> val_labels;
    std::vector<int> train_labels;
    std::vector<std::vector<double>> preds(ensemble.members.size());
    for (const auto& g : dataset) {
        if (train_ids.count(g.problem_id)) {
            for (const auto& r : g.rollouts) train_labels.push_back(r.label);
        }
        if (!val_ids.count(g.problem_id)) continue;
        for (const auto& r : g.rollouts) {
            val_labels.push_back(r.label);
            for (std::size_t t = 0; t < ensemble.members.size(); ++t) preds[t].push_back(ensemble.members[t].score(r));
        }
    }
    ensemble.alphas = fit_convex_weights(preds, val_labels, class_weight(train_labels));
    return ensemble;
}

double classification_accuracy(const RolloutScorer& scorer, const Dataset& dataset,
                               std::span<const std::string> ids) {
    const std::set<std::string> wanted(ids.begin(), ids.end());
    std::size_t hits = 0;
    std::size_t total = 0;
    for (const auto& g : dataset) {
        if (!wanted.count(g.problem_id)) continue;
        for (const auto& r : g.rollouts) {
            const int pred = scorer.score(r) >= 0.5 ? 1 : 0;
            hits += pred == r.label;
            ++total;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace bestn
