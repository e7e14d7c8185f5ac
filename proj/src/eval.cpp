#include "bestn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "bestn/error.hpp"
#include "bestn/parallel.hpp"
#include "bestn/rng.hpp"

namespace bestn {

namespace {

constexpr double kOracleSlack = 1e-12;

std::string fixed6(double v) {
    if (std::abs(v) < 5e-7) v = 0.0;  // no "-0.000000"
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string opt6(const std::optional<double>& v) { return v ? fixed6(*v) : "n/a"; }

std::size_t ceil_count(double fraction, std::size_t n) {
    const double x = fraction * static_cast<double>(n);
    const auto c = static_cast<std::size_t>(std::ceil(x - 1e-9 * std::max(1.0, x)));
    return std::clamp<std::size_t>(c, 1, n);
}

// Groups of `dataset` whose position is in `keep`, in dataset order.
Dataset take_groups(const Dataset& dataset, std::vector<std::size_t> keep) {
    std::sort(keep.begin(), keep.end());
    Dataset out;
    out.reserve(keep.size());
    for (auto i : keep) out.push_back(dataset[i]);
    return out;
}

std::vector<std::size_t> permuted_prefix(std::size_t m, std::size_t count, std::uint64_t seed) {
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed);
    shuffle(perm.begin(), perm.end(), rng);
    perm.resize(count);
    return perm;
}

template <typename T>
std::string join(const std::vector<T>& v) {
    std::ostringstream out;
    for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
    return out.str();
}

}  // namespace

bool Strategy::is_baseline() const {
    switch (kind) {
        case StrategyKind::ExternalScores:
        case StrategyKind::MajorityVote:
        case StrategyKind::Random:
        case StrategyKind::Confidence:
            return true;
        default:
            return false;
    }
}

Strategy parse_strategy(std::string_view id, const AggregationDefaults& defaults) {
    Strategy s;
    s.id = std::string(id);
    if (id == "bon") {
        s.kind = StrategyKind::ExternalScores;
    } else if (id == "wmv") {
        s.kind = StrategyKind::WeightedVote;
    } else if (id == "mv") {
        s.kind = StrategyKind::MajorityVote;
    } else if (id == "random") {
        s.kind = StrategyKind::Random;
    } else if (id == "oracle") {
        s.kind = StrategyKind::Oracle;
    } else if (id == "scatr") {
        s.kind = StrategyKind::Scorer;
    } else if (id.rfind("confidence:", 0) == 0) {
        const auto rest = id.substr(11);
        const auto colon = rest.find(':');
        if (colon == std::string_view::npos) {
            throw UsageError("confidence strategy must be confidence:<signal>:<aggregation>, got '" + s.id + "'");
        }
        s.kind = StrategyKind::Confidence;
        s.signal = parse_signal(rest.substr(0, colon));
        s.aggregation = parse_aggregation(rest.substr(colon + 1), defaults);
    } else {
        throw UsageError("unknown strategy '" + s.id + "'");
    }
    return s;
}

ExternalScores read_external_scores(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read scores file " + path.string());
    ExternalScores scores;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const auto f = split_list(line, '\t');
        const std::string where = path.string() + ":" + std::to_string(line_no);
        if (f.size() != 3) throw FormatError(where + ": expected problem_id, rollout_id, score");
        const auto key = std::make_pair(f[0], parse_uint(f[1], "rollout_id"));
        if (!scores.emplace(key, parse_double(f[2], "score")).second) {
            throw FormatError(where + ": duplicate score for (" + f[0] + ", " + f[1] + ")");
        }
    }
    return scores;
}

PreparedStrategy prepare_strategy(const Strategy& strategy, const Dataset& dataset, const RolloutScorer* scorer,
                                  const ExternalScores* external) {
    PreparedStrategy p;
    p.strategy = strategy;
    p.skeleton.reserve(dataset.size());
    for (const auto& g : dataset) {
        ProblemGroup s;
        s.problem_id = g.problem_id;
        for (const auto& r : g.rollouts) {
            RolloutTrace t;
            t.problem_id = r.problem_id;
            t.rollout_id = r.rollout_id;
            t.label = r.label;
            t.final_answer = r.final_answer;
            t.k = r.k;
            s.rollouts.push_back(std::move(t));
        }
        p.skeleton.push_back(std::move(s));
    }

    switch (strategy.kind) {
        case StrategyKind::Confidence:
            for (const auto& g : dataset) {
                std::vector<double> v;
                for (const auto& r : g.rollouts) v.push_back(score_rollout(r, strategy.signal, strategy.aggregation).value);
                p.scores.push_back(std::move(v));
            }
            break;
        case StrategyKind::Scorer:
        case StrategyKind::WeightedVote:
            if (!scorer) throw UsageError("strategy '" + strategy.id + "' needs a trained scorer");
            for (const auto& g : dataset) p.scores.push_back(scorer->score_group(g));
            break;
        case StrategyKind::ExternalScores:
            if (!external) throw UsageError("strategy 'bon' needs a scores file");
            for (const auto& g : dataset) {
                std::vector<double> v;
                for (const auto& r : g.rollouts) {
                    auto it = external->find({g.problem_id, r.rollout_id});
                    if (it == external->end()) {
                        throw UsageError("no external score for (" + g.problem_id + ", " +
                                         std::to_string(r.rollout_id) + ")");
                    }
                    v.push_back(it->second);
                }
                p.scores.push_back(std::move(v));
            }
            break;
        default:
            break;
    }
    return p;
}

namespace {

SelectionResult select_group(const PreparedStrategy& p, const ProblemGroup& group, std::span<const double> scores,
                             std::uint64_t seed) {
    const Strategy& s = p.strategy;
    switch (s.kind) {
        case StrategyKind::ExternalScores:
        case StrategyKind::Scorer:
            return best_of_n(group, scores, Direction::HigherBetter, s.id);
        case StrategyKind::Confidence:
            return best_of_n(group, scores, direction_of(s.signal), s.id);
        case StrategyKind::WeightedVote:
            return weighted_majority_vote(group, scores, s.id);
        case StrategyKind::MajorityVote:
            return majority_vote(group);
        case StrategyKind::Random: {
            auto r = random_select(group, seed);
            r.strategy = s.id;
            return r;
        }
        case StrategyKind::Oracle: {
            // Any correct rollout (lowest id) stands for the oracle's pick.
            std::vector<double> labels;
            for (const auto& r : group.rollouts) labels.push_back(r.label);
            return best_of_n(group, labels, Direction::HigherBetter, s.id);
        }
    }
    throw UsageError("unhandled strategy " + s.id);
}

int correct(const PreparedStrategy& p, const ProblemGroup& group, const SelectionResult& result) {
    switch (p.strategy.kind) {
        case StrategyKind::Oracle:
            return oracle_hit(group);
        case StrategyKind::WeightedVote:
        case StrategyKind::MajorityVote:
            return result.selected_answer && answer_is_correct(group, *result.selected_answer) ? 1 : 0;
        default:
            return group.rollouts[result.chosen_index].label;
    }
}

}  // namespace

std::vector<SelectionResult> select_all(const PreparedStrategy& p, std::uint64_t seed) {
    std::vector<SelectionResult> out;
    out.reserve(p.skeleton.size());
    for (std::size_t i = 0; i < p.skeleton.size(); ++i) {
        std::span<const double> scores;
        if (!p.scores.empty()) scores = p.scores[i];
        out.push_back(select_group(p, p.skeleton[i], scores, seed));
    }
    return out;
}

int selection_correct(const PreparedStrategy& p, std::size_t group_index, const std::vector<std::size_t>& subset,
                      std::uint64_t seed) {
    const ProblemGroup& full = p.skeleton.at(group_index);
    ProblemGroup sub;
    sub.problem_id = full.problem_id;
    sub.rollouts.reserve(subset.size());
    std::vector<double> scores;
    for (auto i : subset) {
        sub.rollouts.push_back(full.rollouts.at(i));
        if (!p.scores.empty()) scores.push_back(p.scores[group_index][i]);
    }
    return correct(p, sub, select_group(p, sub, scores, seed));
}

std::vector<std::size_t> draw_subset(const ProblemGroup& group, std::size_t n, std::uint64_t seed,
                                     std::size_t repetition) {
    const std::size_t size = group.rollouts.size();
    if (n == 0 || n > size) {
        throw UsageError("budget " + std::to_string(n) + " outside [1, " + std::to_string(size) + "] for problem " +
                         group.problem_id);
    }
    std::vector<std::size_t> idx(size);
    std::iota(idx.begin(), idx.end(), 0);
    if (n < size) {
        Rng rng(derive_seed(derive_seed(derive_seed(seed, "subset"), repetition), group.problem_id));
        for (std::size_t i = 0; i < n; ++i) {
            const auto j = i + static_cast<std::size_t>(uniform_index(rng, size - i));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(n);
        std::sort(idx.begin(), idx.end());
    }
    return idx;
}

double accuracy_at_n(const PreparedStrategy& p, std::size_t n, std::uint64_t seed, std::size_t repetitions) {
    if (repetitions == 0) throw UsageError("repetitions must be at least 1");
    if (p.skeleton.empty()) throw UsageError("cannot evaluate an empty dataset");
    double total = 0.0;
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
        const std::uint64_t rep_seed = derive_seed(seed, rep);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < p.skeleton.size(); ++i) {
            hits += static_cast<std::size_t>(selection_correct(p, i, draw_subset(p.skeleton[i], n, seed, rep), rep_seed));
        }
        total += static_cast<double>(hits) / static_cast<double>(p.skeleton.size());
    }
    return total / static_cast<double>(repetitions);
}

std::optional<double> gap_closed(double method, double best_baseline, double oracle) {
    const double denom = oracle - best_baseline;
    if (denom == 0.0) return std::nullopt;
    return 100.0 * (method - best_baseline) / denom;
}

double delta_accuracy(double method, double best_baseline) { return method - best_baseline; }

void EvalConfig::validate() const {
    if (strategies.empty()) throw UsageError("eval: no strategies");
    if (budgets.empty()) throw UsageError("eval: no budgets");
    for (auto b : budgets) {
        if (b == 0) throw UsageError("eval: budgets must be positive");
    }
    if (repetitions == 0) throw UsageError("eval: repetitions must be at least 1");
    if (seeds.empty()) throw UsageError("eval: no seeds");
    if (calibration_sets.empty()) throw UsageError("eval: no calibration sets");
    if (!(calibration_fraction > 0.0 && calibration_fraction <= 1.0)) {
        throw UsageError("eval: calibration_fraction must lie in (0, 1]");
    }
    for (double f : ablation_fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw UsageError("eval: ablation fractions must lie in (0, 1]");
    }
    if (training.layers.empty()) throw UsageError("eval: no scorer layers");
    std::set<std::string> seen;
    for (const auto& s : strategies) {
        parse_strategy(s, aggregation);
        if (!seen.insert(s).second) throw UsageError("eval: duplicate strategy " + s);
    }
    if (baseline != "best" && !seen.count(baseline)) {
        throw UsageError("eval: baseline '" + baseline + "' is not among the strategies");
    }
    training.spec.validate();
}

ScorerSpec scorer_spec_from(const KvConfig& kv, ScorerSpec s) {
    if (auto v = kv.get("hidden_dims")) s.hidden_dims = parse_size_list(*v, "hidden_dims");
    if (auto v = kv.get("dropout")) s.dropout = parse_double(*v, "dropout");
    if (auto v = kv.get("input_dropout")) s.input_dropout = parse_double(*v, "input_dropout");
    if (auto v = kv.get("batch_norm")) s.use_batch_norm = parse_bool(*v, "batch_norm");
    if (auto v = kv.get("learning_rate")) s.learning_rate = parse_double(*v, "learning_rate");
    if (auto v = kv.get("weight_decay")) s.weight_decay = parse_double(*v, "weight_decay");
    if (auto v = kv.get("batch_size")) s.batch_size = parse_uint(*v, "batch_size");
    if (auto v = kv.get("standardize")) s.standardize = parse_bool(*v, "standardize");
    s.validate();
    return s;
}

EvalConfig eval_config_from(const KvConfig& kv, std::map<std::string, std::string>* extras) {
    EvalConfig c;
    if (auto v = kv.get("strategies")) c.strategies = split_list(*v);
    if (auto v = kv.get("budgets")) c.budgets = parse_size_list(*v, "budgets");
    if (auto v = kv.get("repetitions")) c.repetitions = parse_uint(*v, "repetitions");
    if (auto v = kv.get("seeds")) {
        c.seeds.clear();
        for (auto s : split_list(*v)) c.seeds.push_back(parse_uint(s, "seeds"));
    }
    if (auto v = kv.get("calibration_sets")) c.calibration_sets = split_list(*v);
    if (auto v = kv.get("calibration_fraction")) c.calibration_fraction = parse_double(*v, "calibration_fraction");
    if (auto v = kv.get("baseline")) c.baseline = *v;
    if (auto v = kv.get("tail_len")) c.aggregation.tail_len = parse_uint(*v, "tail_len");
    if (auto v = kv.get("group_window")) c.aggregation.group_window = parse_uint(*v, "group_window");
    if (auto v = kv.get("bottom_frac")) c.aggregation.bottom_frac = parse_double(*v, "bottom_frac");
    if (auto v = kv.get("scorer_mode")) {
        if (*v == "single") {
            c.training.mode = ScorerTraining::Mode::Single;
        } else if (*v == "best-layer") {
            c.training.mode = ScorerTraining::Mode::BestLayer;
        } else if (*v == "ensemble") {
            c.training.mode = ScorerTraining::Mode::Ensemble;
        } else {
            throw UsageError("scorer_mode must be single, best-layer or ensemble");
        }
    }
    if (auto v = kv.get("layers")) c.training.layers = split_list(*v);
    if (auto v = kv.get("search_configs")) c.training.search_configs = parse_uint(*v, "search_configs");
    if (auto v = kv.get("max_epochs")) c.training.options.max_epochs = parse_uint(*v, "max_epochs");
    if (auto v = kv.get("early_stopping_patience")) {
        c.training.options.early_stopping_patience = parse_uint(*v, "early_stopping_patience");
    }
    if (auto v = kv.get("lr_patience")) c.training.options.lr_patience = parse_uint(*v, "lr_patience");
    if (auto v = kv.get("lr_factor")) c.training.options.lr_factor = parse_double(*v, "lr_factor");
    if (auto v = kv.get("clip_norm")) c.training.options.clip_norm = parse_double(*v, "clip_norm");
    if (auto v = kv.get("fractions")) c.ablation_fractions = parse_double_list(*v, "fractions");
    if (auto v = kv.get("threads")) c.threads = std::max<std::size_t>(1, parse_uint(*v, "threads"));
    c.training.spec = scorer_spec_from(kv, c.training.spec);
    for (const char* key : {"dataset", "calibration", "scorer", "bon_scores"}) {
        if (auto v = kv.get(key); v && extras) (*extras)[key] = *v;
    }
    kv.reject_unknown();
    c.validate();
    return c;
}

Dataset calibration_subset(const Dataset& pool, const std::string& id, double fraction) {
    if (id == "all") return pool;
    if (!(fraction > 0.0 && fraction <= 1.0)) throw UsageError("calibration fraction must lie in (0, 1]");
    const std::size_t count = std::max<std::size_t>(std::min<std::size_t>(2, pool.size()), ceil_count(fraction, pool.size()));
    return take_groups(pool, permuted_prefix(pool.size(), count, derive_seed(0, "calibration-set:" + id)));
}

Dataset subsample_problems(const Dataset& dataset, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw UsageError("subsample fraction must lie in (0, 1]");
    if (dataset.empty()) return {};
    return take_groups(dataset, permuted_prefix(dataset.size(), ceil_count(fraction, dataset.size()), seed));
}

std::shared_ptr<const RolloutScorer> train_scorer(const Dataset& calibration, const ScorerTraining& training,
                                                  std::uint64_t seed, std::size_t threads) {
    ScorerSpec spec = training.spec;
    spec.seed = seed;
    TrainOptions options = training.options;
    options.split_seed = seed;
    switch (training.mode) {
        case ScorerTraining::Mode::Single:
            if (training.search_configs > 0) {
                return std::make_shared<TrainedScorer>(
                    hyperparameter_search(calibration, training.layers.front(), training.search_configs, seed, options,
                                          threads)
                        .best);
            }
            return std::make_shared<TrainedScorer>(train(calibration, training.layers.front(), spec, options));
        case ScorerTraining::Mode::BestLayer:
            return std::make_shared<TrainedScorer>(train_best_layer(calibration, training.layers, spec, options).best);
        case ScorerTraining::Mode::Ensemble:
            return std::make_shared<EnsembleScorer>(train_ensemble(calibration, training.layers, spec, options));
    }
    throw UsageError("unknown scorer mode");
}

ScorerBank train_scorer_bank(const Dataset& pool, const EvalConfig& config, double fraction) {
    std::vector<ScorerKey> keys;
    for (auto seed : config.seeds) {
        for (const auto& id : config.calibration_sets) keys.emplace_back(seed, id);
    }
    std::vector<std::shared_ptr<const RolloutScorer>> trained(keys.size());
    parallel_for(keys.size(), config.threads, [&](std::size_t i) {
        const auto& [seed, id] = keys[i];
        Dataset cal = calibration_subset(pool, id, config.calibration_fraction);
        if (fraction < 1.0) cal = subsample_problems(cal, fraction, derive_seed(seed, "fraction:" + id));
        trained[i] = train_scorer(cal, config.training, seed, 1);
    });
    ScorerBank bank;
    for (std::size_t i = 0; i < keys.size(); ++i) bank.emplace(keys[i], trained[i]);
    return bank;
}

ScorerBank uniform_bank(const EvalConfig& config, std::shared_ptr<const RolloutScorer> scorer) {
    ScorerBank bank;
    for (auto seed : config.seeds) {
        for (const auto& id : config.calibration_sets) bank.emplace(ScorerKey{seed, id}, scorer);
    }
    return bank;
}

const CellStats& EvalReport::cell(const std::string& strategy, std::size_t n) const {
    for (const auto& c : cells) {
        if (c.strategy == strategy && c.n == n) return c;
    }
    throw UsageError("report has no cell (" + strategy + ", " + std::to_string(n) + ")");
}

EvalReport run_suite(const EvalConfig& config, const Dataset& dataset, const ScorerBank& scorers,
                     const ExternalScores* external) {
    config.validate();
    if (dataset.empty()) throw UsageError("eval: empty dataset");
    std::size_t min_group = SIZE_MAX;
    std::size_t rollouts = 0;
    for (const auto& g : dataset) {
        min_group = std::min(min_group, g.rollouts.size());
        rollouts += g.rollouts.size();
    }
    for (auto b : config.budgets) {
        if (b > min_group) {
            throw UsageError("eval: budget " + std::to_string(b) + " exceeds the smallest group (" +
                             std::to_string(min_group) + " rollouts)");
        }
    }

    std::vector<std::string> ids = config.strategies;
    std::sort(ids.begin(), ids.end());
    const bool oracle_requested = std::binary_search(ids.begin(), ids.end(), std::string("oracle"));
    if (!oracle_requested) ids.push_back("oracle");
    std::vector<Strategy> strategies;
    for (const auto& id : ids) strategies.push_back(parse_strategy(id, config.aggregation));

    std::vector<ScorerKey> runs;
    for (auto seed : config.seeds) {
        for (const auto& id : config.calibration_sets) runs.emplace_back(seed, id);
    }

    // One prepared strategy per distinct (strategy, scorer); scorer-free
    // strategies share one preparation across runs.
    struct Task {
        std::size_t strategy;
        std::size_t prepared;
        std::uint64_t seed;
        std::vector<std::size_t> run_slots;
    };
    std::vector<PreparedStrategy> prepared;
    std::vector<Task> tasks;
    for (std::size_t s = 0; s < strategies.size(); ++s) {
        const Strategy& st = strategies[s];
        if (st.needs_scorer()) {
            std::map<const RolloutScorer*, std::size_t> by_scorer;
            for (std::size_t r = 0; r < runs.size(); ++r) {
                auto it = scorers.find(runs[r]);
                if (it == scorers.end() || !it->second) {
                    throw UsageError("eval: no scorer for strategy '" + st.id + "' at seed " +
                                     std::to_string(runs[r].first) + ", calibration set " + runs[r].second);
                }
                auto [pos, inserted] = by_scorer.emplace(it->second.get(), prepared.size());
                if (inserted) prepared.push_back(prepare_strategy(st, dataset, it->second.get(), external));
                tasks.push_back({s, pos->second, runs[r].first, {r}});
            }
        } else {
            prepared.push_back(prepare_strategy(st, dataset, nullptr, external));
            for (auto seed : config.seeds) {
                Task t{s, prepared.size() - 1, seed, {}};
                for (std::size_t r = 0; r < runs.size(); ++r) {
                    if (runs[r].first == seed) t.run_slots.push_back(r);
                }
                tasks.push_back(std::move(t));
            }
        }
    }

    // values[strategy][budget][run]
    std::vector<std::vector<std::vector<double>>> values(
        strategies.size(), std::vector<std::vector<double>>(config.budgets.size(), std::vector<double>(runs.size())));
    parallel_for(tasks.size() * config.budgets.size(), config.threads, [&](std::size_t job) {
        const Task& t = tasks[job / config.budgets.size()];
        const std::size_t b = job % config.budgets.size();
        const double acc = accuracy_at_n(prepared[t.prepared], config.budgets[b], t.seed, config.repetitions);
        for (auto r : t.run_slots) values[t.strategy][b][r] = acc;
    });

    const std::size_t oracle_index = static_cast<std::size_t>(
        std::find_if(strategies.begin(), strategies.end(), [](const Strategy& s) { return s.id == "oracle"; }) -
        strategies.begin());
    for (std::size_t s = 0; s < strategies.size(); ++s) {
        for (std::size_t b = 0; b < config.budgets.size(); ++b) {
            for (std::size_t r = 0; r < runs.size(); ++r) {
                if (values[s][b][r] > values[oracle_index][b][r] + kOracleSlack) {
                    throw DomainError("eval: strategy " + strategies[s].id + " exceeds the oracle at N=" +
                                      std::to_string(config.budgets[b]));
                }
            }
        }
    }

    auto mean_of = [](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };

    EvalReport report;
    for (std::size_t b = 0; b < config.budgets.size(); ++b) {
        std::optional<double> base;
        for (std::size_t s = 0; s < strategies.size(); ++s) {
            if (s == oracle_index && !oracle_requested) continue;
            const double m = mean_of(values[s][b]);
            if (config.baseline == "best" ? strategies[s].is_baseline() : strategies[s].id == config.baseline) {
                base = base ? std::max(*base, m) : m;
            }
        }
        const double oracle_mean = mean_of(values[oracle_index][b]);
        for (std::size_t s = 0; s < strategies.size(); ++s) {
            if (s == oracle_index && !oracle_requested) continue;
            CellStats c;
            c.strategy = strategies[s].id;
            c.n = config.budgets[b];
            c.runs = values[s][b];
            c.mean = mean_of(c.runs);
            double ss = 0.0;
            for (double v : c.runs) ss += (v - c.mean) * (v - c.mean);
            c.std = std::sqrt(ss / static_cast<double>(c.runs.size()));
            if (c.runs.size() == 1) c.std = 0.0;
            if (base) {
                c.delta = 100.0 * delta_accuracy(c.mean, *base);
                c.gap_closed = gap_closed(100.0 * c.mean, 100.0 * *base, 100.0 * oracle_mean);
            }
            report.cells.push_back(std::move(c));
        }
    }
    std::sort(report.cells.begin(), report.cells.end(), [](const CellStats& a, const CellStats& b) {
        return std::tie(a.strategy, a.n) < std::tie(b.strategy, b.n);
    });

    report.metadata = {
        {"baseline", config.baseline},
        {"budgets", join(config.budgets)},
        {"calibration_sets", join(config.calibration_sets)},
        {"problems", std::to_string(dataset.size())},
        {"repetitions", std::to_string(config.repetitions)},
        {"rollouts", std::to_string(rollouts)},
        {"runs_per_cell", std::to_string(runs.size())},
        {"seeds", join(config.seeds)},
        {"strategies", join(std::vector<std::string>(ids.begin(), ids.end() - (oracle_requested ? 0 : 1)))},
    };
    return report;
}

std::map<std::string, EvalReport> ablate_layers(const Dataset& dataset, const Dataset& calibration_pool,
                                                const std::vector<std::string>& layer_tags,
                                                const EvalConfig& config) {
    if (layer_tags.empty()) throw UsageError("ablate layers: no layer tags");
    std::map<std::string, EvalReport> out;
    for (const auto& tag : layer_tags) {
        EvalConfig c = config;
        c.training.mode = ScorerTraining::Mode::Single;
        c.training.layers = {tag};
        EvalReport r = run_suite(c, dataset, train_scorer_bank(calibration_pool, c));
        r.metadata["layer"] = tag;
        out.emplace(tag, std::move(r));
    }
    return out;
}

std::map<double, EvalReport> ablate_calibration_fraction(const Dataset& dataset, const Dataset& calibration_pool,
                                                         const std::vector<double>& fractions,
                                                         const EvalConfig& config) {
    if (fractions.empty()) throw UsageError("ablate calib-size: no fractions");
    const std::size_t set_size = config.calibration_sets.front() == "all"
                                     ? calibration_pool.size()
                                     : calibration_subset(calibration_pool, config.calibration_sets.front(),
                                                          config.calibration_fraction)
                                           .size();
    std::map<double, EvalReport> out;
    for (double f : fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw UsageError("ablate calib-size: fractions must lie in (0, 1]");
        EvalReport r = run_suite(config, dataset, train_scorer_bank(calibration_pool, config, f));
        r.metadata["calibration_fraction"] = fixed6(f);
        r.metadata["calibration_problems"] = std::to_string(f < 1.0 ? ceil_count(f, set_size) : set_size);
        out.emplace(f, std::move(r));
    }
    return out;
}

namespace {

void metadata_lines(std::ostringstream& out, const EvalReport& report, const std::string& prefix) {
    for (const auto& [k, v] : report.metadata) out << "# " << prefix << k << " = " << v << "\n";
}

void row(std::ostringstream& out, const CellStats& c, char sep) {
    out << c.strategy << sep << c.n << sep << c.runs.size() << sep << fixed6(c.mean) << sep << fixed6(c.std) << sep
        << opt6(c.delta) << sep << opt6(c.gap_closed) << "\n";
}

constexpr const char* kColumns[] = {"strategy", "n", "runs", "mean", "std", "delta_points", "gap_closed_pct"};

void header(std::ostringstream& out, char sep, const char* key = nullptr) {
    if (key) out << key << sep;
    for (std::size_t i = 0; i < std::size(kColumns); ++i) out << (i ? std::string(1, sep) : "") << kColumns[i];
    out << "\n";
}

}  // namespace

std::string format_report_tsv(const EvalReport& report) {
    std::ostringstream out;
    metadata_lines(out, report, "");
    header(out, '\t');
    for (const auto& c : report.cells) row(out, c, '\t');
    return out.str();
}

std::string format_report_csv(const EvalReport& report) {
    std::ostringstream out;
    header(out, ',');
    for (const auto& c : report.cells) row(out, c, ',');
    return out.str();
}

std::string format_keyed_reports_tsv(const std::string& key_name,
                                     const std::vector<std::pair<std::string, const EvalReport*>>& reports) {
    std::ostringstream out;
    for (const auto& [key, r] : reports) metadata_lines(out, *r, "[" + key + "] ");
    header(out, '\t', key_name.c_str());
    for (const auto& [key, r] : reports) {
        for (const auto& c : r->cells) {
            out << key << '\t';
            row(out, c, '\t');
        }
    }
    return out.str();
}

}  // namespace bestn
