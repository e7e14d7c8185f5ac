#include "bestn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/normal.hpp>

#include "bestn/error.hpp"
#include "bestn/rng.hpp"

namespace bestn {

namespace {

// Half the distance between the class means at separability 1.
constexpr double kMeanOffset = 4.0;
// Extra probability mass outside the top k, as a multiple of the k-th entry.
constexpr double kTailBucket = 100.0;

double exponential(Rng& rng) { return -std::log(1.0 - uniform01(rng)); }

std::string problem_id(const std::string& prefix, std::size_t i, std::size_t m) {
    const std::size_t width = std::max<std::size_t>(4, std::to_string(m > 0 ? m - 1 : 0).size());
    const std::string digits = std::to_string(i);
    return prefix + std::string(width - std::min(width, digits.size()), '0') + digits;
}

// The same numeric answer in one of several surface forms.
std::string decorate(std::size_t answer, Rng& rng) {
    const std::string v = std::to_string(answer);
    const double u = uniform01(rng);
    if (u < 0.55) return v;
    if (u < 0.70) return "$" + v + "$";
    if (u < 0.80) return "{" + v + "}";
    if (u < 0.90) return v + ".0";
    return " " + v + " ";
}

// Log-probabilities of the top k tokens at temperature tau: gaps between
// consecutive logits are (0.5 + Exp(1)) / tau, plus one bucket standing in
// for the rest of the vocabulary before normalizing.
void emit_token(double tau, std::uint32_t k, Rng& rng, std::vector<double>& logits, std::vector<float>& out) {
    logits.assign(k + 1, 0.0);
    for (std::uint32_t j = 1; j < k; ++j) logits[j] = logits[j - 1] - (0.5 + exponential(rng)) / tau;
    logits[k] = logits[k - 1] - (0.5 + exponential(rng)) / tau + std::log(kTailBucket);
    const double top = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double a : logits) sum += std::exp(a - top);
    const double lse = top + std::log(sum);
    for (std::uint32_t j = 0; j < k; ++j) out.push_back(static_cast<float>(std::min(0.0, logits[j] - lse)));
}

std::vector<double> unit_direction(std::uint64_t seed, const std::string& tag, std::size_t dim) {
    Rng rng(derive_seed(seed, "direction:" + tag));
    std::vector<double> u(dim);
    double norm = 0.0;
    do {
        for (auto& x : u) x = standard_normal(rng);
        norm = std::sqrt(std::inner_product(u.begin(), u.end(), u.begin(), 0.0));
    } while (norm == 0.0);
    for (auto& x : u) x /= norm;
    return u;
}

std::vector<LayerSpec> parse_layers(const std::string& text) {
    std::vector<LayerSpec> layers;
    for (const auto& item : split_list(text)) {
        const auto colon = item.rfind(':');
        if (colon == std::string::npos) throw UsageError("layer spec '" + item + "' must be tag:separability");
        layers.push_back({item.substr(0, colon), parse_double(item.substr(colon + 1), "layer separability")});
    }
    return layers;
}

}  // namespace

void SynthConfig::validate() const {
    if (problems == 0) throw UsageError("synth: problems must be positive");
    if (rollouts == 0) throw UsageError("synth: rollouts must be positive");
    if (tokens == 0) throw UsageError("synth: tokens must be positive");
    if (k < 2) throw UsageError("synth: k must be at least 2");
    if (embedding_dim == 0) throw UsageError("synth: embedding_dim must be positive");
    if (layers.empty()) throw UsageError("synth: at least one layer is required");
    std::vector<std::string> tags;
    for (const auto& l : layers) {
        if (l.tag.empty()) throw UsageError("synth: empty layer tag");
        if (!(l.separability >= 0.0 && l.separability <= 1.0)) {
            throw UsageError("synth: separability of " + l.tag + " must lie in [0, 1]");
        }
        tags.push_back(l.tag);
    }
    std::sort(tags.begin(), tags.end());
    if (std::adjacent_find(tags.begin(), tags.end()) != tags.end()) throw UsageError("synth: duplicate layer tag");
    if (!(confidence_informativeness >= -1.0 && confidence_informativeness <= 1.0)) {
        throw UsageError("synth: confidence_informativeness must lie in [-1, 1]");
    }
    if (!(base_rate > 0.0 && base_rate < 1.0)) throw UsageError("synth: base_rate must lie in (0, 1)");
    if (!(difficulty_concentration > 0.0 && std::isfinite(difficulty_concentration))) {
        throw UsageError("synth: difficulty_concentration must be positive");
    }
    if (answer_vocab == 1) throw UsageError("synth: answer_vocab must be 0 or at least 2");
    if (id_prefix.empty()) throw UsageError("synth: id_prefix must not be empty");
}

std::map<std::string, std::string> SynthConfig::metadata() const {
    std::string layer_text;
    for (const auto& l : layers) {
        if (!layer_text.empty()) layer_text += ",";
        layer_text += l.tag + ":" + format_double(l.separability);
    }
    return {
        {"answer_vocab", std::to_string(answer_vocab)},
        {"base_rate", format_double(base_rate)},
        {"confidence_informativeness", format_double(confidence_informativeness)},
        {"difficulty_concentration", format_double(difficulty_concentration)},
        {"embedding_dim", std::to_string(embedding_dim)},
        {"geometry_seed", std::to_string(geometry_seed.value_or(seed))},
        {"id_prefix", id_prefix},
        {"k", std::to_string(k)},
        {"layers", layer_text},
        {"problems", std::to_string(problems)},
        {"rollouts", std::to_string(rollouts)},
        {"seed", std::to_string(seed)},
        {"tokens", std::to_string(tokens)},
    };
}

SynthConfig synth_config_from(const KvConfig& kv) {
    SynthConfig c;
    auto uint_or = [&](const char* key, std::uint64_t fallback) {
        auto v = kv.get(key);
        return v ? parse_uint(*v, key) : fallback;
    };
    auto double_or = [&](const char* key, double fallback) {
        auto v = kv.get(key);
        return v ? parse_double(*v, key) : fallback;
    };
    c.problems = uint_or("problems", c.problems);
    c.rollouts = uint_or("rollouts", c.rollouts);
    c.tokens = uint_or("tokens", c.tokens);
    c.k = static_cast<std::uint32_t>(uint_or("k", c.k));
    c.embedding_dim = static_cast<std::uint32_t>(uint_or("embedding_dim", c.embedding_dim));
    if (auto v = kv.get("layers")) c.layers = parse_layers(*v);
    c.confidence_informativeness = double_or("confidence_informativeness", c.confidence_informativeness);
    c.base_rate = double_or("base_rate", c.base_rate);
    c.difficulty_concentration = double_or("difficulty_concentration", c.difficulty_concentration);
    c.answer_vocab = uint_or("answer_vocab", c.answer_vocab);
    c.seed = uint_or("seed", c.seed);
    if (auto v = kv.get("geometry_seed")) c.geometry_seed = parse_uint(*v, "geometry_seed");
    c.id_prefix = kv.get_or("id_prefix", c.id_prefix);
    kv.reject_unknown();
    c.validate();
    return c;
}

Dataset generate(const SynthConfig& config) {
    config.validate();
    const std::size_t m = config.problems;
    const std::size_t dim = config.embedding_dim;
    const std::uint64_t geometry = config.geometry_seed.value_or(config.seed);

    // Difficulty: stratified quantiles in a random order over the problems.
    Rng difficulty_rng(derive_seed(config.seed, "difficulty"));
    std::vector<std::size_t> rank(m);
    std::iota(rank.begin(), rank.end(), 0);
    shuffle(rank.begin(), rank.end(), difficulty_rng);
    const double kappa = config.difficulty_concentration;
    const boost::math::beta_distribution<double> beta(config.base_rate * kappa, (1.0 - config.base_rate) * kappa);
    const boost::math::normal_distribution<double> normal;

    std::vector<std::vector<double>> directions;
    for (const auto& l : config.layers) directions.push_back(unit_direction(geometry, l.tag, dim));

    Rng label_rng(derive_seed(config.seed, "labels"));
    Rng token_rng(derive_seed(config.seed, "tokens"));
    Rng embedding_rng(derive_seed(config.seed, "embeddings"));
    Rng answer_rng(derive_seed(config.seed, "answers"));

    const double rho = config.confidence_informativeness;
    const double rho_rest = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    std::vector<double> logits;

    Dataset groups(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double q = (static_cast<double>(rank[i]) + 0.5) / static_cast<double>(m);
        const double p = boost::math::quantile(beta, q);
        const double z = boost::math::quantile(normal, q);
        ProblemGroup& g = groups[i];
        g.problem_id = problem_id(config.id_prefix, i, m);
        const std::size_t correct_answer =
            config.answer_vocab > 0 ? static_cast<std::size_t>(uniform_index(answer_rng, config.answer_vocab)) : 0;

        g.rollouts.resize(config.rollouts);
        for (std::size_t j = 0; j < config.rollouts; ++j) {
            RolloutTrace& r = g.rollouts[j];
            r.problem_id = g.problem_id;
            r.rollout_id = j;
            r.k = config.k;
            r.label = uniform01(label_rng) < p ? 1 : 0;

            const double certainty = rho * z + rho_rest * standard_normal(token_rng);
            r.logprobs.reserve(config.tokens * config.k);
            for (std::size_t t = 0; t < config.tokens; ++t) {
                const double tau = std::exp(-0.5 * certainty + 0.3 * standard_normal(token_rng));
                emit_token(tau, config.k, token_rng, logits, r.logprobs);
            }

            const double sign = r.label == 1 ? 1.0 : -1.0;
            for (std::size_t l = 0; l < config.layers.size(); ++l) {
                const double offset = sign * kMeanOffset * config.layers[l].separability;
                std::vector<float> e(dim);
                for (std::size_t d = 0; d < dim; ++d) {
                    e[d] = static_cast<float>(offset * directions[l][d] + standard_normal(embedding_rng));
                }
                r.embeddings.emplace(config.layers[l].tag, std::move(e));
            }

            if (config.answer_vocab > 0) {
                std::size_t answer = correct_answer;
                if (r.label == 0) {
                    answer = static_cast<std::size_t>(uniform_index(answer_rng, config.answer_vocab - 1));
                    if (answer >= correct_answer) ++answer;
                }
                r.final_answer = decorate(answer, answer_rng);
            }
        }
    }
    return groups;
}

std::vector<std::string> fixture_names() { return {"miscalibrated", "moderate", "noise", "separable", "two-layer"}; }

Fixture fixture_configs(const std::string& name) {
    SynthConfig c;
    // Spread-out difficulty keeps the sampling noise of a single pick per
    // problem near 1.3 points at m = 400 (sqrt(E[p(1-p)] / m)).
    c.difficulty_concentration = 0.5;
    if (name == "separable") {
        c.seed = 101;
    } else if (name == "noise") {
        c.seed = 202;
        c.layers = {{"penultimate", 0.0}};
    } else if (name == "miscalibrated") {
        c.seed = 303;
        c.confidence_informativeness = -0.5;
    } else if (name == "two-layer") {
        c.seed = 404;
        c.layers = {{"penultimate", 1.0}, {"frac_0.15", 0.0}};
    } else if (name == "moderate") {
        c.seed = 505;
        c.layers = {{"penultimate", 0.35}};
    } else {
        throw UsageError("unknown fixture '" + name + "'");
    }
    c.geometry_seed = c.seed;
    Fixture f;
    f.name = name;
    f.eval_config = c;
    f.calibration_config = c;
    f.calibration_config.problems = 200;
    f.calibration_config.seed = derive_seed(c.seed, "calibration");
    f.calibration_config.id_prefix = "cal";
    return f;
}

Fixture generate_fixture(const std::string& name) {
    Fixture f = fixture_configs(name);
    f.eval = generate(f.eval_config);
    f.calibration = generate(f.calibration_config);
    return f;
}

std::vector<std::filesystem::path> write_fixture(const Fixture& fixture, const std::filesystem::path& out_dir) {
    std::vector<std::filesystem::path> written;
    const std::pair<const char*, std::pair<const SynthConfig*, const Dataset*>> parts[] = {
        {"eval", {&fixture.eval_config, &fixture.eval}},
        {"calibration", {&fixture.calibration_config, &fixture.calibration}},
    };
    for (const auto& [sub, part] : parts) {
        WriteOptions opts;
        opts.k = part.first->k;
        opts.embedding_dim = part.first->embedding_dim;
        opts.metadata = part.first->metadata();
        opts.metadata["fixture"] = fixture.name;
        opts.metadata["role"] = sub;
        write_dataset(*part.second, out_dir / sub, opts);
        written.push_back(out_dir / sub / kManifestName);
    }
    return written;
}

}  // namespace bestn
