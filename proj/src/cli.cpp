#include "bestn/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "bestn/blob.hpp"
#include "bestn/error.hpp"
#include "bestn/eval.hpp"
#include "bestn/kv_config.hpp"
#include "bestn/parallel.hpp"
#include "bestn/scorer_io.hpp"
#include "bestn/synth.hpp"

namespace bestn {

namespace fs = std::filesystem;

namespace {

constexpr const char* kOutputsName = "outputs.tsv";

struct Globals {
    std::uint64_t seed = 42;
    bool seed_given = false;
    std::string out;
    bool quiet = false;
    std::size_t threads = default_threads();
};

// Files a command produced, listed in <out>/outputs.tsv with size and
// FNV-1a checksum so reruns can be compared at a glance.
class Outputs {
public:
    explicit Outputs(fs::path dir) : dir_(std::move(dir)) {}

    const fs::path& dir() const { return dir_; }
    fs::path path(const std::string& name) const { return dir_ / name; }

    void add(const fs::path& p) { files_.push_back(p); }
    void add_tree(const fs::path& root) {
        for (const auto& e : fs::recursive_directory_iterator(root)) {
            if (e.is_regular_file()) files_.push_back(e.path());
        }
    }
    void write_text(const std::string& name, const std::string& text) {
        std::ofstream f(path(name), std::ios::trunc);
        if (!f) throw IoError("cannot write " + path(name).string());
        f << text;
        f.close();
        if (!f) throw IoError("failed writing " + path(name).string());
        add(path(name));
    }

    void finish() const {
        std::vector<std::string> rows;
        for (const auto& p : files_) {
            std::ifstream in(p, std::ios::binary);
            std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
            Checksum sum;
            sum.update(bytes);
            rows.push_back(fs::relative(p, dir_).generic_string() + "\t" + std::to_string(bytes.size()) + "\t" +
                           sum.hex());
        }
        std::sort(rows.begin(), rows.end());
        rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
        std::ofstream f(dir_ / kOutputsName, std::ios::trunc);
        f << "path\tbytes\tfnv1a64\n";
        for (const auto& r : rows) f << r << "\n";
        if (!f) throw IoError("cannot write " + (dir_ / kOutputsName).string());
    }

private:
    fs::path dir_;
    std::vector<fs::path> files_;
};

Outputs open_outputs(const Globals& g) {
    if (g.out.empty()) throw UsageError("--out is required");
    fs::create_directories(g.out);
    return Outputs(g.out);
}

fs::path require_input(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw UsageError(what + " not found: " + p.string());
    return p;
}

fs::path relative_to(const KvConfig& kv, const std::string& value) {
    const fs::path p(value);
    return p.is_absolute() || kv.base_dir().empty() ? p : kv.base_dir() / p;
}

void progress(const Globals& g, std::ostream& err, const std::string& msg) {
    if (!g.quiet) err << msg << "\n";
}

std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

// ---- validate ----------------------------------------------------------

int cmd_validate(const Globals& g, const std::string& input, std::ostream& out) {
    const fs::path manifest = resolve_manifest(require_input(input, "dataset"));
    require_input(manifest, "manifest");
    const ValidationReport report = validate_dataset(manifest);
    out << report.to_string();
    if (!g.out.empty()) {
        Outputs o = open_outputs(g);
        o.write_text("validation.txt", report.to_string());
        o.finish();
    }
    return report.ok() ? kExitOk : kExitDomain;
}

// ---- synth -------------------------------------------------------------

int cmd_synth(const Globals& g, const std::string& config, const std::string& fixture, std::ostream& err) {
    if (config.empty() == fixture.empty()) throw UsageError("synth needs exactly one of --config or --fixture");
    Outputs o = open_outputs(g);
    if (!fixture.empty()) {
        const Fixture f = generate_fixture(fixture);
        for (const auto& m : write_fixture(f, o.dir())) o.add_tree(m.parent_path());
        progress(g, err, "fixture " + fixture + ": " + std::to_string(f.eval.size()) + " evaluation and " +
                             std::to_string(f.calibration.size()) + " calibration problems");
    } else {
        SynthConfig c = synth_config_from(KvConfig::read(require_input(config, "config")));
        if (g.seed_given) {
            if (!c.geometry_seed) c.geometry_seed = c.seed;
            c.seed = g.seed;
        }
        WriteOptions opts;
        opts.k = c.k;
        opts.embedding_dim = c.embedding_dim;
        opts.metadata = c.metadata();
        const fs::path data_dir = o.path("data");
        write_dataset(generate(c), data_dir, opts);
        o.add_tree(data_dir);
        progress(g, err, "wrote " + std::to_string(c.problems) + " problems to " + data_dir.string());
    }
    o.finish();
    return kExitOk;
}

// ---- train -------------------------------------------------------------

struct TrainArgs {
    std::string dataset;
    std::string config;
    std::string mode = "single";
    std::string layer = "penultimate";
    std::vector<std::string> layers;
    std::string search = "off";
    std::size_t n_configs = 100;
    std::map<std::string, std::string> spec_flags;  // flag overrides for scorer_spec_from
    std::optional<std::size_t> max_epochs;
};

std::string search_table(const SearchResult& r) {
    std::ostringstream s;
    s << "index\thidden_dims\tdropout\tinput_dropout\tbatch_norm\tlearning_rate\tweight_decay\tbatch_size\tseed\t"
         "best_val_loss\tepochs\tselected\n";
    for (const auto& c : r.candidates) {
        s << c.index << "\t" << join_sizes(c.spec.hidden_dims) << "\t" << format_double(c.spec.dropout) << "\t"
          << format_double(c.spec.input_dropout) << "\t" << (c.spec.use_batch_norm ? 1 : 0) << "\t"
          << format_double(c.spec.learning_rate) << "\t" << format_double(c.spec.weight_decay) << "\t"
          << c.spec.batch_size << "\t" << c.spec.seed << "\t" << format_double(c.best_val_loss) << "\t" << c.epochs
          << "\t" << (c.index == r.best_index ? 1 : 0) << "\n";
    }
    return s.str();
}

int cmd_train(const Globals& g, const TrainArgs& a, std::ostream& err) {
    KvConfig kv = a.config.empty() ? KvConfig() : KvConfig::read(require_input(a.config, "config"));
    for (const auto& [k, v] : a.spec_flags) kv.set(k, v);
    ScorerSpec spec = scorer_spec_from(kv);
    kv.reject_unknown();
    spec.seed = g.seed;
    TrainOptions options;
    options.split_seed = g.seed;
    if (a.max_epochs) options.max_epochs = *a.max_epochs;
    if (a.search != "on" && a.search != "off") throw UsageError("--search must be on or off");

    const Dataset data = load_dataset(resolve_manifest(require_input(a.dataset, "dataset")));
    Outputs o = open_outputs(g);
    const fs::path header = o.path("scorer.txt");
    std::vector<fs::path> written;

    if (a.mode == "single") {
        if (a.search == "on") {
            progress(g, err, "searching " + std::to_string(a.n_configs) + " configurations on " + a.layer);
            SearchResult r = hyperparameter_search(data, a.layer, a.n_configs, g.seed, options, g.threads);
            o.write_text("search.tsv", search_table(r));
            written = save_scorer(r.best, header);
            progress(g, err, "best candidate " + std::to_string(r.best_index) +
                                 " val_loss=" + format_double(r.best.best_val_loss));
        } else {
            TrainedScorer s = train(data, a.layer, spec, options);
            written = save_scorer(s, header);
            progress(g, err, "trained " + std::to_string(s.training_log.size()) +
                                 " epochs, val_loss=" + format_double(s.best_val_loss));
        }
    } else if (a.mode == "best-layer" || a.mode == "ensemble") {
        if (a.search == "on") throw UsageError("--search applies to --mode single only");
        if (a.layers.empty()) throw UsageError("--layers is required for --mode " + a.mode);
        LayerSelection sel = train_best_layer(data, a.layers, spec, options);
        std::ostringstream t;
        t << "layer\tbest_val_loss\tselected\n";
        for (const auto& tag : a.layers) {
            t << tag << "\t" << format_double(sel.val_loss_by_layer.at(tag)) << "\t"
              << (tag == sel.best.layer_tag ? 1 : 0) << "\n";
        }
        o.write_text("layers.tsv", t.str());
        if (a.mode == "best-layer") {
            written = save_scorer(sel.best, header);
            progress(g, err, "selected layer " + sel.best.layer_tag);
        } else {
            EnsembleScorer e = combine_layers(data, std::move(sel.members), g.seed);
            written = save_ensemble(e, header);
            progress(g, err, e.describe());
        }
    } else {
        throw UsageError("--mode must be single, best-layer or ensemble");
    }
    for (const auto& p : written) o.add(p);
    o.finish();
    return kExitOk;
}

// ---- select ------------------------------------------------------------

struct SelectArgs {
    std::string dataset;
    std::string strategy;
    std::string scorer;
    std::string scores;
    AggregationDefaults aggregation;
};

int cmd_select(const Globals& g, const SelectArgs& a, std::ostream& out) {
    const Strategy strategy = parse_strategy(a.strategy, a.aggregation);
    if (strategy.needs_scorer() && a.scorer.empty()) {
        throw UsageError("strategy '" + strategy.id + "' needs --scorer");
    }
    if (strategy.kind == StrategyKind::ExternalScores && a.scores.empty()) {
        throw UsageError("strategy 'bon' needs --scores");
    }
    const Dataset data = load_dataset(resolve_manifest(require_input(a.dataset, "dataset")));
    std::shared_ptr<const RolloutScorer> scorer;
    if (!a.scorer.empty()) scorer = load_any_scorer(require_input(a.scorer, "scorer"));
    std::optional<ExternalScores> external;
    if (!a.scores.empty()) external = read_external_scores(require_input(a.scores, "scores file"));

    const PreparedStrategy p = prepare_strategy(strategy, data, scorer.get(), external ? &*external : nullptr);
    const auto results = select_all(p, g.seed);
    std::ostringstream t;
    t << "problem_id\trollout_id\tscore\tlabel\tcorrect\tanswer\n";
    std::size_t hits = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        std::vector<std::size_t> all(p.skeleton[i].rollouts.size());
        for (std::size_t j = 0; j < all.size(); ++j) all[j] = j;
        const int ok = selection_correct(p, i, all, g.seed);
        hits += static_cast<std::size_t>(ok);
        t << r.problem_id << "\t" << r.chosen_rollout_id << "\t" << format_double(r.scores[r.chosen_index]) << "\t"
          << p.skeleton[i].rollouts[r.chosen_index].label << "\t" << ok << "\t" << r.selected_answer.value_or("")
          << "\n";
    }
    if (!g.out.empty()) {
        Outputs o = open_outputs(g);
        o.write_text("selections.tsv", t.str());
        o.finish();
    } else {
        out << t.str();
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", results.empty() ? 0.0 : static_cast<double>(hits) / results.size());
    out << "# " << strategy.id << ": " << hits << "/" << results.size() << " correct, accuracy " << buf << "\n";
    return kExitOk;
}

// ---- eval / ablate -----------------------------------------------------

struct EvalInputs {
    KvConfig kv;
    EvalConfig config;
    Dataset dataset;
    std::optional<Dataset> calibration;
    std::shared_ptr<const RolloutScorer> scorer;
    std::optional<ExternalScores> external;
};

struct EvalOverrides {
    std::string config;
    std::string dataset;
    std::string calibration;
    std::string scorer;
    std::string layers;
    std::string fractions;
};

EvalInputs load_eval_inputs(const Globals& g, const EvalOverrides& f, std::ostream& err) {
    EvalInputs in;
    in.kv = KvConfig::read(require_input(f.config, "config"));
    if (g.seed_given) in.kv.set("seeds", std::to_string(g.seed));
    if (!f.layers.empty()) in.kv.set("layers", f.layers);
    if (!f.fractions.empty()) in.kv.set("fractions", f.fractions);
    std::map<std::string, std::string> extras;
    in.config = eval_config_from(in.kv, &extras);
    in.config.threads = g.threads;

    auto path_of = [&](const std::string& flag, const char* key) -> std::optional<fs::path> {
        if (!flag.empty()) return fs::path(flag);
        if (auto it = extras.find(key); it != extras.end()) return relative_to(in.kv, it->second);
        return std::nullopt;
    };
    const auto dataset = path_of(f.dataset, "dataset");
    if (!dataset) throw UsageError("no evaluation dataset (config key 'dataset' or --dataset)");
    in.dataset = load_dataset(resolve_manifest(require_input(*dataset, "dataset")));
    if (auto p = path_of(f.calibration, "calibration")) {
        in.calibration = load_dataset(resolve_manifest(require_input(*p, "calibration dataset")));
    }
    if (auto p = path_of(f.scorer, "scorer")) in.scorer = load_any_scorer(require_input(*p, "scorer"));
    if (auto p = path_of("", "bon_scores")) in.external = read_external_scores(require_input(*p, "scores file"));
    progress(g, err, "loaded " + std::to_string(in.dataset.size()) + " evaluation problems");
    return in;
}

ScorerBank bank_for(const Globals& g, const EvalInputs& in, std::ostream& err) {
    const bool needed = std::any_of(in.config.strategies.begin(), in.config.strategies.end(), [&](const auto& s) {
        return parse_strategy(s, in.config.aggregation).needs_scorer();
    });
    if (!needed) return {};
    if (in.scorer) return uniform_bank(in.config, in.scorer);
    if (!in.calibration) throw UsageError("scorer-based strategies need a calibration dataset or a trained scorer");
    progress(g, err, "training " + std::to_string(in.config.seeds.size() * in.config.calibration_sets.size()) +
                         " scorers");
    return train_scorer_bank(*in.calibration, in.config, 1.0);
}

int cmd_eval(const Globals& g, const EvalOverrides& f, std::ostream& out, std::ostream& err) {
    EvalInputs in = load_eval_inputs(g, f, err);
    Outputs o = open_outputs(g);
    const ScorerBank bank = bank_for(g, in, err);
    const EvalReport report = run_suite(in.config, in.dataset, bank, in.external ? &*in.external : nullptr);
    o.write_text("config.txt", in.kv.to_string());
    o.write_text("report.tsv", format_report_tsv(report));
    o.write_text("report.csv", format_report_csv(report));
    o.finish();
    if (!g.quiet) out << format_report_tsv(report);
    return kExitOk;
}

int cmd_ablate_layers(const Globals& g, const EvalOverrides& f, std::ostream& out, std::ostream& err) {
    EvalInputs in = load_eval_inputs(g, f, err);
    if (!in.calibration) throw UsageError("ablate layers needs a calibration dataset");
    Outputs o = open_outputs(g);
    const auto reports = ablate_layers(in.dataset, *in.calibration, in.config.training.layers, in.config);
    std::vector<std::pair<std::string, const EvalReport*>> keyed;
    for (const auto& tag : in.config.training.layers) keyed.emplace_back(tag, &reports.at(tag));
    const std::string table = format_keyed_reports_tsv("layer", keyed);
    o.write_text("config.txt", in.kv.to_string());
    o.write_text("layers.tsv", table);
    o.finish();
    if (!g.quiet) out << table;
    return kExitOk;
}

int cmd_ablate_calibration(const Globals& g, const EvalOverrides& f, std::ostream& out, std::ostream& err) {
    EvalInputs in = load_eval_inputs(g, f, err);
    if (!in.calibration) throw UsageError("ablate calib-size needs a calibration dataset");
    Outputs o = open_outputs(g);
    const auto reports = ablate_calibration_fraction(in.dataset, *in.calibration, in.config.ablation_fractions,
                                                     in.config);
    std::vector<std::pair<std::string, const EvalReport*>> keyed;
    for (const auto& [fraction, report] : reports) keyed.emplace_back(report.metadata.at("calibration_fraction"), &report);
    const std::string table = format_keyed_reports_tsv("fraction", keyed);
    o.write_text("config.txt", in.kv.to_string());
    o.write_text("calib_size.tsv", table);
    o.finish();
    if (!g.quiet) out << table;
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Best-of-N selection toolkit: confidence baselines, learned correctness scorer, evaluation."};
    app.name("bestn");
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    auto* seed_opt = app.add_option("--seed", g.seed, "Master seed");
    app.add_option("--out", g.out, "Output directory");
    app.add_flag("--quiet", g.quiet, "Suppress progress messages");
    app.add_option("--threads", g.threads, "Worker threads (default: available cores)")->check(CLI::PositiveNumber);

    std::string validate_input;
    auto* validate = app.add_subcommand("validate", "Check a trace dataset against every invariant");
    validate->add_option("manifest", validate_input, "manifest.jsonl or its directory")->required();

    std::string synth_config, synth_fixture;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic trace dataset");
    synth->add_option("--config", synth_config, "key = value generator config");
    synth->add_option("--fixture", synth_fixture, "Named fixture")
        ->check(CLI::IsMember(fixture_names()));

    TrainArgs ta;
    std::map<std::string, std::string> spec_raw;
    auto* train_cmd = app.add_subcommand("train", "Train a correctness scorer on a calibration dataset");
    train_cmd->add_option("--dataset", ta.dataset, "Calibration manifest")->required();
    train_cmd->add_option("--config", ta.config, "Scorer spec as key = value");
    train_cmd->add_option("--mode", ta.mode, "single, best-layer or ensemble");
    train_cmd->add_option("--layer", ta.layer, "Layer tag for --mode single");
    train_cmd->add_option("--layers", ta.layers, "Layer tags for best-layer / ensemble")->delimiter(',');
    train_cmd->add_option("--search", ta.search, "Random hyperparameter search: on or off");
    train_cmd->add_option("--n-configs", ta.n_configs, "Search candidates")->check(CLI::PositiveNumber);
    train_cmd->add_option("--max-epochs", ta.max_epochs, "Epoch cap");
    for (const char* key : {"hidden_dims", "dropout", "input_dropout", "batch_norm", "learning_rate", "weight_decay",
                            "batch_size", "standardize"}) {
        std::string flag = std::string("--") + key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        train_cmd->add_option(flag, spec_raw[key], std::string("Scorer ") + key);
    }

    SelectArgs sa;
    auto* select = app.add_subcommand("select", "Pick one rollout per problem");
    select->add_option("--dataset", sa.dataset, "Evaluation manifest")->required();
    select->add_option("--strategy", sa.strategy, "bon, wmv, mv, random, oracle, scatr, confidence:<signal>:<agg>")
        ->required();
    select->add_option("--scorer", sa.scorer, "Trained scorer header (scatr, wmv)");
    select->add_option("--scores", sa.scores, "problem_id/rollout_id/score TSV (bon)");
    select->add_option("--tail-len", sa.aggregation.tail_len, "Tokens in the tail aggregation");
    select->add_option("--group-window", sa.aggregation.group_window, "Sliding window width");
    select->add_option("--bottom-frac", sa.aggregation.bottom_frac, "Fraction of windows kept");

    EvalOverrides eo;
    auto add_eval_flags = [&](CLI::App* cmd) {
        cmd->add_option("--config", eo.config, "Evaluation config (key = value)")->required();
        cmd->add_option("--dataset", eo.dataset, "Evaluation manifest (overrides config)");
        cmd->add_option("--calibration", eo.calibration, "Calibration manifest (overrides config)");
        cmd->add_option("--scorer", eo.scorer, "Pre-trained scorer used for every run");
    };
    auto* eval_cmd = app.add_subcommand("eval", "Accuracy against rollout budget over seeds and calibration sets");
    add_eval_flags(eval_cmd);
    auto* ablate = app.add_subcommand("ablate", "Layer and calibration-size ablations");
    ablate->require_subcommand(1);
    auto* ablate_layers_cmd = ablate->add_subcommand("layers", "One scorer per layer tag");
    add_eval_flags(ablate_layers_cmd);
    ablate_layers_cmd->add_option("--layers", eo.layers, "Comma-separated layer tags (overrides config)");
    auto* ablate_calib_cmd = ablate->add_subcommand("calib-size", "Scorers on nested calibration subsets");
    add_eval_flags(ablate_calib_cmd);
    ablate_calib_cmd->add_option("--fractions", eo.fractions, "Comma-separated fractions (overrides config)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }
    g.seed_given = seed_opt->count() > 0;

    try {
        if (*validate) return cmd_validate(g, validate_input, out);
        if (*synth) return cmd_synth(g, synth_config, synth_fixture, err);
        if (*train_cmd) {
            for (const auto& [k, v] : spec_raw) {
                if (!v.empty()) ta.spec_flags[k] = v;
            }
            return cmd_train(g, ta, err);
        }
        if (*select) return cmd_select(g, sa, out);
        if (*eval_cmd) return cmd_eval(g, eo, out, err);
        if (*ablate_layers_cmd) return cmd_ablate_layers(g, eo, out, err);
        if (*ablate_calib_cmd) return cmd_ablate_calibration(g, eo, out, err);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitDomain;
    }
    return kExitUsage;
}

}  // namespace bestn
