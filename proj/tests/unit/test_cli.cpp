#include <gtest/gtest.h>

#include <fstream>
#include <regex>
#include <sstream>

#include "bestn/cli.hpp"
#include "bestn/eval.hpp"
#include "bestn/synth.hpp"
#include "bestn/trace_store.hpp"
#include "unit/test_util.hpp"

using namespace bestn;
using namespace bestn::test;
namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code = -1;
    std::string out;
    std::string err;
};

CliRun cli(std::vector<std::string> args) {
    args.insert(args.begin(), "bestn");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    CliRun r;
    r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

// Small calibration + evaluation pair written through `synth --config`.
struct CliData {
    fs::path root;
    fs::path eval;
    fs::path calibration;
};

const CliData& cli_data() {
    static const CliData d = [] {
        CliData c;
        c.root = scratch_dir("cli-data");
        const std::string common =
            "problems = 60\nrollouts = 8\ntokens = 12\nembedding_dim = 16\ngeometry_seed = 77\n"
            "layers = penultimate:1.0,frac_0.15:0.0\n";
        write_text(c.root / "eval.cfg", common + "seed = 1\n");
        write_text(c.root / "cal.cfg", common + "seed = 2\nid_prefix = cal\n");
        EXPECT_EQ(cli({"--quiet", "--out", (c.root / "e").string(), "synth", "--config", (c.root / "eval.cfg").string()})
                      .code,
                  kExitOk);
        EXPECT_EQ(cli({"--quiet", "--out", (c.root / "c").string(), "synth", "--config", (c.root / "cal.cfg").string()})
                      .code,
                  kExitOk);
        c.eval = c.root / "e" / "data";
        c.calibration = c.root / "c" / "data";
        return c;
    }();
    return d;
}

std::size_t data_rows(const std::string& tsv) {
    std::size_t n = 0;
    std::istringstream in(tsv);
    for (std::string line; std::getline(in, line);) n += !line.empty() && line[0] != '#';
    return n;
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(cli({}).code, kExitUsage);
    EXPECT_EQ(cli({"frobnicate"}).code, kExitUsage);
    EXPECT_EQ(cli({"select", "--dataset", "x"}).code, kExitUsage);  // missing --strategy
    EXPECT_EQ(cli({"synth"}).code, kExitUsage);
    EXPECT_EQ(cli({"synth", "--fixture", "nope"}).code, kExitUsage);
}

TEST(Cli, ValidateExitCodes) {
    const auto& d = cli_data();
    const CliRun clean = cli({"validate", d.eval.string()});
    EXPECT_EQ(clean.code, kExitOk) << clean.out << clean.err;

    const fs::path bad = scratch_dir("cli-corrupt");
    fs::copy(d.eval, bad, fs::copy_options::recursive);
    std::string manifest = slurp(bad / kManifestName);
    const auto pos = manifest.find("\"label\":0");
    ASSERT_NE(pos, std::string::npos);
    manifest.replace(pos, 9, "\"label\":2");
    write_text(bad / kManifestName, manifest);
    const fs::path report_dir = scratch_dir("cli-corrupt-report");
    const CliRun corrupt = cli({"--out", report_dir.string(), "validate", bad.string()});
    EXPECT_EQ(corrupt.code, kExitDomain);
    EXPECT_NE(corrupt.out.find("label"), std::string::npos);
    EXPECT_EQ(slurp(report_dir / "validation.txt"), corrupt.out);
    EXPECT_TRUE(fs::exists(report_dir / "outputs.tsv"));

    EXPECT_EQ(cli({"validate", (bad / "does-not-exist").string()}).code, kExitUsage);
}

TEST(Cli, SynthConfigIsDeterministic) {
    const auto& d = cli_data();
    const fs::path again = scratch_dir("cli-synth-again");
    ASSERT_EQ(cli({"--quiet", "--out", again.string(), "synth", "--config", (d.root / "eval.cfg").string()}).code,
              kExitOk);
    EXPECT_EQ(slurp(again / "outputs.tsv"), slurp(d.root / "e" / "outputs.tsv"));
    EXPECT_EQ(load_dataset(again / "data").size(), 60u);
}

TEST(Cli, SynthFixtureWritesBothSets) {
    const fs::path out = scratch_dir("cli-fixture");
    ASSERT_EQ(cli({"--quiet", "--out", out.string(), "synth", "--fixture", "noise"}).code, kExitOk);
    const auto f = fixture_configs("noise");
    EXPECT_EQ(load_dataset(out / "eval").size(), f.eval_config.problems);
    EXPECT_EQ(load_dataset(out / "calibration").size(), f.calibration_config.problems);
}

TEST(Cli, TrainIsDeterministicAndSearchListsCandidates) {
    const auto& d = cli_data();
    const fs::path a = scratch_dir("cli-train-a");
    const fs::path b = scratch_dir("cli-train-b");
    for (const auto& out : {a, b}) {
        const CliRun r = cli({"--quiet", "--seed", "5", "--out", out.string(), "train", "--dataset",
                           d.calibration.string(), "--hidden-dims", "16,8", "--max-epochs", "8", "--search", "off"});
        ASSERT_EQ(r.code, kExitOk) << r.err;
    }
    EXPECT_EQ(slurp(a / "scorer.bin"), slurp(b / "scorer.bin"));
    EXPECT_FALSE(slurp(a / "scorer.bin").empty());

    const fs::path s = scratch_dir("cli-train-search");
    const CliRun r = cli({"--quiet", "--threads", "2", "--out", s.string(), "train", "--dataset", d.calibration.string(),
                       "--search", "on", "--n-configs", "5", "--max-epochs", "4"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    const std::string table = slurp(s / "search.tsv");
    EXPECT_EQ(data_rows(table), 6u);  // header + 5 candidates
    EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 6);

    EXPECT_EQ(cli({"--out", s.string(), "train", "--dataset", d.calibration.string(), "--mode", "magic"}).code,
              kExitUsage);
    EXPECT_EQ(cli({"--out", s.string(), "train", "--dataset", d.calibration.string(), "--mode", "ensemble"}).code,
              kExitUsage);
}

TEST(Cli, BestLayerModePicksInformativeLayer) {
    const auto& d = cli_data();
    const fs::path out = scratch_dir("cli-best-layer");
    const CliRun r = cli({"--quiet", "--out", out.string(), "train", "--dataset", d.calibration.string(), "--mode",
                       "best-layer", "--layers", "penultimate,frac_0.15", "--hidden-dims", "16,8", "--max-epochs", "20"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(slurp(out / "layers.tsv").find("penultimate\t"), std::string::npos);
    const std::regex selected("penultimate\t[^\t]+\t1\n");
    EXPECT_TRUE(std::regex_search(slurp(out / "layers.tsv"), selected)) << slurp(out / "layers.tsv");
}

TEST(Cli, SelectMatchesLibrary) {
    const auto& d = cli_data();
    const Dataset data = load_dataset(d.eval);

    const CliRun oracle = cli({"select", "--dataset", d.eval.string(), "--strategy", "oracle"});
    ASSERT_EQ(oracle.code, kExitOk) << oracle.err;
    std::size_t any = 0;
    for (const auto& g : data) {
        any += std::any_of(g.rollouts.begin(), g.rollouts.end(), [](const auto& r) { return r.label == 1; });
    }
    EXPECT_NE(oracle.out.find("# oracle: " + std::to_string(any) + "/60 correct"), std::string::npos) << oracle.out;

    const CliRun conf = cli({"select", "--dataset", d.eval.string(), "--strategy", "confidence:mean:tail", "--tail-len", "4"});
    ASSERT_EQ(conf.code, kExitOk) << conf.err;
    AggregationDefaults defaults;
    defaults.tail_len = 4;
    const auto p = prepare_strategy(parse_strategy("confidence:mean:tail", defaults), data);
    const auto picks = select_all(p, 42);
    std::istringstream rows(conf.out);
    std::string line;
    std::getline(rows, line);  // header
    for (const auto& pick : picks) {
        ASSERT_TRUE(std::getline(rows, line));
        EXPECT_EQ(line.substr(0, line.find('\t', line.find('\t') + 1)),
                  pick.problem_id + "\t" + std::to_string(pick.chosen_rollout_id));
    }

    EXPECT_EQ(cli({"select", "--dataset", d.eval.string(), "--strategy", "scatr"}).code, kExitUsage);
    EXPECT_EQ(cli({"select", "--dataset", d.eval.string(), "--strategy", "bon"}).code, kExitUsage);
    EXPECT_EQ(cli({"select", "--dataset", d.eval.string(), "--strategy", "confidence:nope:full"}).code, kExitUsage);
}

TEST(Cli, SelectWithTrainedScorerWritesFile) {
    const auto& d = cli_data();
    const fs::path model = scratch_dir("cli-select-model");
    ASSERT_EQ(cli({"--quiet", "--out", model.string(), "train", "--dataset", d.calibration.string(), "--hidden-dims",
                   "16,8", "--max-epochs", "10"})
                  .code,
              kExitOk);
    const fs::path out = scratch_dir("cli-select-out");
    const CliRun r = cli({"--out", out.string(), "select", "--dataset", d.eval.string(), "--strategy", "scatr",
                       "--scorer", (model / "scorer.txt").string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_EQ(data_rows(slurp(out / "selections.tsv")), 61u);
    EXPECT_NE(r.out.find("# scatr: "), std::string::npos);
}

TEST(Cli, EvalReportIsByteIdenticalAcrossRuns) {
    const auto& d = cli_data();
    const fs::path cfg = scratch_dir("cli-eval-cfg") / "eval.cfg";
    write_text(cfg, "dataset = " + d.eval.string() + "\ncalibration = " + d.calibration.string() +
                        "\nstrategies = random, scatr, oracle\nbudgets = 4\nseeds = 3\ncalibration_sets = all\n"
                        "repetitions = 4\nhidden_dims = 16,8\nmax_epochs = 8\n");
    const fs::path a = scratch_dir("cli-eval-a");
    const fs::path b = scratch_dir("cli-eval-b");
    ASSERT_EQ(cli({"--quiet", "--out", a.string(), "eval", "--config", cfg.string()}).code, kExitOk);
    ASSERT_EQ(cli({"--quiet", "--threads", "3", "--out", b.string(), "eval", "--config", cfg.string()}).code, kExitOk);
    EXPECT_EQ(slurp(a / "report.tsv"), slurp(b / "report.tsv"));
    EXPECT_EQ(data_rows(slurp(a / "report.tsv")), 4u);  // header + 3 strategies
    EXPECT_TRUE(fs::exists(a / "report.csv"));
    EXPECT_TRUE(fs::exists(a / "config.txt"));

    const fs::path single = scratch_dir("cli-eval-cfg") / "single.cfg";
    write_text(single, "dataset = " + d.eval.string() + "\nstrategies = random\nbudgets = 2\nseeds = 1\n"
                       "calibration_sets = all\n");
    const fs::path c = scratch_dir("cli-eval-c");
    ASSERT_EQ(cli({"--quiet", "--out", c.string(), "eval", "--config", single.string()}).code, kExitOk);
    EXPECT_EQ(data_rows(slurp(c / "report.tsv")), 2u);

    const fs::path missing_cal = scratch_dir("cli-eval-cfg") / "nocal.cfg";
    write_text(missing_cal, "dataset = " + d.eval.string() + "\nstrategies = scatr\n");
    EXPECT_EQ(cli({"--quiet", "--out", c.string(), "eval", "--config", missing_cal.string()}).code, kExitUsage);
    EXPECT_EQ(cli({"--quiet", "--out", c.string(), "eval", "--config", (c / "none.cfg").string()}).code, kExitUsage);
}

TEST(Cli, AblateLayersPrefersInformativeLayer) {
    const auto& d = cli_data();
    const fs::path cfg = scratch_dir("cli-ablate-cfg") / "a.cfg";
    write_text(cfg, "dataset = " + d.eval.string() + "\ncalibration = " + d.calibration.string() +
                        "\nstrategies = scatr\nbudgets = 8\nseeds = 3\ncalibration_sets = all\nrepetitions = 4\n"
                        "hidden_dims = 16,8\nmax_epochs = 20\n");
    const fs::path out = scratch_dir("cli-ablate-out");
    const CliRun r = cli({"--quiet", "--out", out.string(), "ablate", "layers", "--config", cfg.string(), "--layers",
                       "penultimate,frac_0.15"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    const std::string table = slurp(out / "layers.tsv");
    std::map<std::string, double> mean;
    std::istringstream in(table);
    for (std::string line; std::getline(in, line);) {
        if (line.empty() || line[0] == '#' || line.rfind("layer\t", 0) == 0) continue;
        std::istringstream f(line);
        std::string layer, strategy, n, runs, m;
        f >> layer >> strategy >> n >> runs >> m;
        mean[layer] = std::stod(m);
    }
    ASSERT_EQ(mean.size(), 2u) << table;
    EXPECT_GT(mean.at("penultimate"), mean.at("frac_0.15"));

    const fs::path calib = scratch_dir("cli-ablate-calib");
    const CliRun c = cli({"--quiet", "--out", calib.string(), "ablate", "calib-size", "--config", cfg.string(),
                       "--fractions", "0.5,1.0"});
    ASSERT_EQ(c.code, kExitOk) << c.err;
    EXPECT_EQ(data_rows(slurp(calib / "calib_size.tsv")), 3u);
}
