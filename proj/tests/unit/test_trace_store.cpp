#include <gtest/gtest.h>

#include <json.hpp>

#include "bestn/blob.hpp"
#include "bestn/error.hpp"
#include "bestn/trace_store.hpp"
#include "unit/test_util.hpp"

using namespace bestn;
using namespace bestn::test;

namespace {

std::size_t count_kind(const ValidationReport& report, const std::string& kind) {
    return static_cast<std::size_t>(std::count_if(report.violations.begin(), report.violations.end(),
                                                  [&](const Violation& v) { return v.kind == kind; }));
}

// Swaps the first two log-probs of token `t` of the record on manifest line
// `line` (1-based, header is line 1) directly in the blob.
void unsort_token(const fs::path& dir, std::size_t line, std::size_t t) {
    std::ifstream in(dir / kManifestName);
    std::string text;
    for (std::size_t i = 0; i < line; ++i) std::getline(in, text);
    const auto rec = nlohmann::json::parse(text);
    const auto manifest = read_manifest(dir);
    const std::uint64_t at = rec["tokens"]["offset"].get<std::uint64_t>() + 4ull * manifest.k * t;
    auto bytes = read_bytes(dir / rec["tokens"]["blob"].get<std::string>());
    std::swap_ranges(bytes.begin() + at, bytes.begin() + at + 4, bytes.begin() + at + 4);
    write_bytes(dir / rec["tokens"]["blob"].get<std::string>(), bytes);
}

}  // namespace

TEST(TraceStore, RoundTripTwoProblemsThreeRollouts) {
    const auto dir = scratch_dir("ts-roundtrip");
    const Dataset d = random_dataset(2, 3, 5, 4, 6, 11, {"penultimate", "frac_0.15"});
    const auto m = write_dataset(d, dir);
    EXPECT_EQ(m.problem_count, 2u);
    EXPECT_EQ(m.rollout_count, 6u);
    EXPECT_EQ(m.rollouts_per_problem.at(3), 2u);
    const Dataset back = load_dataset(dir / kManifestName);
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        ASSERT_EQ(back[i].rollouts.size(), 3u);
        EXPECT_EQ(back[i].problem_id, d[i].problem_id);
        for (std::size_t j = 0; j < 3; ++j) {
            const auto& a = d[i].rollouts[j];
            const auto& b = back[i].rollouts[j];
            EXPECT_EQ(a.problem_id, b.problem_id);
            EXPECT_EQ(a.rollout_id, b.rollout_id);
            EXPECT_EQ(a.label, b.label);
            EXPECT_EQ(a.final_answer, b.final_answer);
            EXPECT_EQ(a.k, b.k);
            EXPECT_EQ(0, std::memcmp(a.logprobs.data(), b.logprobs.data(), a.logprobs.size() * sizeof(float)));
            EXPECT_EQ(a.embeddings, b.embeddings);
        }
    }
    EXPECT_EQ(back, d);
}

TEST(TraceStore, EmptyDatasetLoadsAsEmpty) {
    const auto dir = scratch_dir("ts-empty");
    WriteOptions opts;
    opts.k = 10;
    opts.embedding_dim = 8;
    const auto m = write_dataset({}, dir, opts);
    EXPECT_EQ(m.problem_count, 0u);
    EXPECT_TRUE(load_dataset(dir).empty());
    EXPECT_TRUE(validate_dataset(dir).ok());
}

TEST(TraceStore, SingleTokenManifestFields) {
    const auto dir = scratch_dir("ts-single");
    RolloutTrace r;
    r.problem_id = "only";
    r.rollout_id = 7;
    r.k = 3;
    r.label = 1;
    r.logprobs = token_from_probs({0.5, 0.3, 0.1});
    r.embeddings["penultimate"] = {0.25f, -1.0f};
    const auto m = write_dataset({ProblemGroup{"only", {r}}}, dir);
    EXPECT_EQ(m.problem_count, 1u);
    EXPECT_EQ(m.rollout_count, 1u);
    EXPECT_EQ(m.k, 3u);
    EXPECT_EQ(m.embedding_dim, 2u);
    EXPECT_EQ(m.layer_tags, std::vector<std::string>{"penultimate"});
    const auto reread = read_manifest(dir);
    EXPECT_EQ(reread.k, 3u);
    EXPECT_EQ(reread.problem_count, 1u);
    EXPECT_EQ(reread.rollouts_per_problem.at(1), 1u);
    ASSERT_EQ(reread.blobs.size(), 2u);
    EXPECT_EQ(reread.blobs[0].count, 1u);
    const auto loaded = load_dataset(dir);
    EXPECT_FALSE(loaded[0].rollouts[0].final_answer.has_value());
}

TEST(TraceStore, MixedEmbeddingDimsFailBeforeWriting) {
    const auto dir = scratch_dir("ts-mixed") / "out";
    Dataset d = random_dataset(2, 2, 3, 4, 5, 1);
    d[1].rollouts[0].embeddings["penultimate"].push_back(0.0f);
    EXPECT_THROW(write_dataset(d, dir), InvariantError);
    EXPECT_FALSE(fs::exists(dir));
}

TEST(TraceStore, HeterogeneousKRejected) {
    Dataset d = random_dataset(1, 2, 3, 4, 5, 2);
    Rng rng(1);
    d[0].rollouts[1].k = 3;
    d[0].rollouts[1].logprobs.clear();
    for (int t = 0; t < 3; ++t) {
        auto tok = random_token(rng, 3);
        d[0].rollouts[1].logprobs.insert(d[0].rollouts[1].logprobs.end(), tok.begin(), tok.end());
    }
    const auto v = find_violations(d);
    ASSERT_FALSE(v.empty());
    EXPECT_EQ(v.front().kind, "record");
}

TEST(TraceStore, LoadOrderIgnoresManifestLineOrder) {
    const auto dir = scratch_dir("ts-order");
    const Dataset d = random_dataset(3, 4, 2, 3, 4, 5);
    write_dataset(d, dir);
    std::ifstream in(dir / kManifestName);
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    in.close();
    std::reverse(lines.begin() + 1, lines.end());
    std::ofstream out(dir / kManifestName, std::ios::trunc);
    for (const auto& l : lines) out << l << "\n";
    out.close();
    EXPECT_EQ(load_dataset(dir), d);
}

TEST(TraceStore, OneByteShortBlobIsOffsetViolation) {
    const auto dir = scratch_dir("ts-short");
    write_dataset(random_dataset(2, 2, 3, 4, 5, 9), dir);
    auto bytes = read_bytes(dir / "logprobs.bin");
    bytes.pop_back();
    write_bytes(dir / "logprobs.bin", bytes);
    EXPECT_THROW(load_dataset(dir), FormatError);
    const auto report = validate_dataset(dir);
    EXPECT_FALSE(report.ok());
    EXPECT_GE(count_kind(report, "record"), 1u);
}

TEST(TraceStore, LabelTwoGivesOneViolationWithCoordinates) {
    const auto dir = scratch_dir("ts-label");
    Dataset d = random_dataset(2, 3, 2, 4, 3, 4);
    d[1].rollouts[2].label = 2;
    EXPECT_THROW(write_dataset(d, dir), InvariantError);
    WriteOptions opts;
    opts.skip_validation = true;
    write_dataset(d, dir, opts);
    const auto report = validate_dataset(dir);
    ASSERT_EQ(report.violations.size(), 1u) << report.to_string();
    const auto& v = report.violations[0];
    EXPECT_EQ(v.kind, "label");
    EXPECT_EQ(v.problem_id, d[1].problem_id);
    EXPECT_EQ(v.rollout_id, d[1].rollouts[2].rollout_id);
    EXPECT_THROW(load_dataset(dir), InvariantError);
}

TEST(TraceStore, UnsortedTokensGiveOneViolationEach) {
    const auto dir = scratch_dir("ts-unsorted");
    write_dataset(random_dataset(2, 2, 6, 4, 3, 8), dir);
    // Line 2 is the first rollout. Corrupt tokens 1 and 4 there and token 0
    // of the last rollout (line 5).
    unsort_token(dir, 2, 1);
    unsort_token(dir, 2, 4);
    unsort_token(dir, 5, 0);
    const auto report = validate_dataset(dir);
    EXPECT_EQ(count_kind(report, "token"), 3u) << report.to_string();
    std::vector<std::size_t> tokens;
    for (const auto& v : report.violations) {
        if (v.kind == "token") tokens.push_back(*v.token);
    }
    EXPECT_EQ(tokens, (std::vector<std::size_t>{1, 4, 0}));
    // The edit also breaks the blob checksum.
    EXPECT_EQ(count_kind(report, "blob"), 1u);
}

TEST(TraceStore, ValidateReportsMissingFilesAsViolations) {
    const auto dir = scratch_dir("ts-missing");
    auto report = validate_dataset(dir / "nope.jsonl");
    ASSERT_EQ(report.violations.size(), 1u);
    EXPECT_EQ(report.violations[0].kind, "io");

    write_dataset(random_dataset(1, 2, 2, 3, 3, 1), dir);
    fs::remove(dir / "emb_0.bin");
    report = validate_dataset(dir);
    EXPECT_FALSE(report.ok());
    EXPECT_EQ(count_kind(report, "io"), 1u);
    EXPECT_THROW(load_dataset(dir), IoError);
    EXPECT_THROW(load_dataset(dir / "nope.jsonl"), IoError);
}

TEST(TraceStore, DuplicateRecordsAreReported) {
    const auto dir = scratch_dir("ts-dup");
    write_dataset(random_dataset(1, 2, 2, 3, 3, 1), dir);
    std::ifstream in(dir / kManifestName);
    std::string header, first;
    std::getline(in, header);
    std::getline(in, first);
    in.close();
    std::ofstream(dir / kManifestName, std::ios::app) << first << "\n";
    const auto report = validate_dataset(dir);
    EXPECT_EQ(count_kind(report, "duplicate"), 1u);
}

TEST(TraceStore, WrittenDatasetsAlwaysValidate) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto dir = scratch_dir("ts-valid-" + std::to_string(seed));
        const Dataset d = random_dataset(3, 2 + seed, 1 + seed, 10, 4, seed);
        write_dataset(d, dir);
        const auto report = validate_dataset(dir);
        EXPECT_TRUE(report.ok()) << report.to_string();
        EXPECT_EQ(report.problems, 3u);
        EXPECT_EQ(report.rollouts, 3u * (2 + seed));
    }
}

TEST(TraceStore, MissingLayerTagIsUsageError) {
    const Dataset d = random_dataset(1, 1, 1, 3, 2, 0);
    EXPECT_THROW(d[0].rollouts[0].embedding("frac_0.30"), UsageError);
}
