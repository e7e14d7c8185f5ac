#pragma once

// On-disk trace format and in-memory data model for rollout traces.
//
// A dataset directory holds one line-delimited JSON manifest plus SCTR blobs
// (see blob.hpp). The first manifest line is a header record; each further
// line describes one rollout and points into the blobs by byte offset:
//
//   {"record":"header","format":"bestn-traces","version":1,"k":10,
//    "embedding_dim":64,"layer_tags":["penultimate"],"problems":2,
//    "rollouts":6,"rollouts_per_problem":{"3":2},"blobs":[...],"metadata":{}}
//   {"record":"rollout","problem_id":"p0","rollout_id":0,"label":1,
//    "final_answer":"42","tokens":{"blob":"logprobs.bin","offset":20,"count":7},
//    "embeddings":{"penultimate":{"blob":"emb_0.bin","offset":20}}}
//
// Blob paths are relative to the manifest file.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bestn {

inline constexpr std::uint32_t kDefaultTopK = 10;
inline constexpr const char* kManifestName = "manifest.jsonl";

// Top-k natural-log probabilities of one generated token, sorted descending.
using TokenTopK = std::span<const float>;

struct RolloutTrace {
    std::string problem_id;
    std::uint64_t rollout_id = 0;
    int label = 0;
    std::optional<std::string> final_answer;
    std::uint32_t k = kDefaultTopK;
    std::vector<float> logprobs;  // token-major, token_count() * k values
    std::map<std::string, std::vector<float>> embeddings;

    std::size_t token_count() const { return k == 0 ? 0 : logprobs.size() / k; }
    TokenTopK token(std::size_t i) const {
        return TokenTopK(logprobs).subspan(i * k, k);
    }
    // Throws UsageError when the tag is absent.
    const std::vector<float>& embedding(const std::string& layer_tag) const;

    bool operator==(const RolloutTrace&) const = default;
};

struct ProblemGroup {
    std::string problem_id;
    std::vector<RolloutTrace> rollouts;

    bool operator==(const ProblemGroup&) const = default;
};

using Dataset = std::vector<ProblemGroup>;

struct BlobRef {
    std::string name;   // file name relative to the manifest
    std::string role;   // "logprobs" or "embedding"
    std::string layer;  // layer tag for embedding blobs
    std::uint32_t dim = 0;
    std::uint64_t count = 0;
    std::string checksum;
};

struct DatasetManifest {
    std::uint32_t k = kDefaultTopK;
    std::uint32_t embedding_dim = 0;
    std::vector<std::string> layer_tags;
    std::size_t problem_count = 0;
    std::size_t rollout_count = 0;
    std::map<std::size_t, std::size_t> rollouts_per_problem;  // group size -> #problems
    std::vector<BlobRef> blobs;
    std::map<std::string, std::string> metadata;
};

// One invariant violation with the coordinates of the offending record.
struct Violation {
    std::string kind;  // io, format, header, blob, record, label, token, embedding, duplicate, group
    std::size_t line = 0;  // 1-based manifest line, 0 if not applicable
    std::string problem_id;
    std::optional<std::uint64_t> rollout_id;
    std::optional<std::size_t> token;
    std::string message;

    std::string to_string() const;
};

struct ValidationReport {
    std::size_t problems = 0;
    std::size_t rollouts = 0;
    std::size_t tokens = 0;
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }
    std::string to_string() const;
};

struct WriteOptions {
    // Declared k / embedding dim for datasets with no rollouts.
    std::uint32_t k = kDefaultTopK;
    std::uint32_t embedding_dim = 1;
    std::map<std::string, std::string> metadata;
    // Test hook: write even when invariants fail (for corrupted fixtures).
    bool skip_validation = false;
};

// Lists every violation of the in-memory invariants: group shape, unique
// ids, label domain, token validity, uniform k and embedding dims.
std::vector<Violation> find_violations(const Dataset& groups);

// Writes manifest.jsonl and blobs under out_dir (created if needed). Throws
// InvariantError before writing anything if the dataset is invalid.
DatasetManifest write_dataset(const Dataset& groups, const std::filesystem::path& out_dir,
                              const WriteOptions& options = {});

// Loads and fully validates a dataset. Groups are ordered by problem_id and
// rollouts by rollout_id regardless of manifest line order. Throws IoError,
// FormatError or InvariantError describing the first offending record.
Dataset load_dataset(const std::filesystem::path& manifest_path);

// Parses only the header record.
DatasetManifest read_manifest(const std::filesystem::path& manifest_path);

// Checks everything load_dataset checks but never throws: unreadable files
// and malformed lines become violations.
ValidationReport validate_dataset(const std::filesystem::path& manifest_path);

// Accepts either a manifest file or a directory containing manifest.jsonl.
std::filesystem::path resolve_manifest(const std::filesystem::path& path);

}  // namespace bestn
