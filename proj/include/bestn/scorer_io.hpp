#pragma once

// Scorer files: a key-value text header next to an SCTR weight blob.
//
//   scorer.txt        format/version, kind, spec fields, counts, metadata
//   scorer.bin        one f64 row: params, BN buffers, feature mean, scale
//   scorer.log.tsv    per-epoch training log
//
// An ensemble header lists its member headers and convex weights.

#include <filesystem>
#include <memory>
#include <vector>

#include "bestn/scorer.hpp"

namespace bestn {

// Writes `header_path` plus its .bin and .log.tsv siblings; returns every
// file written.
std::vector<std::filesystem::path> save_scorer(const TrainedScorer& scorer, const std::filesystem::path& header_path);
TrainedScorer load_scorer(const std::filesystem::path& header_path);

std::vector<std::filesystem::path> save_ensemble(const EnsembleScorer& ensemble,
                                                 const std::filesystem::path& header_path);
EnsembleScorer load_ensemble(const std::filesystem::path& header_path);

// Loads either kind, dispatching on the header's `kind`.
std::shared_ptr<const RolloutScorer> load_any_scorer(const std::filesystem::path& header_path);

}  // namespace bestn
