#pragma once

// Synthetic trace generator with controllable links between embeddings,
// token confidence and correctness.
//
// Each problem gets a correct rate p_i, spread over the problems as
// stratified quantiles of Beta(base * kappa, (1 - base) * kappa), and
// rollout labels are Bernoulli(p_i). For a layer with separability s the
// embedding is +/- 4s * u plus unit isotropic noise, u a random unit vector
// per layer. A per-rollout certainty latent
//
//   c = rho * z_i + sqrt(1 - rho^2) * eps,   z_i = Phi^-1(quantile of p_i)
//
// sets the sampling temperature of every token, so confidence tracks problem
// difficulty with sign and strength rho but carries no information about
// which rollout within a problem is correct.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bestn/kv_config.hpp"
#include "bestn/trace_store.hpp"

namespace bestn {

struct LayerSpec {
    std::string tag;
    double separability = 1.0;  // in [0, 1]

    bool operator==(const LayerSpec&) const = default;
};

struct SynthConfig {
    std::size_t problems = 400;
    std::size_t rollouts = 16;
    std::size_t tokens = 128;
    std::uint32_t k = kDefaultTopK;
    std::uint32_t embedding_dim = 64;
    std::vector<LayerSpec> layers = {{"penultimate", 1.0}};
    double confidence_informativeness = 0.0;  // in [-1, 1]
    double base_rate = 0.3;                   // in (0, 1)
    double difficulty_concentration = 1.0;    // kappa > 0; small = bimodal p_i
    std::size_t answer_vocab = 50;            // 0: no final answers
    std::uint64_t seed = 0;
    // Seed of the per-layer directions u; defaults to `seed`. A calibration
    // set shares it with the evaluation set it is meant to train for.
    std::optional<std::uint64_t> geometry_seed;
    std::string id_prefix = "p";

    void validate() const;  // throws UsageError
    std::map<std::string, std::string> metadata() const;
};

// Every key is optional and defaults as above; unknown keys are rejected.
// `layers` is "tag:separability,tag:separability".
SynthConfig synth_config_from(const KvConfig& kv);

Dataset generate(const SynthConfig& config);

// Named fixtures: separable, noise, miscalibrated, two-layer, moderate.
// Each has an evaluation set and a calibration set drawn from the same
// geometry with disjoint problem ids.
struct Fixture {
    std::string name;
    SynthConfig eval_config;
    SynthConfig calibration_config;
    Dataset eval;
    Dataset calibration;
};

std::vector<std::string> fixture_names();
Fixture fixture_configs(const std::string& name);  // configs only, no data
Fixture generate_fixture(const std::string& name);

// Writes <out>/eval and <out>/calibration; returns both manifest paths.
std::vector<std::filesystem::path> write_fixture(const Fixture& fixture, const std::filesystem::path& out_dir);

}  // namespace bestn
