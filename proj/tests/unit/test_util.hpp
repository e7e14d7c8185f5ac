#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include "bestn/rng.hpp"
#include "bestn/trace_store.hpp"

namespace bestn::test {

namespace fs = std::filesystem;

// Fresh, empty directory under the system temp dir.
inline fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "bestn-tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

inline std::vector<float> token_from_probs(std::initializer_list<double> probs) {
    std::vector<float> out;
    for (double p : probs) out.push_back(static_cast<float>(std::log(p)));
    return out;
}

// Sorted, non-positive top-k log-probs with total mass below one.
inline std::vector<float> random_token(Rng& rng, std::uint32_t k) {
    std::vector<double> w(k + 1);
    double sum = 0.0;
    for (auto& x : w) sum += (x = 0.01 + uniform01(rng));
    std::sort(w.begin(), w.begin() + k, std::greater<>());
    std::vector<float> out;
    for (std::uint32_t j = 0; j < k; ++j) out.push_back(static_cast<float>(std::log(w[j] / sum)));
    return out;
}

inline std::vector<float> random_vector(Rng& rng, std::size_t d) {
    std::vector<float> v(d);
    for (auto& x : v) x = static_cast<float>(standard_normal(rng));
    return v;
}

// Small random dataset with valid traces, answers and one layer per tag.
inline Dataset random_dataset(std::size_t problems, std::size_t rollouts, std::size_t tokens, std::uint32_t k,
                              std::size_t dim, std::uint64_t seed,
                              const std::vector<std::string>& tags = {"penultimate"}) {
    Rng rng(seed);
    Dataset d;
    for (std::size_t i = 0; i < problems; ++i) {
        ProblemGroup g;
        g.problem_id = "q" + std::to_string(i);
        for (std::size_t j = 0; j < rollouts; ++j) {
            RolloutTrace r;
            r.problem_id = g.problem_id;
            r.rollout_id = j;
            r.k = k;
            r.label = uniform01(rng) < 0.4 ? 1 : 0;
            r.final_answer = std::to_string(uniform_index(rng, 4));
            for (std::size_t t = 0; t < tokens; ++t) {
                const auto tok = random_token(rng, k);
                r.logprobs.insert(r.logprobs.end(), tok.begin(), tok.end());
            }
            for (const auto& tag : tags) r.embeddings[tag] = random_vector(rng, dim);
            g.rollouts.push_back(std::move(r));
        }
        d.push_back(std::move(g));
    }
    return d;
}

inline std::vector<unsigned char> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace bestn::test
