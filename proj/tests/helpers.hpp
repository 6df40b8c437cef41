#pragma once

#include "btm/btm.hpp"
#include "btm/corpus.hpp"
#include "btm/forest.hpp"
#include "btm/model.hpp"
#include "btm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace btm::test {

inline ModelConfig tiny_config() {
    ModelConfig c;
    c.d_model = 16;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_ff = 32;
    c.max_seq_len = 32;
    return c;
}

inline SequenceBlock random_block(std::size_t length, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    SequenceBlock b;
    b.tokens.push_back(Vocab::bytes().bod_id);
    std::uniform_int_distribution<int> byte(0, 255);
    while (b.tokens.size() < length) b.tokens.push_back(byte(rng));
    return b;
}

inline std::vector<SequenceBlock> random_blocks(std::size_t n, std::size_t length, std::uint64_t seed) {
    std::vector<SequenceBlock> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(random_block(length, derive_seed(seed, i)));
    return out;
}

inline ExpertModel expert_for(const std::string& domain, ParameterVector params) {
    ExpertModel e;
    e.expert_id = "elm-" + domain;
    e.domain_id = domain;
    e.params = std::move(params);
    return e;
}

// Forest of independently initialized experts named d0, d1, ...
inline ElmForest random_forest(const ModelConfig& config, std::size_t n, std::uint64_t seed) {
    ElmForest f(config);
    for (std::size_t i = 0; i < n; ++i) {
        f.add(expert_for("d" + std::to_string(i), init_params(config, derive_seed(seed, i))));
    }
    return f;
}

// Small two-split corpora from real generators, for training smoke tests.
inline std::vector<DomainCorpus> small_domains(std::vector<std::string> generators, std::size_t train_tokens,
                                               std::uint64_t seed) {
    std::vector<DomainRecipe> recipes;
    for (const auto& g : generators) recipes.push_back({g, g, {}, train_tokens, 1500, 1500});
    return generate_synthetic_domains(recipes, seed);
}

// Oracle: central differences in 64-bit on a d_model=16, one-layer model.
// Parameters are jittered so layer-norm gains and biases are not at their
// symmetric init values. Returns the worst relative error over 200 random
// coordinates.
inline double worst_gradient_error(bool tied) {
    auto c = tiny_config();
    c.tie_embeddings = tied;
    auto p = convert<double>(init_params(c, 21));
    std::mt19937_64 rng(77);
    std::normal_distribution<double> jitter(0.0, 0.1);
    for (auto& x : p.values) x += jitter(rng);
    const std::vector<SequenceBlock> batch{random_block(12, 1), random_block(12, 2)};
    const auto lg = loss_and_grad(c, p, batch);

    auto loss_at = [&](const ParameterVector64& q) {
        double ll = 0;
        std::size_t n = 0;
        for (const auto& b : batch) {
            const auto r = forward(c, q, b);
            ll += r.total_log_likelihood;
            n += r.token_count;
        }
        return -ll / double(n);
    };

    const double h = 1e-5;
    std::uniform_int_distribution<std::size_t> coord(0, p.size() - 1);
    double worst = std::abs(loss_at(p) - lg.loss) / lg.loss;
    for (int k = 0; k < 200; ++k) {
        const std::size_t i = coord(rng);
        auto q = p;
        q.values[i] = p.values[i] + h;
        const double up = loss_at(q);
        q.values[i] = p.values[i] - h;
        const double down = loss_at(q);
        const double fd = (up - down) / (2 * h);
        const double a = lg.grad.values[i];
        // Floor the denominator: at |g| ~ 1e-7 the difference quotient itself
        // carries ~1e-11 absolute roundoff.
        worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6}));
    }
    return worst;
}

} // namespace btm::test
