#include "btm/inference.hpp"

#include "btm/btm.hpp"
#include "btm/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace btm {

std::string_view to_string(EnsembleMode mode) noexcept {
    switch (mode) {
    case EnsembleMode::ensemble: return "ensemble";
    case EnsembleMode::average_uniform: return "average_uniform";
    case EnsembleMode::average_argmax: return "average_argmax";
    case EnsembleMode::average_posterior: return "average_posterior";
    }
    return "ensemble";
}

EnsembleMode parse_ensemble_mode(std::string_view name) {
    if (name == "ensemble") return EnsembleMode::ensemble;
    if (name == "average_uniform" || name == "uniform") return EnsembleMode::average_uniform;
    if (name == "average_argmax" || name == "argmax") return EnsembleMode::average_argmax;
    if (name == "average_posterior" || name == "posterior") return EnsembleMode::average_posterior;
    fail(ErrorKind::invalid_argument, "unknown inference mode '" + std::string(name) + "'");
}

std::vector<double> top_k_restrict(std::span<const double> probs, std::size_t k) {
    require(k >= 1 && k <= probs.size(), ErrorKind::invalid_argument,
            "top-k: k=" + std::to_string(k) + " outside [1, " + std::to_string(probs.size()) + "]");
    std::vector<double> out(probs.begin(), probs.end());
    if (k == probs.size()) return out;

    std::vector<std::size_t> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
    std::fill(out.begin(), out.end(), 0.0);
    double z = 0;
    for (std::size_t i = 0; i < k; ++i) {
        out[order[i]] = probs[order[i]];
        z += probs[order[i]];
    }
    require(z > 0.0, ErrorKind::numeric, "top-k restriction kept zero mass");
    for (auto& p : out) p /= z;
    return out;
}

namespace {

std::vector<double> step_posterior(std::span<const double> state, std::span<const double> prior,
                                   std::optional<std::size_t> top_k) {
    auto post = posterior_from_likelihoods(state, prior).probs;
    if (top_k) post = top_k_restrict(post, *top_k);
    return post;
}

} // namespace

EnsembleStep ensemble_step(std::span<const std::span<const float>> expert_log_probs,
                           std::span<const double> state, std::span<const double> prior,
                           std::optional<std::size_t> top_k) {
    require(!expert_log_probs.empty(), ErrorKind::invalid_argument, "forest has no experts");
    require(state.size() == expert_log_probs.size(), ErrorKind::invalid_argument,
            "state length does not match the number of experts");
    EnsembleStep out;
    out.posterior = step_posterior(state, prior, top_k);
    const std::size_t vocab = expert_log_probs.front().size();
    out.distribution.assign(vocab, 0.0);
    for (std::size_t j = 0; j < expert_log_probs.size(); ++j) {
        const double w = out.posterior[j];
        if (w == 0.0) continue;
        require(expert_log_probs[j].size() == vocab, ErrorKind::invalid_argument,
                "experts disagree on vocabulary size");
        for (std::size_t v = 0; v < vocab; ++v) {
            out.distribution[v] += w * std::exp(static_cast<double>(expert_log_probs[j][v]));
        }
    }
    return out;
}

void advance_state(std::span<double> state, std::span<const std::span<const float>> expert_log_probs,
                   TokenId realized) {
    require(state.size() == expert_log_probs.size(), ErrorKind::invalid_argument,
            "state length does not match the number of experts");
    for (std::size_t j = 0; j < state.size(); ++j) {
        state[j] += static_cast<double>(expert_log_probs[j][static_cast<std::size_t>(realized)]);
    }
}

EnsembleScore ensemble_block(const ElmForest& forest, const SequenceBlock& block,
                             std::span<const double> prior, std::optional<std::size_t> top_k) {
    require(!forest.empty(), ErrorKind::invalid_argument, "forest has no experts");
    require(prior.size() == forest.size(), ErrorKind::invalid_argument,
            "prior has " + std::to_string(prior.size()) + " entries for " +
                std::to_string(forest.size()) + " experts");
    const Vocab vocab = Vocab::bytes();
    std::vector<ForwardResult<float>> results;
    results.reserve(forest.size());
    for (const auto& e : forest.experts()) results.push_back(forward(forest.config(), e.params, block));

    EnsembleScore score;
    std::vector<double> state(forest.size(), 0.0);
    std::vector<std::span<const float>> rows(forest.size());
    for (std::size_t t = 0; t + 1 < block.tokens.size(); ++t) {
        const TokenId target = block.tokens[t + 1];
        if (target == vocab.pad_id) continue;
        for (std::size_t j = 0; j < rows.size(); ++j) rows[j] = results[j].row(t);
        const auto post = step_posterior(state, prior, top_k);
        double p = 0;
        for (std::size_t j = 0; j < rows.size(); ++j) {
            if (post[j] == 0.0) continue;
            p += post[j] * std::exp(static_cast<double>(rows[j][static_cast<std::size_t>(target)]));
        }
        score.log_likelihood += std::log(p);
        ++score.tokens;
        advance_state(state, rows, target);
    }
    return score;
}

double ensemble_perplexity(const ElmForest& forest, std::span<const SequenceBlock> blocks,
                           const EnsembleConfig& config) {
    require(config.mode == EnsembleMode::ensemble, ErrorKind::invalid_argument,
            "ensemble_perplexity scores output ensembles; collapse averaging modes first");
    require(!blocks.empty(), ErrorKind::invalid_argument, "no blocks to evaluate");
    require(!forest.empty(), ErrorKind::invalid_argument, "forest has no experts");
    if (config.top_k) {
        require(*config.top_k >= 1 && *config.top_k <= forest.size(), ErrorKind::invalid_argument,
                "top_k must lie in [1, forest size]");
    }
    double ll = 0;
    std::size_t tokens = 0;
    for (const auto& b : blocks) {
        const auto s = ensemble_block(forest, b, config.prior, config.top_k);
        ll += s.log_likelihood;
        tokens += s.tokens;
    }
    require(tokens > 0, ErrorKind::invalid_argument, "blocks contain no scored tokens");
    return std::exp(-ll / static_cast<double>(tokens));
}

ParameterVector collapse_to_average(const ElmForest& forest, EnsembleMode mode,
                                    std::span<const SequenceBlock> dev_blocks,
                                    const PriorConfig& prior) {
    require(!forest.empty(), ErrorKind::invalid_argument, "forest has no experts");
    switch (mode) {
    case EnsembleMode::average_uniform:
        return branch(forest, WeightVector::uniform(forest.size()));
    case EnsembleMode::average_argmax:
    case EnsembleMode::average_posterior: {
        require(!dev_blocks.empty(), ErrorKind::invalid_argument,
                std::string(to_string(mode)) + " averaging needs development blocks");
        const auto post = estimate_cached_prior(forest, dev_blocks, prior);
        if (mode == EnsembleMode::average_posterior) return branch(forest, WeightVector{post});
        const auto best = static_cast<std::size_t>(
            std::distance(post.begin(), std::max_element(post.begin(), post.end())));
        return branch(forest, WeightVector::one_hot(forest.size(), best));
    }
    case EnsembleMode::ensemble: break;
    }
    fail(ErrorKind::invalid_argument, "ensemble mode does not collapse to a single model");
}

} // namespace btm
