#include "btm/posterior.hpp"

#include "btm/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace btm {

void PriorConfig::validate() const {
    require(n_sequences >= 1, ErrorKind::config, "prior.n_sequences must be at least 1");
    require(decay > 0.0 && decay < 1.0, ErrorKind::config, "prior.decay must lie in (0, 1)");
    require(block_length >= 2, ErrorKind::config, "prior.block_length must be at least 2");
}

std::vector<double> uniform_prior(std::size_t n) {
    require(n > 0, ErrorKind::invalid_argument, "prior over an empty forest");
    return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

std::vector<double> block_log_likelihoods(const ElmForest& forest, const SequenceBlock& block) {
    require(!forest.empty(), ErrorKind::invalid_argument, "forest has no experts");
    std::vector<double> out;
    out.reserve(forest.size());
    for (const auto& e : forest.experts()) {
        const auto r = forward(forest.config(), e.params, block);
        require(std::isfinite(r.total_log_likelihood), ErrorKind::numeric,
                "expert '" + e.expert_id + "' produced a non-finite likelihood");
        out.push_back(r.total_log_likelihood);
    }
    return out;
}

DomainPosterior posterior_from_likelihoods(std::span<const double> log_likelihoods,
                                           std::span<const double> prior) {
    require(log_likelihoods.size() == prior.size(), ErrorKind::invalid_argument,
            "likelihood and prior lengths differ");
    require(!prior.empty(), ErrorKind::invalid_argument, "posterior over an empty forest");

    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < prior.size(); ++j) {
        require(prior[j] >= 0.0, ErrorKind::invalid_argument, "prior has a negative entry");
        if (prior[j] > 0.0) m = std::max(m, log_likelihoods[j]);
    }
    require(std::isfinite(m), ErrorKind::invalid_argument,
            "prior assigns zero mass to every expert");

    DomainPosterior out;
    out.prior_used.assign(prior.begin(), prior.end());
    out.cumulative_log_likelihoods.assign(log_likelihoods.begin(), log_likelihoods.end());
    out.probs.resize(prior.size());
    double z = 0;
    for (std::size_t j = 0; j < prior.size(); ++j) {
        out.probs[j] = prior[j] > 0.0 ? std::exp(log_likelihoods[j] - m) * prior[j] : 0.0;
        z += out.probs[j];
    }
    for (auto& p : out.probs) p /= z;
    return out;
}

std::vector<double> geometric_prior(std::span<const std::vector<double>> block_posteriors,
                                    double decay) {
    require(!block_posteriors.empty(), ErrorKind::invalid_argument,
            "prior estimation needs at least one block");
    const std::size_t k = block_posteriors.front().size();
    std::vector<double> acc(k, 0.0);
    double weight = 1.0;
    // Most recent block first: weight decay^1, then decay^2, ...
    for (auto it = block_posteriors.rbegin(); it != block_posteriors.rend(); ++it) {
        require(it->size() == k, ErrorKind::invalid_argument, "posterior lengths differ");
        weight *= decay;
        for (std::size_t j = 0; j < k; ++j) acc[j] += weight * (*it)[j];
    }
    double z = 0;
    for (double a : acc) z += a;
    require(z > 0.0, ErrorKind::numeric, "prior estimate has zero mass");
    for (auto& a : acc) a /= z;
    return acc;
}

std::vector<double> estimate_cached_prior(const ElmForest& forest,
                                          std::span<const SequenceBlock> dev_blocks,
                                          const PriorConfig& config) {
    config.validate();
    require(!dev_blocks.empty(), ErrorKind::invalid_argument,
            "prior estimation needs development blocks");
    require(!forest.empty(), ErrorKind::invalid_argument, "forest has no experts");
    const auto uniform = uniform_prior(forest.size());
    // Estimation runs over full-length sequences; a padded tail block carries
    // little evidence yet would receive the largest weight as the most recent.
    const Vocab vocab = Vocab::bytes();
    std::vector<const SequenceBlock*> usable;
    for (const auto& b : dev_blocks) {
        if (std::find(b.tokens.begin(), b.tokens.end(), vocab.pad_id) == b.tokens.end()) {
            usable.push_back(&b);
        }
    }
    if (usable.empty()) {
        for (const auto& b : dev_blocks) usable.push_back(&b);
    }
    const std::size_t n = std::min(config.n_sequences, usable.size());
    std::vector<std::vector<double>> posteriors;
    posteriors.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto ll = block_log_likelihoods(forest, *usable[i]);
        posteriors.push_back(posterior_from_likelihoods(ll, uniform).probs);
    }
    return geometric_prior(posteriors, config.decay);
}

void write_prior_csv(std::ostream& out, const ElmForest& forest, std::span<const double> probs) {
    require(probs.size() == forest.size(), ErrorKind::invalid_argument,
            "prior length does not match the forest");
    out << "expert_id,probability\n";
    out.precision(17);
    for (std::size_t j = 0; j < probs.size(); ++j) {
        out << forest.expert(j).expert_id << ',' << probs[j] << '\n';
    }
}

} // namespace btm
