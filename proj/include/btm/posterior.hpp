#pragma once

// Bayes-rule domain posterior over experts and the cached prior estimated
// from development blocks.

#include "btm/forest.hpp"

#include <iosfwd>
#include <span>
#include <vector>

namespace btm {

struct PriorConfig {
    std::size_t n_sequences = 100;
    double decay = 0.3;
    std::size_t block_length = 128;

    void validate() const;
};

struct DomainPosterior {
    std::vector<double> probs;
    std::vector<double> prior_used;
    std::vector<double> cumulative_log_likelihoods;
};

// log p(block | D = j) for each expert j, summed over scored positions.
std::vector<double> block_log_likelihoods(const ElmForest& forest, const SequenceBlock& block);

// probs_j ∝ exp(loglik_j - max) * prior_j
DomainPosterior posterior_from_likelihoods(std::span<const double> log_likelihoods,
                                           std::span<const double> prior);

// Combines per-block posteriors, ordered oldest first, with weight decay^i
// where i = 1 is the most recent block, then normalizes over experts.
std::vector<double> geometric_prior(std::span<const std::vector<double>> block_posteriors,
                                    double decay);

// Uses the first min(N, |dev|) blocks; each block's posterior is taken under
// a uniform prior.
std::vector<double> estimate_cached_prior(const ElmForest& forest,
                                          std::span<const SequenceBlock> dev_blocks,
                                          const PriorConfig& config);

std::vector<double> uniform_prior(std::size_t n);

// `expert_id,probability` rows.
void write_prior_csv(std::ostream& out, const ElmForest& forest, std::span<const double> probs);

} // namespace btm
