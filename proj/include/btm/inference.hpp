#pragma once

// Test-time combination of experts: posterior-weighted output ensembling
// (optionally restricted to the top-k experts) and collapsing the forest into
// one model by parameter averaging.

#include "btm/forest.hpp"
#include "btm/posterior.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace btm {

enum class EnsembleMode { ensemble, average_uniform, average_argmax, average_posterior };

std::string_view to_string(EnsembleMode mode) noexcept;
EnsembleMode parse_ensemble_mode(std::string_view name);

struct EnsembleConfig {
    std::optional<std::size_t> top_k;
    std::vector<double> prior;
    EnsembleMode mode = EnsembleMode::ensemble;
};

// Keeps the k largest entries (ties to the lower index), zeroes the rest and
// renormalizes. k equal to the length returns the input unchanged.
std::vector<double> top_k_restrict(std::span<const double> probs, std::size_t k);

struct EnsembleStep {
    std::vector<double> distribution;  // over the vocabulary
    std::vector<double> posterior;     // over experts
};

// One step of the mixture: posterior from (state, prior), optionally top-k
// restricted, then Σ_j posterior_j · p_j(next token). `expert_log_probs[j]`
// is expert j's next-token log distribution.
EnsembleStep ensemble_step(std::span<const std::span<const float>> expert_log_probs,
                           std::span<const double> state, std::span<const double> prior,
                           std::optional<std::size_t> top_k = std::nullopt);

// Advances each expert's cumulative log-likelihood by its log-probability of
// the realized token.
void advance_state(std::span<double> state, std::span<const std::span<const float>> expert_log_probs,
                   TokenId realized);

struct EnsembleScore {
    double log_likelihood = 0.0;
    std::size_t tokens = 0;
};

// Walks one block from a zero state, scoring every non-pad target.
EnsembleScore ensemble_block(const ElmForest& forest, const SequenceBlock& block,
                             std::span<const double> prior,
                             std::optional<std::size_t> top_k = std::nullopt);

double ensemble_perplexity(const ElmForest& forest, std::span<const SequenceBlock> blocks,
                           const EnsembleConfig& config);

// Collapses the forest into one parameter vector. The argmax and posterior
// modes derive their weights from the cached-prior estimate on `dev_blocks`.
ParameterVector collapse_to_average(const ElmForest& forest, EnsembleMode mode,
                                    std::span<const SequenceBlock> dev_blocks = {},
                                    const PriorConfig& prior = {});

} // namespace btm
