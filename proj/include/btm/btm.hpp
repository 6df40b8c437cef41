#pragma once

// Branch-Train-Merge lifecycle: seed training, branching experts from
// weighted parameter averages, isolated parallel expert training, merging and
// removal, and the multi-batch driver.

#include "btm/corpus.hpp"
#include "btm/forest.hpp"
#include "btm/posterior.hpp"
#include "btm/trainer.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace btm {

// Branch weights below this are dropped before averaging.
inline constexpr double kBranchWeightFloor = 1e-4;

struct SeedResult {
    ParameterVector params;
    OptimizerState state;
    TrainReport report;
};

// Trains one model for `seed_budget` updates on the balanced pooled stream of
// `pooled`. The schedule length is `train.total_updates`, so later branched
// training can continue the returned optimizer state. A budget of 0 returns
// the initialization untouched with a fresh optimizer state.
SeedResult seed_train(const ModelConfig& model, std::span<const DomainCorpus> pooled,
                      std::size_t seed_budget, const TrainConfig& train, std::size_t block_length,
                      std::uint64_t init_seed, std::uint64_t data_seed);

// Σ w_i θ_i with 64-bit accumulation; all inputs must share one layout.
ParameterVector weighted_average(std::span<const ParameterVector* const> params,
                                 const WeightVector& weights);

// Drops weights below kBranchWeightFloor and renormalizes.
WeightVector sparsify(const WeightVector& weights);

ParameterVector branch(const ElmForest& forest, const WeightVector& weights);

struct BranchFromPosterior {
    WeightVector weights;
    ParameterVector params;
};

// Weights come from the cached-prior estimate over the new domain's dev blocks.
BranchFromPosterior branch_from_posterior(const ElmForest& forest,
                                          std::span<const SequenceBlock> new_domain_dev,
                                          const PriorConfig& prior);

struct ExpertJob {
    std::string expert_id;
    std::string domain_id;
    ParameterVector init;
    // Continued when present; otherwise training starts from a fresh state.
    std::optional<OptimizerState> opt_state;
    Lineage lineage;
    // Invoked on the worker thread; each job owns its stream.
    std::function<std::unique_ptr<BlockSource>()> make_stream;
};

struct ExpertOutcome {
    std::string domain_id;
    std::optional<ExpertModel> expert;
    std::optional<std::string> error;
    TrainReport report;
};

struct ParallelTrainResult {
    std::vector<ExpertOutcome> outcomes;  // in job order
    // Messages exchanged between concurrently training experts.
    std::size_t communication_events = 0;

    std::vector<ExpertModel> successful() const;
};

// Trains each job for `updates` steps, concurrently and in isolation. When
// `keep_optimizer_state` is false the returned experts carry no moments.
ParallelTrainResult train_experts_parallel(const ModelConfig& model, std::vector<ExpertJob> jobs,
                                           const TrainConfig& train, std::size_t updates,
                                           std::size_t workers, bool keep_optimizer_state = false);

// Returns a new forest with `experts` appended. Existing experts are copied
// bit-for-bit; the cached prior is dropped.
ElmForest merge(const ElmForest& forest, std::vector<ExpertModel> experts);

ElmForest remove_expert(const ElmForest& forest, const std::string& domain_id);

struct BtmConfig {
    ModelConfig model;
    TrainConfig train;  // batch_blocks is the dense/seed batch
    PriorConfig prior;
    std::size_t block_length = 128;
    // Updates for the first batch's seed + branched phases.
    std::size_t total_budget = 2000;
    double seed_fraction = 0.5;
    // Updates for batches after the first; default halves per batch starting
    // from the first batch's branched budget.
    std::vector<std::size_t> later_batch_budgets;
    // Expert batch size; 0 splits the seed batch evenly across the batch's experts.
    std::size_t expert_batch_blocks = 0;
    // Later batches branch from averages; their moments restart at zero.
    bool reset_optimizer_for_averaged_branches = true;
    std::size_t workers = 1;
    std::uint64_t seed = 1;
    // Seed corpus; empty means the pooled first batch.
    std::vector<std::string> seed_domains;

    void validate() const;
};

struct BtmRun {
    ElmForest forest;
    SeedResult seed;
    std::vector<ExpertOutcome> outcomes;
    std::size_t communication_events = 0;
};

std::size_t expert_updates_for_batch(const BtmConfig& config, std::size_t batch_index);

// Trains batch `batch_index` (>= 1): each expert branches from the
// posterior-weighted average of `forest` under its domain's dev blocks.
// `seed_state` is only used when optimizer resets are disabled.
ParallelTrainResult train_batch(const ElmForest& forest, std::span<const DomainCorpus> domains,
                                const std::vector<std::string>& batch, const BtmConfig& config,
                                std::size_t batch_index, const OptimizerState& seed_state);

BtmRun run_btm(std::span<const DomainCorpus> domains, const DomainBatchPlan& plan,
               const BtmConfig& config);

const DomainCorpus& find_domain(std::span<const DomainCorpus> domains, const std::string& id);

} // namespace btm
