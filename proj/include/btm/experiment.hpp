#pragma once

// Scripted desk-scale experiments. Each runs the full pipeline with pinned
// seeds, writes CSV artifacts and a rendered table, and checks an ordering
// predicate on the measured values.

#include "btm/btm.hpp"
#include "btm/config.hpp"
#include "btm/eval.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace btm {

// Everything trained for one seed of an experiment config.
struct SeedRun {
    std::uint64_t seed = 0;
    std::vector<DomainCorpus> domains;
    std::vector<DomainTestSet> test_sets;
    BtmRun btm;
    ParameterVector dense;
    double btm_seconds = 0.0;
    double dense_seconds = 0.0;
};

std::vector<DomainCorpus> generate_domains(const ExperimentConfig& config, std::uint64_t seed);

// Compute-matched dense baseline: one model, batch train.batch_blocks, for
// btm.total_budget updates on the balanced stream of all training domains.
ParameterVector train_dense(const ExperimentConfig& config, std::span<const DomainCorpus> domains,
                            std::uint64_t seed);

SeedRun run_seed(const ExperimentConfig& config, std::uint64_t seed);

// Pools the train and valid documents of `domain_ids`, shuffles them and
// deals them into `n_shards` pseudo-domains named "shard-<i>".
std::vector<DomainCorpus> random_split_shards(std::span<const DomainCorpus> domains,
                                              std::span<const std::string> domain_ids,
                                              std::size_t n_shards, std::uint64_t seed);

// Forest trained on random shards with the same budgets as `config`.
ElmForest train_random_split_forest(const ExperimentConfig& config,
                                    std::span<const DomainCorpus> domains, std::uint64_t seed);

// effect[i][j]: ensemble perplexity on train domain i after removing expert j,
// divided by the full forest's perplexity on i.
struct RemovalEffects {
    std::vector<std::string> domains;
    std::vector<double> full;
    std::vector<std::vector<double>> removed;
};
RemovalEffects removal_effects(const ElmForest& forest, std::span<const DomainTestSet> sets,
                               const PriorConfig& prior);

struct Measurement {
    std::string name;
    double value = 0.0;
};

struct ReproduceResult {
    std::string experiment;
    std::string predicate;
    bool passed = false;
    std::vector<Measurement> measurements;
    std::string table;
};

std::span<const std::string_view> experiment_names() noexcept;

// Runs one named experiment, writing artifacts under out_dir/<name>/.
ReproduceResult reproduce(std::string_view name, const ExperimentConfig& config,
                          const std::filesystem::path& out_dir);

} // namespace btm
