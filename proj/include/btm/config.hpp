#pragma once

// Declarative experiment configuration read from JSON. Every section is
// validated before any work starts and unknown keys are rejected.

#include "btm/btm.hpp"
#include "btm/corpus.hpp"
#include "btm/eval.hpp"
#include "btm/inference.hpp"
#include "btm/model.hpp"
#include "btm/posterior.hpp"
#include "btm/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace btm {

struct DataConfig {
    std::vector<DomainRecipe> recipes;
    // Recipes listed here are held out: no expert is trained on them.
    std::vector<std::string> eval_domains;
    std::size_t block_length = 64;
};

struct InferenceConfig {
    EnsembleMode mode = EnsembleMode::ensemble;
    std::optional<std::size_t> top_k;
};

struct ExperimentConfig {
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    // Batch plan and budgets; model/train/block_length are filled from the
    // sibling sections by btm_config().
    BtmConfig btm;
    DomainBatchPlan plan;
    InferenceConfig inference;
    std::vector<std::uint64_t> seeds{1};
    std::filesystem::path output_dir = "runs";
    std::size_t workers = 1;

    void validate() const;
    BtmConfig btm_config(std::uint64_t seed) const;
    std::vector<std::string> train_domains() const;
    bool is_eval_domain(const std::string& domain_id) const;
};

// Reduced configuration that finishes the full pipeline on one laptop core.
ExperimentConfig desk_config();

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

// Per-domain dev/test blocks for evaluation.
std::vector<DomainTestSet> build_test_sets(const ExperimentConfig& config,
                                           std::span<const DomainCorpus> domains);

} // namespace btm
