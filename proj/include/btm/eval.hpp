#pragma once

// Perplexity, per-domain report tables and the synchronized-vs-independent
// training throughput harness.

#include "btm/corpus.hpp"
#include "btm/forest.hpp"
#include "btm/inference.hpp"
#include "btm/model.hpp"
#include "btm/posterior.hpp"
#include "btm/trainer.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace btm {

struct PerplexityStats {
    double log_likelihood = 0.0;
    std::size_t tokens = 0;

    double perplexity() const;
    PerplexityStats& operator+=(const PerplexityStats& other);
};

PerplexityStats perplexity_stats(const ModelConfig& config, const ParameterVector& params,
                                 std::span<const SequenceBlock> blocks);
double perplexity(const ModelConfig& config, const ParameterVector& params,
                  std::span<const SequenceBlock> blocks);

enum class DomainKind { train, eval };

struct DomainTestSet {
    std::string domain_id;
    DomainKind kind = DomainKind::train;
    std::vector<SequenceBlock> dev;
    std::vector<SequenceBlock> test;
};

struct NamedModel {
    std::string label;
    ParameterVector params;
};

struct ModeSpec {
    EnsembleMode mode = EnsembleMode::ensemble;
    std::optional<std::size_t> top_k;

    std::string label() const;
};

struct EvalRow {
    std::string domain;
    DomainKind kind = DomainKind::train;
    std::string model_label;
    std::string mode;
    std::optional<std::size_t> top_k;
    double perplexity = 0.0;
    std::size_t token_count = 0;
};

struct EvalAggregates {
    std::optional<double> train_mean;
    std::optional<double> eval_mean;
    std::optional<double> overall_mean;
};

struct EvalReport {
    std::vector<EvalRow> rows;

    // Model labels in first-appearance order.
    std::vector<std::string> models() const;
    // Unweighted means of per-domain perplexities for one model.
    EvalAggregates aggregates(const std::string& model_label) const;
    // Token-pooled perplexity over a model's rows, for comparison.
    std::optional<double> pooled_perplexity(const std::string& model_label) const;
    const EvalRow& row(const std::string& domain, const std::string& model_label) const;
};

// Perplexity of the forest under one mode on one domain. Ensemble modes use a
// prior estimated on the domain's dev blocks.
EvalRow evaluate_forest(const ElmForest& forest, const DomainTestSet& set, const ModeSpec& mode,
                        const PriorConfig& prior);

// One row per (domain, model): dense baselines first, then each forest mode.
EvalReport build_report(const ElmForest& forest, std::span<const NamedModel> dense_baselines,
                        std::span<const DomainTestSet> test_sets, std::span<const ModeSpec> modes,
                        const PriorConfig& prior, const std::string& forest_label = "forest");

// `domain,kind,model,mode,top_k,perplexity,tokens`
void write_report_csv(std::ostream& out, const EvalReport& report);
// `domain,mode,top_k,perplexity,tokens`
void write_inference_csv(std::ostream& out, std::span<const EvalRow> rows);
// Plain-text table: one line per model with train/eval/all means.
void render_table(std::ostream& out, const EvalReport& report, const std::string& title);

struct EfficiencyConfig {
    std::size_t n_workers = 4;
    TrainConfig train;
    std::size_t block_length = 64;
    std::size_t repeats = 3;
    std::uint64_t seed = 1;
};

struct EfficiencyResult {
    std::size_t n_workers = 0;
    double synchronized_updates_per_second = 0.0;
    double parallel_updates_per_second = 0.0;
    std::size_t synchronized_communication_events = 0;
    std::size_t parallel_communication_events = 0;

    // Normalized so synchronized training is 1.00.
    double parallel_ratio() const;
};

// Runs the same per-worker workload with and without gradient all-reduce and
// reports the median per-worker throughput of each mode over `repeats`.
// Timings depend on the machine.
EfficiencyResult efficiency_harness(const ModelConfig& model, std::span<const DomainCorpus> domains,
                                    const EfficiencyConfig& config);

// `mode,n_workers,updates_per_second,normalized,communication_events`
void write_efficiency_csv(std::ostream& out, std::span<const EfficiencyResult> results);

} // namespace btm
