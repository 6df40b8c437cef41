#pragma once

#include "btm/model.hpp"
#include "btm/trainer.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace btm {

struct Lineage {
    std::string seed_checkpoint_id;
    // Expert ids and weights of the average this expert was branched from;
    // empty when branched directly from the seed model.
    std::vector<std::string> branch_sources;
    std::vector<double> branch_weights;
    std::size_t updates_trained = 0;

    bool operator==(const Lineage&) const = default;
};

struct ExpertModel {
    std::string expert_id;
    std::string domain_id;
    ParameterVector params;
    std::optional<OptimizerState> opt_state;
    Lineage lineage;
};

struct WeightVector {
    std::vector<double> weights;

    static WeightVector uniform(std::size_t n);
    static WeightVector one_hot(std::size_t n, std::size_t index);

    std::size_t size() const noexcept { return weights.size(); }
    // Non-negative and summing to one within 1e-9.
    void validate() const;
};

// A cached prior together with the name of the development set it was
// estimated on.
struct CachedPrior {
    std::string label;
    std::vector<double> probs;
};

class ElmForest {
public:
    ElmForest() = default;
    explicit ElmForest(ModelConfig config) : config_(config) {}

    const ModelConfig& config() const noexcept { return config_; }
    std::size_t size() const noexcept { return experts_.size(); }
    bool empty() const noexcept { return experts_.empty(); }

    const std::vector<ExpertModel>& experts() const noexcept { return experts_; }
    const ExpertModel& expert(std::size_t index) const { return experts_.at(index); }
    std::optional<std::size_t> index_of_domain(const std::string& domain_id) const;
    const std::map<std::string, std::string>& domain_index() const noexcept { return domain_index_; }

    const std::optional<CachedPrior>& cached_prior() const noexcept { return cached_prior_; }
    void set_cached_prior(CachedPrior prior);
    void clear_cached_prior() noexcept { cached_prior_.reset(); }

    const std::optional<std::string>& seed_checkpoint() const noexcept { return seed_checkpoint_; }
    void set_seed_checkpoint(std::optional<std::string> id) { seed_checkpoint_ = std::move(id); }

    // Appends an expert; fails on a duplicate expert id or domain.
    void add(ExpertModel expert);
    // Removes the expert of `domain_id`; fails if absent.
    void remove(const std::string& domain_id);

    void validate() const;

private:
    ModelConfig config_;
    std::vector<ExpertModel> experts_;
    std::map<std::string, std::string> domain_index_;
    std::optional<CachedPrior> cached_prior_;
    std::optional<std::string> seed_checkpoint_;
};

} // namespace btm
