#include "btm/forest.hpp"

#include "btm/error.hpp"

#include <cmath>
#include <numeric>

namespace btm {

WeightVector WeightVector::uniform(std::size_t n) {
    require(n > 0, ErrorKind::invalid_argument, "uniform weights need at least one expert");
    return WeightVector{std::vector<double>(n, 1.0 / static_cast<double>(n))};
}

WeightVector WeightVector::one_hot(std::size_t n, std::size_t index) {
    require(index < n, ErrorKind::invalid_argument, "one-hot index out of range");
    WeightVector w{std::vector<double>(n, 0.0)};
    w.weights[index] = 1.0;
    return w;
}

void WeightVector::validate() const {
    require(!weights.empty(), ErrorKind::invalid_argument, "weight vector is empty");
    double sum = 0;
    for (double w : weights) {
        require(std::isfinite(w) && w >= 0.0, ErrorKind::invalid_argument,
                "weights must be finite and non-negative");
        sum += w;
    }
    require(std::abs(sum - 1.0) <= 1e-9, ErrorKind::invalid_argument,
            "weights must sum to 1 (got " + std::to_string(sum) + ")");
}

std::optional<std::size_t> ElmForest::index_of_domain(const std::string& domain_id) const {
    for (std::size_t i = 0; i < experts_.size(); ++i) {
        if (experts_[i].domain_id == domain_id) return i;
    }
    return std::nullopt;
}

void ElmForest::set_cached_prior(CachedPrior prior) {
    require(prior.probs.size() == experts_.size(), ErrorKind::invalid_argument,
            "cached prior needs one entry per expert");
    double sum = 0;
    for (double p : prior.probs) {
        require(p >= 0.0, ErrorKind::invalid_argument, "cached prior has a negative entry");
        sum += p;
    }
    require(std::abs(sum - 1.0) <= 1e-9, ErrorKind::invalid_argument,
            "cached prior must sum to 1");
    cached_prior_ = std::move(prior);
}

void ElmForest::add(ExpertModel expert) {
    require(!domain_index_.contains(expert.domain_id), ErrorKind::conflict,
            "domain '" + expert.domain_id + "' already has an expert in the forest");
    for (const auto& e : experts_) {
        require(e.expert_id != expert.expert_id, ErrorKind::conflict,
                "expert id '" + expert.expert_id + "' is already in the forest");
    }
    require(expert.params.layout == ParameterLayout(config_), ErrorKind::invalid_argument,
            "expert '" + expert.expert_id + "' does not match the forest's model config");
    domain_index_[expert.domain_id] = expert.expert_id;
    experts_.push_back(std::move(expert));
    cached_prior_.reset();
}

void ElmForest::remove(const std::string& domain_id) {
    const auto idx = index_of_domain(domain_id);
    require(idx.has_value(), ErrorKind::not_found, "no expert for domain '" + domain_id + "'");
    experts_.erase(experts_.begin() + static_cast<std::ptrdiff_t>(*idx));
    domain_index_.erase(domain_id);
    cached_prior_.reset();
}

void ElmForest::validate() const {
    require(domain_index_.size() == experts_.size(), ErrorKind::invalid_argument,
            "domain index is out of sync with the expert list");
    const ParameterLayout layout(config_);
    for (const auto& e : experts_) {
        const auto it = domain_index_.find(e.domain_id);
        require(it != domain_index_.end() && it->second == e.expert_id,
                ErrorKind::invalid_argument, "domain index does not map '" + e.domain_id + "'");
        require(e.params.layout == layout, ErrorKind::invalid_argument,
                "expert '" + e.expert_id + "' layout does not match the forest config");
    }
    if (cached_prior_) {
        require(cached_prior_->probs.size() == experts_.size(), ErrorKind::invalid_argument,
                "cached prior length does not match the forest");
        const double sum = std::accumulate(cached_prior_->probs.begin(), cached_prior_->probs.end(), 0.0);
        require(std::abs(sum - 1.0) <= 1e-9, ErrorKind::invalid_argument,
                "cached prior must sum to 1");
    }
}

} // namespace btm
