#include "btm/btm.hpp"

#include "btm/error.hpp"
#include "btm/parallel.hpp"
#include "btm/rng.hpp"

#include <cmath>

namespace btm {

const DomainCorpus& find_domain(std::span<const DomainCorpus> domains, const std::string& id) {
    for (const auto& d : domains) {
        if (d.domain_id == id) return d;
    }
    fail(ErrorKind::not_found, "unknown domain '" + id + "'");
}

SeedResult seed_train(const ModelConfig& model, std::span<const DomainCorpus> pooled,
                      std::size_t seed_budget, const TrainConfig& train_config,
                      std::size_t block_length, std::uint64_t init_seed, std::uint64_t data_seed) {
    require(seed_budget <= train_config.total_updates, ErrorKind::invalid_argument,
            "seed budget exceeds the schedule length");
    SeedResult out;
    auto init = init_params(model, init_seed);
    if (seed_budget == 0) {
        out.state = OptimizerState::fresh(init.size());
        out.params = std::move(init);
        return out;
    }
    require(!pooled.empty(), ErrorKind::invalid_argument, "seed training needs at least one domain");
    BalancedSampler stream(pooled, block_length, Vocab::bytes(), data_seed);
    auto r = train(model, std::move(init), std::nullopt, stream, train_config, seed_budget);
    out.params = std::move(r.params);
    out.state = std::move(r.state);
    out.report = std::move(r.report);
    return out;
}

ParameterVector weighted_average(std::span<const ParameterVector* const> params,
                                 const WeightVector& weights) {
    require(!params.empty(), ErrorKind::invalid_argument, "cannot average an empty set of experts");
    require(params.size() == weights.size(), ErrorKind::invalid_argument,
            "weight vector has " + std::to_string(weights.size()) + " entries for " +
                std::to_string(params.size()) + " experts");
    weights.validate();
    const auto& layout = params.front()->layout;
    for (const auto* p : params) {
        require(p->layout == layout, ErrorKind::invalid_argument,
                "parameter layouts differ; experts must share one model config");
    }

    ParameterVector out(layout);
    std::vector<double> acc(layout.total(), 0.0);
    for (const auto& seg : layout.segments()) {
        for (std::size_t j = 0; j < params.size(); ++j) {
            const double w = weights.weights[j];
            if (w == 0.0) continue;
            const float* src = params[j]->values.data() + seg.offset;
            double* dst = acc.data() + seg.offset;
            for (std::size_t i = 0; i < seg.length; ++i) dst[i] += w * static_cast<double>(src[i]);
        }
    }
    for (std::size_t i = 0; i < acc.size(); ++i) out.values[i] = static_cast<float>(acc[i]);
    return out;
}

WeightVector sparsify(const WeightVector& weights) {
    weights.validate();
    WeightVector out = weights;
    double sum = 0;
    for (auto& w : out.weights) {
        if (w < kBranchWeightFloor) w = 0.0;
        sum += w;
    }
    // A floor above every entry cannot happen for a valid vector with n <= 1e4,
    // but keep the original rather than dividing by zero.
    if (sum <= 0.0) return weights;
    if (sum != 1.0) {
        for (auto& w : out.weights) w /= sum;
    }
    return out;
}

ParameterVector branch(const ElmForest& forest, const WeightVector& weights) {
    require(!forest.empty(), ErrorKind::invalid_argument, "cannot branch from an empty forest");
    require(weights.size() == forest.size(), ErrorKind::invalid_argument,
            "weight vector has " + std::to_string(weights.size()) + " entries for " +
                std::to_string(forest.size()) + " experts");
    std::vector<const ParameterVector*> ptrs;
    ptrs.reserve(forest.size());
    for (const auto& e : forest.experts()) ptrs.push_back(&e.params);
    return weighted_average(ptrs, sparsify(weights));
}

BranchFromPosterior branch_from_posterior(const ElmForest& forest,
                                          std::span<const SequenceBlock> new_domain_dev,
                                          const PriorConfig& prior) {
    require(!new_domain_dev.empty(), ErrorKind::invalid_argument,
            "branching from the posterior needs a non-empty sample of the new domain");
    require(!forest.empty(), ErrorKind::invalid_argument, "cannot branch from an empty forest");
    BranchFromPosterior out;
    out.weights.weights = estimate_cached_prior(forest, new_domain_dev, prior);
    out.params = branch(forest, out.weights);
    return out;
}

std::vector<ExpertModel> ParallelTrainResult::successful() const {
    std::vector<ExpertModel> out;
    for (const auto& o : outcomes) {
        if (o.expert) out.push_back(*o.expert);
    }
    return out;
}

ParallelTrainResult train_experts_parallel(const ModelConfig& model, std::vector<ExpertJob> jobs,
                                           const TrainConfig& train_config, std::size_t updates,
                                           std::size_t workers, bool keep_optimizer_state) {
    ParallelTrainResult result;
    result.outcomes.resize(jobs.size());
    // Each job reads only its own inputs and writes only its own outcome slot.
    const auto errors = run_indexed(jobs.size(), workers, [&](std::size_t i) {
        auto& job = jobs[i];
        auto& outcome = result.outcomes[i];
        outcome.domain_id = job.domain_id;
        auto stream = job.make_stream();
        auto r = train(model, std::move(job.init), std::move(job.opt_state), *stream, train_config,
                       updates);
        ExpertModel expert;
        expert.expert_id = job.expert_id;
        expert.domain_id = job.domain_id;
        expert.params = std::move(r.params);
        if (keep_optimizer_state) expert.opt_state = std::move(r.state);
        expert.lineage = std::move(job.lineage);
        expert.lineage.updates_trained += r.report.updates;
        outcome.report = std::move(r.report);
        outcome.expert = std::move(expert);
    });
    for (std::size_t i = 0; i < errors.size(); ++i) {
        if (!errors[i]) continue;
        result.outcomes[i].domain_id = jobs[i].domain_id;
        result.outcomes[i].expert.reset();
        try {
            std::rethrow_exception(errors[i]);
        } catch (const std::exception& e) {
            result.outcomes[i].error = e.what();
        } catch (...) {
            result.outcomes[i].error = "unknown error";
        }
    }
    return result;
}

ElmForest merge(const ElmForest& forest, std::vector<ExpertModel> experts) {
    ElmForest out = forest;
    for (auto& e : experts) out.add(std::move(e));
    out.clear_cached_prior();
    return out;
}

ElmForest remove_expert(const ElmForest& forest, const std::string& domain_id) {
    ElmForest out = forest;
    out.remove(domain_id);
    return out;
}

void BtmConfig::validate() const {
    model.validate();
    train.validate();
    prior.validate();
    require(block_length >= 2 && block_length <= model.max_seq_len, ErrorKind::config,
            "block_length must lie in [2, model.max_seq_len]");
    require(total_budget >= 1, ErrorKind::config, "btm.total_budget must be at least 1");
    require(seed_fraction >= 0.0 && seed_fraction <= 1.0, ErrorKind::config,
            "btm.seed_fraction must lie in [0, 1]");
    require(workers >= 1, ErrorKind::config, "workers must be at least 1");
}

std::size_t expert_updates_for_batch(const BtmConfig& config, std::size_t batch_index) {
    const auto seed_updates = static_cast<std::size_t>(
        std::llround(config.seed_fraction * static_cast<double>(config.total_budget)));
    const std::size_t first = config.total_budget - seed_updates;
    if (batch_index == 0) return first;
    if (batch_index - 1 < config.later_batch_budgets.size()) {
        return config.later_batch_budgets[batch_index - 1];
    }
    return std::max<std::size_t>(1, first >> batch_index);
}

namespace {

std::size_t expert_batch(const BtmConfig& config, std::size_t experts_in_batch) {
    if (config.expert_batch_blocks > 0) return config.expert_batch_blocks;
    return std::max<std::size_t>(1, config.train.batch_blocks / std::max<std::size_t>(1, experts_in_batch));
}

std::function<std::unique_ptr<BlockSource>()> domain_stream(const DomainCorpus& corpus,
                                                             std::size_t block_length,
                                                             std::uint64_t seed) {
    return [&corpus, block_length, seed] {
        return std::make_unique<BalancedSampler>(std::span<const DomainCorpus>(&corpus, 1),
                                                 block_length, Vocab::bytes(), seed);
    };
}

void collect(BtmRun& run, ParallelTrainResult&& result) {
    std::string failures;
    for (const auto& o : result.outcomes) {
        if (o.error) failures += (failures.empty() ? "" : "; ") + o.domain_id + ": " + *o.error;
    }
    run.communication_events += result.communication_events;
    for (auto& o : result.outcomes) run.outcomes.push_back(o);
    require(failures.empty(), ErrorKind::worker, "expert training failed: " + failures);
}

} // namespace

ParallelTrainResult train_batch(const ElmForest& forest, std::span<const DomainCorpus> domains,
                                const std::vector<std::string>& batch, const BtmConfig& config,
                                std::size_t batch_index, const OptimizerState& seed_state) {
    require(batch_index >= 1, ErrorKind::invalid_argument,
            "the first batch is trained from the seed by run_btm");
    const std::size_t updates = expert_updates_for_batch(config, batch_index);
    TrainConfig expert_train = config.train;
    expert_train.total_updates = std::max<std::size_t>(1, updates);
    expert_train.batch_blocks = expert_batch(config, batch.size());

    std::vector<ExpertJob> jobs;
    for (const auto& d : batch) {
        const auto& corpus = find_domain(domains, d);
        const auto dev = pack_documents(corpus, Split::valid, config.block_length, Vocab::bytes());
        auto branched = branch_from_posterior(forest, dev, config.prior);
        ExpertJob job;
        job.expert_id = "elm-" + d;
        job.domain_id = d;
        job.init = std::move(branched.params);
        if (!config.reset_optimizer_for_averaged_branches) {
            OptimizerState carried = seed_state;
            carried.schedule_position = 0;
            job.opt_state = std::move(carried);
        }
        job.lineage.seed_checkpoint_id = forest.seed_checkpoint().value_or("seed");
        for (const auto& e : forest.experts()) job.lineage.branch_sources.push_back(e.expert_id);
        job.lineage.branch_weights = branched.weights.weights;
        job.make_stream = domain_stream(corpus, config.block_length,
                                        derive_seed(config.seed, "expert:" + d));
        jobs.push_back(std::move(job));
    }
    return train_experts_parallel(config.model, std::move(jobs), expert_train, updates, config.workers);
}

BtmRun run_btm(std::span<const DomainCorpus> domains, const DomainBatchPlan& plan,
               const BtmConfig& config) {
    config.validate();
    plan.validate();
    for (const auto& d : plan.all_domains()) find_domain(domains, d);

    const auto& first = plan.batches.front();
    const std::size_t seed_updates = config.total_budget - expert_updates_for_batch(config, 0);

    std::vector<DomainCorpus> seed_corpora;
    for (const auto& d : config.seed_domains.empty() ? first : config.seed_domains) {
        seed_corpora.push_back(find_domain(domains, d));
    }

    TrainConfig schedule = config.train;
    schedule.total_updates = config.total_budget;

    BtmRun run;
    run.seed = seed_train(config.model, seed_corpora, seed_updates, schedule, config.block_length,
                          derive_seed(config.seed, "init"), derive_seed(config.seed, "seed-data"));
    run.forest = ElmForest(config.model);
    run.forest.set_seed_checkpoint("seed");

    // First batch: every expert starts from the seed and continues its schedule.
    {
        TrainConfig expert_train = schedule;
        expert_train.batch_blocks = expert_batch(config, first.size());
        std::vector<ExpertJob> jobs;
        for (const auto& d : first) {
            ExpertJob job;
            job.expert_id = "elm-" + d;
            job.domain_id = d;
            job.init = run.seed.params;
            job.opt_state = run.seed.state;
            job.lineage.seed_checkpoint_id = "seed";
            job.lineage.updates_trained = seed_updates;
            job.make_stream = domain_stream(find_domain(domains, d), config.block_length,
                                            derive_seed(config.seed, "expert:" + d));
            jobs.push_back(std::move(job));
        }
        auto result = train_experts_parallel(config.model, std::move(jobs), expert_train,
                                             expert_updates_for_batch(config, 0), config.workers);
        auto experts = result.successful();
        collect(run, std::move(result));
        run.forest = merge(run.forest, std::move(experts));
    }

    // Later batches branch from posterior-weighted averages of the current forest.
    for (std::size_t b = 1; b < plan.batches.size(); ++b) {
        auto result = train_batch(run.forest, domains, plan.batches[b], config, b, run.seed.state);
        auto experts = result.successful();
        collect(run, std::move(result));
        run.forest = merge(run.forest, std::move(experts));
    }
    return run;
}

} // namespace btm
