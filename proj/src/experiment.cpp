#include "btm/experiment.hpp"

#include "btm/error.hpp"
#include "btm/rng.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace btm {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::ofstream open_csv(const std::filesystem::path& path) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write '" + path.string() + "'");
    out << std::setprecision(10);
    return out;
}

double mean(std::span<const double> xs) {
    double s = 0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

std::vector<DomainCorpus> select(std::span<const DomainCorpus> domains,
                                 std::span<const std::string> ids) {
    std::vector<DomainCorpus> out;
    for (const auto& id : ids) out.push_back(find_domain(domains, id));
    return out;
}

const std::vector<ModeSpec>& ensemble_only() {
    static const std::vector<ModeSpec> modes{{EnsembleMode::ensemble, std::nullopt}};
    return modes;
}

std::string fmt(double v, int precision = 3) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

// ---------------------------------------------------------------------------

ReproduceResult run_core(const ExperimentConfig& config, const std::filesystem::path& dir) {
    ReproduceResult r;
    r.predicate = "mean over seeds of forest-ensemble overall perplexity < dense overall perplexity";
    std::vector<double> forest_all, dense_all;
    std::ostringstream table;
    auto summary = open_csv(dir / "core_summary.csv");
    summary << "seed,model,train_mean,eval_mean,overall_mean\n";
    for (auto seed : config.seeds) {
        const auto run = run_seed(config, seed);
        const std::vector<NamedModel> dense{{"dense", run.dense}};
        const std::vector<ModeSpec> modes{{EnsembleMode::ensemble, std::nullopt},
                                          {EnsembleMode::average_uniform, std::nullopt},
                                          {EnsembleMode::average_posterior, std::nullopt}};
        const auto report = build_report(run.btm.forest, dense, run.test_sets, modes, config.btm.prior);
        auto csv = open_csv(dir / ("core_seed" + std::to_string(seed) + ".csv"));
        write_report_csv(csv, report);
        for (const auto& m : report.models()) {
            const auto a = report.aggregates(m);
            summary << seed << ',' << m << ',' << a.train_mean.value_or(NAN) << ','
                    << a.eval_mean.value_or(NAN) << ',' << a.overall_mean.value_or(NAN) << '\n';
        }
        render_table(table, report, "seed " + std::to_string(seed));
        forest_all.push_back(*report.aggregates("forest:ensemble").overall_mean);
        dense_all.push_back(*report.aggregates("dense").overall_mean);
    }
    r.measurements = {{"forest_ensemble_overall", mean(forest_all)}, {"dense_overall", mean(dense_all)}};
    r.passed = mean(forest_all) < mean(dense_all);
    r.table = table.str();
    return r;
}

ReproduceResult run_random_splits(const ExperimentConfig& config, const std::filesystem::path& dir) {
    ReproduceResult r;
    r.predicate = "mean over seeds of domain-split forest overall perplexity < random-split forest";
    std::vector<double> domain_all, random_all;
    auto csv = open_csv(dir / "random_splits.csv");
    csv << "seed,forest,train_mean,eval_mean,overall_mean\n";
    std::ostringstream table;
    for (auto seed : config.seeds) {
        const auto domains = generate_domains(config, seed);
        const auto sets = build_test_sets(config, domains);
        const auto run = run_btm(domains, config.plan, config.btm_config(seed));
        const auto random_forest = train_random_split_forest(config, domains, seed);
        auto report = build_report(run.forest, {}, sets, ensemble_only(), config.btm.prior, "domain");
        const auto rand_report = build_report(random_forest, {}, sets, ensemble_only(), config.btm.prior, "random");
        report.rows.insert(report.rows.end(), rand_report.rows.begin(), rand_report.rows.end());
        for (const auto& m : report.models()) {
            const auto a = report.aggregates(m);
            csv << seed << ',' << m << ',' << *a.train_mean << ',' << a.eval_mean.value_or(NAN) << ','
                << *a.overall_mean << '\n';
        }
        render_table(table, report, "seed " + std::to_string(seed));
        domain_all.push_back(*report.aggregates("domain:ensemble").overall_mean);
        random_all.push_back(*report.aggregates("random:ensemble").overall_mean);
    }
    r.measurements = {{"domain_split_overall", mean(domain_all)}, {"random_split_overall", mean(random_all)}};
    r.passed = mean(domain_all) < mean(random_all);
    r.table = table.str();
    return r;
}

constexpr std::array<double, 7> kSeedRatios = {0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0};

struct RatioPoint {
    double ratio = 0;
    EvalAggregates ensemble, uniform, posterior;
};

std::vector<RatioPoint> ratio_sweep(const ExperimentConfig& config, std::uint64_t seed,
                                    std::span<const DomainCorpus> domains,
                                    std::span<const DomainTestSet> sets) {
    const std::vector<ModeSpec> modes{{EnsembleMode::ensemble, std::nullopt},
                                      {EnsembleMode::average_uniform, std::nullopt},
                                      {EnsembleMode::average_posterior, std::nullopt}};
    std::vector<RatioPoint> out;
    for (double ratio : kSeedRatios) {
        auto cfg = config.btm_config(seed);
        cfg.seed_fraction = ratio;
        const auto run = run_btm(domains, config.plan, cfg);
        const auto report = build_report(run.forest, {}, sets, modes, config.btm.prior);
        out.push_back({ratio, report.aggregates("forest:ensemble"), report.aggregates("forest:average_uniform"),
                       report.aggregates("forest:average_posterior")});
    }
    return out;
}

ReproduceResult run_seed_ratio(const ExperimentConfig& config, const std::filesystem::path& dir) {
    ReproduceResult r;
    r.predicate = "forest-ensemble overall perplexity < dense for every seed fraction in [0.1, 0.9]";
    const auto seed = config.seeds.front();
    const auto domains = generate_domains(config, seed);
    const auto sets = build_test_sets(config, domains);
    const auto dense = train_dense(config, domains, seed);
    const std::vector<NamedModel> dense_models{{"dense", dense}};
    const auto dense_all = *build_report(ElmForest(config.model), dense_models, sets, {}, config.btm.prior)
                                .aggregates("dense")
                                .overall_mean;
    const auto points = ratio_sweep(config, seed, domains, sets);
    auto csv = open_csv(dir / "seed_ratio.csv");
    csv << "seed_fraction,ensemble_train,ensemble_eval,ensemble_overall,dense_overall\n";
    std::ostringstream table;
    table << "seed fraction  ensemble(all)  dense(all)\n";
    r.passed = true;
    for (const auto& p : points) {
        csv << p.ratio << ',' << *p.ensemble.train_mean << ',' << p.ensemble.eval_mean.value_or(NAN) << ','
            << *p.ensemble.overall_mean << ',' << dense_all << '\n';
        table << std::setw(13) << fmt(p.ratio, 2) << std::setw(15) << fmt(*p.ensemble.overall_mean)
              << std::setw(12) << fmt(dense_all) << '\n';
        r.measurements.push_back({"ensemble_overall@" + fmt(p.ratio, 2), *p.ensemble.overall_mean});
        if (p.ratio >= 0.1 && p.ratio <= 0.9) r.passed = r.passed && *p.ensemble.overall_mean < dense_all;
    }
    r.measurements.push_back({"dense_overall", dense_all});
    r.table = table.str();
    return r;
}

ReproduceResult run_avg_vs_ratio(const ExperimentConfig& config, const std::filesystem::path& dir) {
    ReproduceResult r;
    r.predicate = "uniform-average train perplexity at 0% seed >= 5x the value at 50% seed";
    const auto seed = config.seeds.front();
    const auto domains = generate_domains(config, seed);
    const auto sets = build_test_sets(config, domains);
    const auto points = ratio_sweep(config, seed, domains, sets);
    auto csv = open_csv(dir / "avg_vs_ratio.csv");
    csv << "seed_fraction,uniform_train,posterior_train,ensemble_train\n";
    std::ostringstream table;
    table << "seed fraction  uniform avg  posterior avg  ensemble   (train-domain means)\n";
    double at0 = 0, at50 = 0;
    for (const auto& p : points) {
        csv << p.ratio << ',' << *p.uniform.train_mean << ',' << *p.posterior.train_mean << ','
            << *p.ensemble.train_mean << '\n';
        table << std::setw(13) << fmt(p.ratio, 2) << std::setw(13) << fmt(*p.uniform.train_mean)
              << std::setw(15) << fmt(*p.posterior.train_mean) << std::setw(10)
              << fmt(*p.ensemble.train_mean) << '\n';
        if (p.ratio == 0.0) at0 = *p.uniform.train_mean;
        if (p.ratio == 0.5) at50 = *p.uniform.train_mean;
    }
    r.measurements = {{"uniform_train@0", at0}, {"uniform_train@0.5", at50}, {"ratio", at0 / at50}};
    r.passed = at0 >= 5.0 * at50;
    r.table = table.str();
    return r;
}

ReproduceResult run_seed_corpus(const ExperimentConfig& config, const std::filesystem::path& dir) {
    ReproduceResult r;
    r.predicate = "forest-ensemble overall perplexity < dense for every seed corpus";
    const auto seed = config.seeds.front();
    const auto domains = generate_domains(config, seed);
    const auto sets = build_test_sets(config, domains);
    const auto dense = train_dense(config, domains, seed);
    const std::vector<NamedModel> dense_models{{"dense", dense}};
    const auto dense_all = *build_report(ElmForest(config.model), dense_models, sets, {}, config.btm.prior)
                                .aggregates("dense")
                                .overall_mean;

    const auto train_ids = config.train_domains();
    std::vector<std::pair<std::string, std::vector<std::string>>> corpora{{"all", {}}};
    for (std::size_t i = 0; i < std::min<std::size_t>(3, train_ids.size()); ++i) {
        corpora.push_back({train_ids[i], {train_ids[i]}});
    }
    auto csv = open_csv(dir / "seed_corpus.csv");
    csv << "seed_corpus,ensemble_train,ensemble_eval,ensemble_overall,dense_overall\n";
    std::ostringstream table;
    table << std::left << std::setw(16) << "seed corpus" << std::right << std::setw(15) << "ensemble(all)"
          << std::setw(12) << "dense(all)" << '\n';
    r.passed = true;
    for (const auto& [label, ids] : corpora) {
        auto cfg = config.btm_config(seed);
        cfg.seed_domains = ids;
        const auto run = run_btm(domains, config.plan, cfg);
        const auto a = build_report(run.forest, {}, sets, ensemble_only(), config.btm.prior)
                           .aggregates("forest:ensemble");
        csv << label << ',' << *a.train_mean << ',' << a.eval_mean.value_or(NAN) << ',' << *a.overall_mean
            << ',' << dense_all << '\n';
        table << std::left << std::setw(16) << label << std::right << std::setw(15) << fmt(*a.overall_mean)
              << std::setw(12) << fmt(dense_all) << '\n';
        r.measurements.push_back({"ensemble_overall[" + label + "]", *a.overall_mean});
        r.passed = r.passed && *a.overall_mean < dense_all;
    }
    r.measurements.push_back({"dense_overall", dense_all});
    r.table = table.str();
    return r;
}

ReproduceResult run_removal(const ExperimentConfig& config, const std::filesystem::path& dir) {
    ReproduceResult r;
    r.predicate = "removing domain d's expert raises perplexity on d, and by more than removing any other expert";
    const auto seed = config.seeds.front();
    const auto domains = generate_domains(config, seed);
    const auto sets = build_test_sets(config, domains);
    const auto run = run_btm(domains, config.plan, config.btm_config(seed));
    const auto fx = removal_effects(run.forest, sets, config.btm.prior);

    auto csv = open_csv(dir / "removal.csv");
    csv << "domain,removed_expert,perplexity,full_perplexity,relative_increase\n";
    std::ostringstream table;
    table << std::left << std::setw(16) << "domain" << std::right << std::setw(10) << "full"
          << std::setw(14) << "-own expert" << std::setw(16) << "-worst other" << '\n';
    r.passed = true;
    for (std::size_t i = 0; i < fx.domains.size(); ++i) {
        double worst_other = 0;
        for (std::size_t j = 0; j < fx.domains.size(); ++j) {
            csv << fx.domains[i] << ',' << run.forest.expert(j).expert_id << ',' << fx.removed[i][j] << ','
                << fx.full[i] << ',' << fx.removed[i][j] / fx.full[i] - 1.0 << '\n';
            if (j != i) worst_other = std::max(worst_other, fx.removed[i][j]);
        }
        const double own = fx.removed[i][i];
        table << std::left << std::setw(16) << fx.domains[i] << std::right << std::setw(10) << fmt(fx.full[i])
              << std::setw(14) << fmt(own) << std::setw(16) << fmt(worst_other) << '\n';
        r.measurements.push_back({"own_increase[" + fx.domains[i] + "]", own / fx.full[i] - 1.0});
        r.passed = r.passed && own > fx.full[i] && own > worst_other;
    }
    r.table = table.str();
    return r;
}

ReproduceResult run_topk(const ExperimentConfig& config, const std::filesystem::path& dir) {
    ReproduceResult r;
    r.predicate = "top-2 train perplexity within 5% of the full ensemble; top-1 train perplexity < dense";
    const auto seed = config.seeds.front();
    const auto run = run_seed(config, seed);
    std::vector<ModeSpec> modes;
    for (std::size_t k = 1; k <= run.btm.forest.size(); ++k) modes.push_back({EnsembleMode::ensemble, k});
    const std::vector<NamedModel> dense{{"dense", run.dense}};
    const auto report = build_report(run.btm.forest, dense, run.test_sets, modes, config.btm.prior);
    auto csv = open_csv(dir / "topk.csv");
    write_report_csv(csv, report);
    std::ostringstream table;
    render_table(table, report, "top-k ensembles, seed " + std::to_string(seed));
    const auto full = *report.aggregates("forest:ensemble@top" + std::to_string(run.btm.forest.size())).train_mean;
    const auto top2 = *report.aggregates("forest:ensemble@top2").train_mean;
    const auto top1 = *report.aggregates("forest:ensemble@top1").train_mean;
    const auto dense_train = *report.aggregates("dense").train_mean;
    r.measurements = {{"full_train", full}, {"top2_train", top2}, {"top1_train", top1},
                      {"dense_train", dense_train}, {"top2_relative_gap", top2 / full - 1.0}};
    r.passed = std::abs(top2 / full - 1.0) <= 0.05 && top1 < dense_train;
    r.table = table.str();
    return r;
}

ReproduceResult run_incremental(const ExperimentConfig& config, const std::filesystem::path& dir) {
    ReproduceResult r;
    r.predicate = "after merging batch 2, batch-1 experts are bit-identical and their perplexities unchanged";
    const auto seed = config.seeds.front();
    const auto domains = generate_domains(config, seed);
    const auto all = config.train_domains();
    require(all.size() >= 2, ErrorKind::config, "incremental needs at least two training domains");
    const std::size_t half = all.size() / 2;
    const std::vector<std::string> b1(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(half));
    const std::vector<std::string> b2(all.begin() + static_cast<std::ptrdiff_t>(half), all.end());

    auto cfg = config.btm_config(seed);
    const auto run = run_btm(domains, DomainBatchPlan{{b1}}, cfg);
    auto added = train_batch(run.forest, domains, b2, cfg, 1, run.seed.state);
    for (const auto& o : added.outcomes) {
        require(!o.error, ErrorKind::worker, "expert '" + o.domain_id + "' failed: " + o.error.value_or(""));
    }
    const auto grown = merge(run.forest, added.successful());

    const auto sets = build_test_sets(config, domains);
    auto csv = open_csv(dir / "incremental.csv");
    csv << "domain,batch,expert_perplexity_before,expert_perplexity_after,bit_identical,"
           "ensemble_before,ensemble_after\n";
    std::ostringstream table;
    table << std::left << std::setw(16) << "domain" << std::right << std::setw(7) << "batch" << std::setw(12)
          << "expert" << std::setw(12) << "ens before" << std::setw(12) << "ens after" << '\n';
    r.passed = true;
    for (const auto& set : sets) {
        if (set.kind != DomainKind::train) continue;
        const bool first = std::find(b1.begin(), b1.end(), set.domain_id) != b1.end();
        EnsembleConfig ec;
        ec.prior = estimate_cached_prior(run.forest, set.dev, config.btm.prior);
        const double ens_before = ensemble_perplexity(run.forest, set.test, ec);
        ec.prior = estimate_cached_prior(grown, set.dev, config.btm.prior);
        const double ens_after = ensemble_perplexity(grown, set.test, ec);
        const auto& after = grown.expert(*grown.index_of_domain(set.domain_id));
        const double ppl_after = perplexity(grown.config(), after.params, set.test);
        double ppl_before = NAN;
        bool identical = true;
        if (first) {
            const auto& before = run.forest.expert(*run.forest.index_of_domain(set.domain_id));
            ppl_before = perplexity(run.forest.config(), before.params, set.test);
            identical = before.params.values == after.params.values;
            r.passed = r.passed && identical && ppl_before == ppl_after;
        }
        csv << set.domain_id << ',' << (first ? 1 : 2) << ',' << ppl_before << ',' << ppl_after << ','
            << (identical ? "true" : "false") << ',' << ens_before << ',' << ens_after << '\n';
        table << std::left << std::setw(16) << set.domain_id << std::right << std::setw(7) << (first ? 1 : 2)
              << std::setw(12) << fmt(ppl_after) << std::setw(12) << fmt(ens_before) << std::setw(12)
              << fmt(ens_after) << '\n';
        r.measurements.push_back({"ensemble_after[" + set.domain_id + "]", ens_after});
    }
    r.table = table.str();
    return r;
}

ReproduceResult run_bench(const ExperimentConfig& config, const std::filesystem::path& dir) {
    ReproduceResult r;
    r.predicate = "independent updates/sec >= all-reduce updates/sec at 4 and 8 workers; 0 messages when independent";
    const auto seed = config.seeds.front();
    const auto domains = generate_domains(config, seed);
    const auto train_domains = select(domains, config.train_domains());
    std::vector<EfficiencyResult> results;
    r.passed = true;
    std::ostringstream table;
    table << "workers  synchronized  independent  ratio  messages(sync/indep)\n";
    for (std::size_t n : {4u, 8u}) {
        EfficiencyConfig ec;
        ec.n_workers = n;
        ec.train = config.train;
        ec.train.total_updates = 40;
        ec.block_length = config.data.block_length;
        ec.repeats = 3;
        ec.seed = seed;
        const auto res = efficiency_harness(config.model, train_domains, ec);
        results.push_back(res);
        table << std::setw(7) << n << std::setw(14) << fmt(res.synchronized_updates_per_second, 2)
              << std::setw(13) << fmt(res.parallel_updates_per_second, 2) << std::setw(7)
              << fmt(res.parallel_ratio(), 2) << "  " << res.synchronized_communication_events << '/'
              << res.parallel_communication_events << '\n';
        r.measurements.push_back({"ratio@" + std::to_string(n), res.parallel_ratio()});
        r.passed = r.passed && res.parallel_updates_per_second >= res.synchronized_updates_per_second &&
                   res.parallel_communication_events == 0;
    }
    auto csv = open_csv(dir / "bench.csv");
    write_efficiency_csv(csv, results);
    r.table = table.str();
    return r;
}

using Runner = ReproduceResult (*)(const ExperimentConfig&, const std::filesystem::path&);

struct Entry {
    std::string_view name;
    Runner run;
};

constexpr std::array<Entry, 9> kExperiments = {{{"core", run_core},
                                                 {"random-splits", run_random_splits},
                                                 {"seed-ratio", run_seed_ratio},
                                                 {"avg-vs-ratio", run_avg_vs_ratio},
                                                 {"seed-corpus", run_seed_corpus},
                                                 {"removal", run_removal},
                                                 {"topk", run_topk},
                                                 {"incremental", run_incremental},
                                                 {"bench", run_bench}}};

constexpr auto kNames = [] {
    std::array<std::string_view, kExperiments.size()> names{};
    for (std::size_t i = 0; i < kExperiments.size(); ++i) names[i] = kExperiments[i].name;
    return names;
}();

} // namespace

std::vector<DomainCorpus> generate_domains(const ExperimentConfig& config, std::uint64_t seed) {
    return generate_synthetic_domains(config.data.recipes, derive_seed(seed, "data"));
}

ParameterVector train_dense(const ExperimentConfig& config, std::span<const DomainCorpus> domains,
                            std::uint64_t seed) {
    const auto ids = config.train_domains();
    const auto pooled = select(domains, ids);
    TrainConfig t = config.train;
    t.total_updates = config.btm.total_budget;
    return seed_train(config.model, pooled, config.btm.total_budget, t, config.data.block_length,
                      derive_seed(seed, "init"), derive_seed(seed, "dense-data"))
        .params;
}

SeedRun run_seed(const ExperimentConfig& config, std::uint64_t seed) {
    SeedRun run;
    run.seed = seed;
    run.domains = generate_domains(config, seed);
    run.test_sets = build_test_sets(config, run.domains);
    auto t0 = Clock::now();
    run.btm = run_btm(run.domains, config.plan, config.btm_config(seed));
    run.btm_seconds = since(t0);
    t0 = Clock::now();
    run.dense = train_dense(config, run.domains, seed);
    run.dense_seconds = since(t0);
    return run;
}

std::vector<DomainCorpus> random_split_shards(std::span<const DomainCorpus> domains,
                                              std::span<const std::string> domain_ids,
                                              std::size_t n_shards, std::uint64_t seed) {
    require(n_shards >= 2, ErrorKind::invalid_argument, "random splits need at least two shards");
    std::vector<std::string> pooled;
    for (const auto& id : domain_ids) {
        const auto& d = find_domain(domains, id);
        pooled.insert(pooled.end(), d.train.begin(), d.train.end());
        pooled.insert(pooled.end(), d.valid.begin(), d.valid.end());
    }
    std::mt19937_64 rng(derive_seed(seed, "random-split"));
    std::shuffle(pooled.begin(), pooled.end(), rng);
    require(pooled.size() >= n_shards, ErrorKind::invalid_argument, "fewer documents than shards");
    std::vector<DomainCorpus> shards(n_shards);
    for (std::size_t s = 0; s < n_shards; ++s) shards[s].domain_id = "shard-" + std::to_string(s);
    for (std::size_t i = 0; i < pooled.size(); ++i) shards[i % n_shards].train.push_back(std::move(pooled[i]));
    return shards;
}

ElmForest train_random_split_forest(const ExperimentConfig& config,
                                    std::span<const DomainCorpus> domains, std::uint64_t seed) {
    const auto ids = config.train_domains();
    const auto shards = random_split_shards(domains, ids, ids.size(), seed);
    DomainBatchPlan plan;
    plan.batches.emplace_back();
    for (const auto& s : shards) plan.batches.front().push_back(s.domain_id);
    auto cfg = config.btm_config(seed);
    cfg.seed_domains.clear();
    return run_btm(shards, plan, cfg).forest;
}

RemovalEffects removal_effects(const ElmForest& forest, std::span<const DomainTestSet> sets,
                               const PriorConfig& prior) {
    RemovalEffects fx;
    std::vector<ElmForest> without;
    for (const auto& e : forest.experts()) without.push_back(remove_expert(forest, e.domain_id));
    for (const auto& set : sets) {
        if (set.kind != DomainKind::train || !forest.index_of_domain(set.domain_id)) continue;
        fx.domains.push_back(set.domain_id);
        EnsembleConfig ec;
        ec.prior = estimate_cached_prior(forest, set.dev, prior);
        fx.full.push_back(ensemble_perplexity(forest, set.test, ec));
        std::vector<double> row;
        for (const auto& f : without) {
            ec.prior = estimate_cached_prior(f, set.dev, prior);
            row.push_back(ensemble_perplexity(f, set.test, ec));
        }
        fx.removed.push_back(std::move(row));
    }
    return fx;
}

std::span<const std::string_view> experiment_names() noexcept {
    return kNames;
}

ReproduceResult reproduce(std::string_view name, const ExperimentConfig& config,
                          const std::filesystem::path& out_dir) {
    config.validate();
    for (const auto& e : kExperiments) {
        if (e.name != name) continue;
        const auto dir = out_dir / std::string(name);
        std::filesystem::create_directories(dir);
        auto result = e.run(config, dir);
        result.experiment = std::string(name);
        std::ofstream table(dir / "table.txt", std::ios::trunc);
        table << result.table;
        auto csv = open_csv(dir / "predicate.csv");
        csv << "experiment,measurement,value\n";
        for (const auto& m : result.measurements) csv << name << ',' << m.name << ',' << m.value << '\n';
        csv << name << ",passed," << (result.passed ? 1 : 0) << '\n';
        return result;
    }
    std::string known;
    for (auto n : kNames) known += (known.empty() ? "" : ", ") + std::string(n);
    fail(ErrorKind::not_found, "unknown experiment '" + std::string(name) + "' (known: " + known + ")");
}

} // namespace btm
