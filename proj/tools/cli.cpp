#include "cli.hpp"

#include "btm/btm.hpp"
#include "btm/config.hpp"
#include "btm/error.hpp"
#include "btm/eval.hpp"
#include "btm/experiment.hpp"
#include "btm/rng.hpp"
#include "btm/store.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#ifndef BTM_VERSION
#define BTM_VERSION "dev"
#endif

namespace btm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Context {
    ExperimentConfig config;
    fs::path out;
    std::uint64_t seed = 1;
};

std::optional<std::string> env(const char* name) {
    const char* v = std::getenv(name);
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
}

Context make_context(const Options& o) {
    Context c;
    c.config = o.config_path.empty() ? desk_config() : load_experiment_config(o.config_path);
    if (!o.output_dir.empty()) {
        c.config.output_dir = o.output_dir;
    } else if (auto e = env("BTM_OUTPUT_DIR")) {
        c.config.output_dir = *e;
    }
    if (o.workers) {
        c.config.workers = *o.workers;
    } else if (auto e = env("BTM_WORKERS")) {
        try {
            c.config.workers = std::stoul(*e);
        } catch (const std::exception&) {
            fail(ErrorKind::config, "BTM_WORKERS must be a positive integer, got '" + *e + "'");
        }
    }
    c.config.validate();
    c.out = c.config.output_dir;
    c.seed = o.seed.value_or(c.config.seeds.front());
    return c;
}

void write_provenance(const Context& c, const std::string& command, const json& extra = json::object()) {
    json record{{"command", command},
                {"version", BTM_VERSION},
                {"checkpoint_format_version", kCheckpointVersion},
                {"config_hash", config_hash(c.config)},
                {"seed", c.seed},
                {"seeds", c.config.seeds},
                {"workers", c.config.workers},
                {"config", to_json(c.config)},
                {"details", extra}};
    fs::create_directories(c.out / "provenance");
    std::ofstream(c.out / "provenance" / (command + ".run.json"), std::ios::trunc) << record.dump(2) << '\n';
}

std::vector<DomainCorpus> load_domains(const Context& c) {
    const auto root = c.out / "data";
    require(fs::exists(root), ErrorKind::not_found,
            "no corpus under '" + root.string() + "'; run gen-data first");
    std::vector<DomainCorpus> out;
    for (const auto& r : c.config.data.recipes) out.push_back(load_corpus(root, r.domain_id));
    return out;
}

fs::path forest_dir(const Context& c, const Options& o) {
    return o.forest_dir.empty() ? c.out / "forest" : fs::path(o.forest_dir);
}

std::ofstream open_out(const fs::path& path) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write '" + path.string() + "'");
    return out;
}

// Dev blocks from a domain id in the corpus, or from a file of documents
// separated by the record separator byte.
std::vector<SequenceBlock> dev_blocks(const Context& c, const std::string& source) {
    const std::size_t T = c.config.data.block_length;
    if (fs::is_regular_file(source)) {
        std::ifstream in(source, std::ios::binary);
        const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::vector<std::string> docs;
        std::size_t start = 0;
        while (start <= content.size()) {
            const auto end = content.find(kDocumentSeparator, start);
            auto doc = content.substr(start, end == std::string::npos ? std::string::npos : end - start);
            if (!doc.empty()) docs.push_back(std::move(doc));
            if (end == std::string::npos) break;
            start = end + 1;
        }
        require(!docs.empty(), ErrorKind::invalid_argument, "dev file '" + source + "' has no documents");
        return pack_documents(docs, T, Vocab::bytes());
    }
    const auto domains = load_domains(c);
    return pack_documents(find_domain(domains, source), Split::valid, T, Vocab::bytes());
}

std::size_t batch_of(const ExperimentConfig& config, const std::string& domain) {
    for (std::size_t b = 0; b < config.plan.batches.size(); ++b) {
        const auto& batch = config.plan.batches[b];
        if (std::find(batch.begin(), batch.end(), domain) != batch.end()) return b;
    }
    return config.plan.batches.size();
}

std::size_t expert_batch_blocks(const ExperimentConfig& config, std::size_t batch_index) {
    if (config.btm.expert_batch_blocks > 0) return config.btm.expert_batch_blocks;
    const std::size_t n = batch_index < config.plan.batches.size() ? config.plan.batches[batch_index].size() : 1;
    return std::max<std::size_t>(1, config.train.batch_blocks / n);
}

// ---------------------------------------------------------------------------

void cmd_gen_data(const Context& c) {
    const auto domains = generate_domains(c.config, c.seed);
    json sizes = json::object();
    for (const auto& d : domains) {
        save_corpus(d, c.out / "data");
        sizes[d.domain_id] = {{"train", d.token_count(Split::train)},
                              {"valid", d.token_count(Split::valid)},
                              {"test", d.token_count(Split::test)}};
        std::cout << d.domain_id << ": " << d.token_count(Split::train) << " train, "
                  << d.token_count(Split::valid) << " valid, " << d.token_count(Split::test) << " test bytes\n";
    }
    write_provenance(c, "gen-data", {{"token_counts", sizes}});
}

void cmd_seed(const Context& c) {
    const auto domains = load_domains(c);
    const auto cfg = c.config.btm_config(c.seed);
    const auto& ids = cfg.seed_domains.empty() ? c.config.plan.batches.front() : cfg.seed_domains;
    std::vector<DomainCorpus> pooled;
    for (const auto& id : ids) pooled.push_back(find_domain(domains, id));
    const std::size_t seed_updates = cfg.total_budget - expert_updates_for_batch(cfg, 0);
    TrainConfig schedule = cfg.train;
    schedule.total_updates = cfg.total_budget;
    auto result = seed_train(cfg.model, pooled, seed_updates, schedule, cfg.block_length,
                             derive_seed(c.seed, "init"), derive_seed(c.seed, "seed-data"));

    ExpertModel seed;
    seed.expert_id = "seed";
    seed.domain_id = "*";
    seed.params = std::move(result.params);
    seed.opt_state = std::move(result.state);
    seed.lineage.updates_trained = seed_updates;
    const auto id = save_expert(seed, cfg.model, c.out / "seed" / "seed.btmf");
    auto loss = open_out(c.out / "seed" / "loss.csv");
    write_loss_csv(loss, result.report);
    std::cout << "seed checkpoint " << id << " (" << seed_updates << " of " << cfg.total_budget
              << " updates, final loss " << result.report.final_loss << ")\n";
    write_provenance(c, "seed", {{"checkpoint_id", id}, {"updates", seed_updates}});
}

void cmd_branch(const Context& c, const Options& o) {
    require(!o.domain.empty(), ErrorKind::invalid_argument, "branch needs --domain");
    require(o.weights.empty() != o.from_posterior.empty(), ErrorKind::invalid_argument,
            "branch needs exactly one of --weights or --from-posterior");
    const auto forest = load_forest(forest_dir(c, o));
    WeightVector weights;
    ParameterVector params;
    if (!o.weights.empty()) {
        std::stringstream ss(o.weights);
        std::string item;
        while (std::getline(ss, item, ',')) {
            try {
                weights.weights.push_back(std::stod(item));
            } catch (const std::exception&) {
                fail(ErrorKind::invalid_argument, "weight '" + item + "' is not a number");
            }
        }
        params = branch(forest, weights);
    } else {
        auto b = branch_from_posterior(forest, dev_blocks(c, o.from_posterior), c.config.btm.prior);
        weights = std::move(b.weights);
        params = std::move(b.params);
    }
    std::cout << "weights:";
    for (std::size_t j = 0; j < forest.size(); ++j) {
        std::cout << ' ' << forest.expert(j).expert_id << '=' << weights.weights[j];
    }
    std::cout << '\n';

    ExpertModel init;
    init.expert_id = "elm-" + o.domain;
    init.domain_id = o.domain;
    init.params = std::move(params);
    init.lineage.seed_checkpoint_id = forest.seed_checkpoint().value_or("");
    for (const auto& e : forest.experts()) init.lineage.branch_sources.push_back(e.expert_id);
    init.lineage.branch_weights = weights.weights;
    const auto id = save_expert(init, forest.config(), c.out / "branches" / (o.domain + ".btmf"));
    std::cout << "branch checkpoint " << id << '\n';
    write_provenance(c, "branch", {{"domain", o.domain}, {"weights", weights.weights}, {"checkpoint_id", id}});
}

void cmd_train_expert(const Context& c, const Options& o) {
    require(!o.domain.empty(), ErrorKind::invalid_argument, "train-expert needs --domain");
    const auto domains = load_domains(c);
    const auto& corpus = find_domain(domains, o.domain);
    const auto cfg = c.config.btm_config(c.seed);

    fs::path init_path = o.init_path;
    if (init_path.empty()) {
        const auto branched = c.out / "branches" / (o.domain + ".btmf");
        init_path = fs::exists(branched) ? branched : c.out / "seed" / "seed.btmf";
    }
    auto init = load_expert(init_path, cfg.model);

    TrainConfig schedule = cfg.train;
    std::size_t updates = 0;
    std::optional<OptimizerState> state;
    if (init.expert.opt_state) {
        // Continuing the seed run: same schedule, remaining first-batch budget.
        schedule.total_updates = cfg.total_budget;
        schedule.batch_blocks = expert_batch_blocks(c.config, 0);
        updates = o.updates.value_or(expert_updates_for_batch(cfg, 0));
        state = std::move(init.expert.opt_state);
    } else {
        const auto b = std::max<std::size_t>(1, batch_of(c.config, o.domain));
        updates = o.updates.value_or(expert_updates_for_batch(cfg, b));
        schedule.total_updates = std::max<std::size_t>(1, updates);
        schedule.batch_blocks = expert_batch_blocks(c.config, b);
    }
    BalancedSampler stream(std::span<const DomainCorpus>(&corpus, 1), cfg.block_length, Vocab::bytes(),
                           derive_seed(c.seed, "expert:" + o.domain));
    auto result = train(cfg.model, std::move(init.expert.params), std::move(state), stream, schedule, updates);

    ExpertModel expert;
    expert.expert_id = "elm-" + o.domain;
    expert.domain_id = o.domain;
    expert.params = std::move(result.params);
    expert.lineage = init.expert.lineage;
    if (init.expert.expert_id == "seed") expert.lineage.seed_checkpoint_id = init.checkpoint_id;
    expert.lineage.updates_trained += result.report.updates;
    const auto id = save_expert(expert, cfg.model, c.out / "experts" / (o.domain + ".btmf"));
    auto loss = open_out(c.out / "experts" / (o.domain + ".loss.csv"));
    write_loss_csv(loss, result.report);
    std::cout << expert.expert_id << ": " << result.report.updates << " updates, final loss "
              << result.report.final_loss << ", checkpoint " << id << '\n';
    write_provenance(c, "train-expert", {{"domain", o.domain}, {"init", init_path.string()},
                                         {"updates", updates}, {"checkpoint_id", id}});
}

void cmd_merge(const Context& c, const Options& o) {
    const auto dir = forest_dir(c, o);
    std::vector<fs::path> paths(o.checkpoints.begin(), o.checkpoints.end());
    if (paths.empty()) {
        const auto experts = c.out / "experts";
        require(fs::exists(experts), ErrorKind::not_found, "no checkpoints given and '" + experts.string() +
                                                               "' does not exist");
        for (const auto& entry : fs::directory_iterator(experts)) {
            if (entry.path().extension() == ".btmf") paths.push_back(entry.path());
        }
        std::sort(paths.begin(), paths.end());
    }
    require(!paths.empty(), ErrorKind::invalid_argument, "nothing to merge");
    ElmForest forest = fs::exists(dir / kForestManifest) ? load_forest(dir) : ElmForest(c.config.model);
    if (const auto seed = c.out / "seed" / "seed.btmf"; fs::exists(seed) && !forest.seed_checkpoint()) {
        forest.set_seed_checkpoint(checkpoint_id(seed));
    }
    std::vector<ExpertModel> experts;
    for (const auto& p : paths) experts.push_back(load_expert(p, forest.config()).expert);
    forest = merge(forest, std::move(experts));
    save_forest(forest, dir);
    std::cout << "forest at " << dir.string() << " has " << forest.size() << " experts\n";
    write_provenance(c, "merge", {{"forest", dir.string()}, {"experts", forest.size()}});
}

void cmd_remove(const Context& c, const Options& o) {
    require(!o.domain.empty(), ErrorKind::invalid_argument, "remove needs --domain");
    const auto dir = forest_dir(c, o);
    const auto forest = load_forest(dir);
    const auto index = forest.index_of_domain(o.domain);
    require(index.has_value(), ErrorKind::not_found, "forest has no expert for domain '" + o.domain + "'");
    const auto& removed = forest.expert(*index);
    const auto stale = dir / "experts" / (removed.expert_id + ".btmf");
    const auto smaller = remove_expert(forest, o.domain);
    save_forest(smaller, dir);
    fs::remove(stale);
    std::cout << "removed " << removed.expert_id << "; " << smaller.size() << " experts remain\n";
    write_provenance(c, "remove", {{"forest", dir.string()}, {"domain", o.domain}});
}

void cmd_eval(const Context& c, const Options& o) {
    const auto forest = load_forest(forest_dir(c, o));
    const auto domains = load_domains(c);
    const auto sets = build_test_sets(c.config, domains);
    const ModeSpec mode{parse_ensemble_mode(o.mode), o.top_k};
    std::vector<EvalRow> rows;
    for (const auto& set : sets) rows.push_back(evaluate_forest(forest, set, mode, c.config.btm.prior));
    const auto path = c.out / "eval" / ("eval_" + mode.label() + ".csv");
    auto out = open_out(path);
    write_inference_csv(out, rows);
    write_inference_csv(std::cout, rows);
    write_provenance(c, "eval", {{"mode", mode.label()}, {"csv", path.string()}});
}

void cmd_prior(const Context& c, const Options& o) {
    require(!o.dev.empty(), ErrorKind::invalid_argument, "prior needs --dev <domain or file>");
    const auto dir = forest_dir(c, o);
    auto forest = load_forest(dir);
    const auto probs = estimate_cached_prior(forest, dev_blocks(c, o.dev), c.config.btm.prior);
    const std::string label = o.label.empty() ? fs::path(o.dev).filename().string() : o.label;
    auto out = open_out(c.out / "prior" / ("prior_" + label + ".csv"));
    write_prior_csv(out, forest, probs);
    write_prior_csv(std::cout, forest, probs);
    if (!o.no_store) {
        forest.set_cached_prior(CachedPrior{label, probs});
        save_forest(forest, dir);
    }
    write_provenance(c, "prior", {{"dev", o.dev}, {"label", label}, {"stored", !o.no_store}});
}

void cmd_bench(const Context& c, const Options& o) {
    const auto domains = generate_domains(c.config, c.seed);
    std::vector<DomainCorpus> train_domains;
    for (const auto& id : c.config.train_domains()) train_domains.push_back(find_domain(domains, id));
    std::vector<EfficiencyResult> results;
    for (auto n : o.bench_workers) {
        EfficiencyConfig ec;
        ec.n_workers = n;
        ec.train = c.config.train;
        ec.train.total_updates = o.bench_updates;
        ec.block_length = c.config.data.block_length;
        ec.seed = c.seed;
        results.push_back(efficiency_harness(c.config.model, train_domains, ec));
    }
    auto out = open_out(c.out / "bench" / "bench.csv");
    write_efficiency_csv(out, results);
    write_efficiency_csv(std::cout, results);
    write_provenance(c, "bench", {{"workers", o.bench_workers}, {"updates", o.bench_updates}});
}

int cmd_reproduce(const Context& c, const Options& o) {
    std::vector<std::string> names;
    if (o.experiment == "all") {
        for (auto n : experiment_names()) names.emplace_back(n);
    } else {
        names.push_back(o.experiment);
    }
    std::string failed;
    for (const auto& name : names) {
        const auto r = reproduce(name, c.config, c.out / "reproduce");
        std::cout << r.table;
        std::ostringstream measured;
        for (const auto& m : r.measurements) measured << ' ' << m.name << '=' << m.value;
        std::cout << (r.passed ? "PASS " : "FAIL ") << name << ": " << r.predicate << " |" << measured.str()
                  << '\n';
        if (!r.passed) failed += (failed.empty() ? "" : "; ") + name + ":" + measured.str();
    }
    write_provenance(c, "reproduce", {{"experiments", names}});
    if (!failed.empty()) {
        std::cerr << "error " << to_string(ErrorKind::predicate) << ": " << failed << '\n';
        return 1;
    }
    return 0;
}

} // namespace

std::vector<CLI::App*> build_app(CLI::App& app, Options& o) {
    app.description("Branch-Train-Merge on a desk: train domain experts, merge them into a forest, "
                    "and evaluate ensembles and parameter averages.");
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();
    app.add_option("-c,--config", o.config_path, "Experiment config (JSON); default is the built-in desk config")
        ->check(CLI::ExistingFile);
    app.add_option("-o,--output-dir", o.output_dir, "Root for all artifacts (env BTM_OUTPUT_DIR)");
    app.add_option("-w,--workers", o.workers, "Executor pool size (env BTM_WORKERS)")->check(CLI::PositiveNumber);
    app.add_option("-s,--seed", o.seed, "Seed for this run; default is the first configured seed");

    std::vector<CLI::App*> subs;
    auto add = [&](const char* name, const char* desc) {
        auto* s = app.add_subcommand(name, desc);
        subs.push_back(s);
        return s;
    };
    add("config", "Print the effective experiment config as JSON");
    add("gen-data", "Generate the synthetic domains into <output-dir>/data");
    add("seed", "Train the seed model and save it with optimizer state");

    auto* branch = add("branch", "Initialize a new expert from a weighted average of the forest");
    branch->add_option("-d,--domain", o.domain, "Domain of the new expert")->required();
    branch->add_option("-f,--forest", o.forest_dir, "Forest directory (default <output-dir>/forest)");
    branch->add_option("--weights", o.weights, "Comma-separated weights, one per expert in forest order");
    branch->add_option("--from-posterior", o.from_posterior,
                       "Dev sample of the new domain (file or domain id); weights are its cached prior");

    auto* train = add("train-expert", "Train one expert from the seed or its branched initialization");
    train->add_option("-d,--domain", o.domain, "Domain to train on")->required();
    train->add_option("--init", o.init_path, "Initial checkpoint (default: branches/<domain>.btmf, else seed)");
    train->add_option("--updates", o.updates, "Update budget (default from the batch plan)");

    auto* merge = add("merge", "Add expert checkpoints to the forest");
    merge->add_option("-f,--forest", o.forest_dir, "Forest directory (default <output-dir>/forest)");
    merge->add_option("checkpoints", o.checkpoints, "Checkpoints to add (default: all of <output-dir>/experts)");

    auto* remove = add("remove", "Remove a domain's expert from the forest");
    remove->add_option("-f,--forest", o.forest_dir, "Forest directory (default <output-dir>/forest)");
    remove->add_option("-d,--domain", o.domain, "Domain whose expert is removed")->required();

    auto* eval = add("eval", "Per-domain test perplexity of the forest under one inference mode");
    eval->add_option("-f,--forest", o.forest_dir, "Forest directory (default <output-dir>/forest)");
    eval->add_option("-m,--mode", o.mode, "ensemble | average_uniform | average_argmax | average_posterior");
    eval->add_option("-k,--top-k", o.top_k, "Restrict the ensemble to the k most probable experts")
        ->check(CLI::PositiveNumber);

    auto* prior = add("prior", "Estimate the cached prior on a dev set and store it in the manifest");
    prior->add_option("-f,--forest", o.forest_dir, "Forest directory (default <output-dir>/forest)");
    prior->add_option("--dev", o.dev, "Dev sample: a domain id or a document file")->required();
    prior->add_option("--label", o.label, "Name stored with the prior (default: the dev argument)");
    prior->add_flag("--no-store", o.no_store, "Only print and write the CSV; leave the manifest untouched");

    auto* bench = add("bench", "Throughput of synchronized vs independent training");
    bench->add_option("--bench-workers", o.bench_workers, "Worker counts to measure");
    bench->add_option("--bench-updates", o.bench_updates, "Updates per worker per repeat")
        ->check(CLI::PositiveNumber);

    auto* repro = add("reproduce", "Run a scripted experiment and check its predicate");
    std::string names = "One of: all";
    for (auto n : experiment_names()) names += ", " + std::string(n);
    repro->add_option("experiment", o.experiment, names)->required();
    return subs;
}

int run(CLI::App& app, const Options& o) {
    try {
        const auto c = make_context(o);
        const auto* sub = app.get_subcommands().front();
        const std::string name = sub->get_name();
        if (name == "config") {
            std::cout << to_json(c.config).dump(2) << '\n';
        } else if (name == "gen-data") {
            cmd_gen_data(c);
        } else if (name == "seed") {
            cmd_seed(c);
        } else if (name == "branch") {
            cmd_branch(c, o);
        } else if (name == "train-expert") {
            cmd_train_expert(c, o);
        } else if (name == "merge") {
            cmd_merge(c, o);
        } else if (name == "remove") {
            cmd_remove(c, o);
        } else if (name == "eval") {
            cmd_eval(c, o);
        } else if (name == "prior") {
            cmd_prior(c, o);
        } else if (name == "bench") {
            cmd_bench(c, o);
        } else if (name == "reproduce") {
            return cmd_reproduce(c, o);
        }
        return 0;
    } catch (const Error& e) {
        std::cerr << "error " << to_string(e.kind()) << ": " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error io: " << e.what() << '\n';
        return 2;
    }
}

int main(int argc, char** argv) {
    CLI::App app{"btm"};
    Options options;
    build_app(app, options);
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error usage: " << e.what() << '\n';
        return e.get_exit_code() == 0 ? 0 : 64;
    }
    return run(app, options);
}

} // namespace btm::cli
