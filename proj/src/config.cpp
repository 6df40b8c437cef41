#include "btm/config.hpp"

#include "btm/error.hpp"
#include "btm/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

namespace btm {

using nlohmann::json;

namespace {

// Reads keys of one JSON object and rejects any it did not consume.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        require(j_.is_object(), ErrorKind::config, path_ + " must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            fail(ErrorKind::config, path_ + "." + key + ": " + e.what());
        }
    }

    template <class T>
    void get_optional(const char* key, std::optional<T>& out) {
        seen_.insert(key);
        if (!j_.contains(key) || j_.at(key).is_null()) return;
        T v{};
        get(key, v);
        out = v;
    }

    const json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    std::string path(const char* key) const { return path_ + "." + key; }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            require(seen_.count(k) > 0, ErrorKind::config, "unknown key '" + path_ + "." + k + "'");
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

DomainRecipe recipe_from_json(const json& j, const std::string& path) {
    Section s(j, path);
    DomainRecipe r;
    s.get("domain_id", r.domain_id);
    s.get("generator", r.generator);
    s.get("components", r.components);
    s.get("train_tokens", r.train_tokens);
    s.get("valid_tokens", r.valid_tokens);
    s.get("test_tokens", r.test_tokens);
    s.finish();
    require(!r.domain_id.empty(), ErrorKind::config, path + ".domain_id is required");
    require(!r.generator.empty(), ErrorKind::config, path + ".generator is required");
    return r;
}

json recipe_to_json(const DomainRecipe& r) {
    return json{{"domain_id", r.domain_id},       {"generator", r.generator},
                {"components", r.components},     {"train_tokens", r.train_tokens},
                {"valid_tokens", r.valid_tokens}, {"test_tokens", r.test_tokens}};
}

TrainConfig train_from_json(const json& j) {
    Section s(j, "train");
    TrainConfig t;
    s.get("total_updates", t.total_updates);
    s.get("warmup_fraction", t.warmup_fraction);
    s.get("peak_lr", t.peak_lr);
    s.get("batch_blocks", t.batch_blocks);
    s.get("grad_accum_steps", t.grad_accum_steps);
    s.get("adam_beta1", t.adam_beta1);
    s.get("adam_beta2", t.adam_beta2);
    s.get("adam_eps", t.adam_eps);
    s.get_optional("clip_norm", t.clip_norm);
    s.get("log_every", t.log_every);
    s.finish();
    return t;
}

json train_to_json(const TrainConfig& t) {
    return json{{"total_updates", t.total_updates},
                {"warmup_fraction", t.warmup_fraction},
                {"peak_lr", t.peak_lr},
                {"batch_blocks", t.batch_blocks},
                {"grad_accum_steps", t.grad_accum_steps},
                {"adam_beta1", t.adam_beta1},
                {"adam_beta2", t.adam_beta2},
                {"adam_eps", t.adam_eps},
                {"clip_norm", t.clip_norm ? json(*t.clip_norm) : json(nullptr)},
                {"log_every", t.log_every}};
}

} // namespace

json to_json(const ModelConfig& c) {
    return json{{"vocab_size", c.vocab_size}, {"d_model", c.d_model},
                {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
                {"d_ff", c.d_ff},             {"max_seq_len", c.max_seq_len},
                {"tie_embeddings", c.tie_embeddings}};
}

ModelConfig model_config_from_json(const json& j) {
    Section s(j, "model");
    ModelConfig c;
    s.get("vocab_size", c.vocab_size);
    s.get("d_model", c.d_model);
    s.get("n_layers", c.n_layers);
    s.get("n_heads", c.n_heads);
    s.get("d_ff", c.d_ff);
    s.get("max_seq_len", c.max_seq_len);
    s.get("tie_embeddings", c.tie_embeddings);
    s.finish();
    return c;
}

json to_json(const ExperimentConfig& c) {
    json recipes = json::array();
    for (const auto& r : c.data.recipes) recipes.push_back(recipe_to_json(r));
    json out;
    out["data"] = {{"recipes", recipes},
                   {"eval_domains", c.data.eval_domains},
                   {"block_length", c.data.block_length}};
    out["model"] = to_json(c.model);
    out["train"] = train_to_json(c.train);
    out["btm"] = {{"batches", c.plan.batches},
                  {"total_budget", c.btm.total_budget},
                  {"seed_fraction", c.btm.seed_fraction},
                  {"later_batch_budgets", c.btm.later_batch_budgets},
                  {"expert_batch_blocks", c.btm.expert_batch_blocks},
                  {"reset_optimizer_for_averaged_branches", c.btm.reset_optimizer_for_averaged_branches},
                  {"seed_domains", c.btm.seed_domains},
                  {"prior", {{"n_sequences", c.btm.prior.n_sequences}, {"decay", c.btm.prior.decay}}}};
    out["inference"] = {{"mode", std::string(to_string(c.inference.mode))},
                        {"top_k", c.inference.top_k ? json(*c.inference.top_k) : json(nullptr)}};
    out["seeds"] = c.seeds;
    out["output_dir"] = c.output_dir.string();
    out["workers"] = c.workers;
    return out;
}

ExperimentConfig experiment_config_from_json(const json& j) {
    ExperimentConfig c;
    Section top(j, "config");
    if (const auto* d = top.child("data")) {
        Section s(*d, "data");
        if (const auto* rs = s.child("recipes")) {
            require(rs->is_array(), ErrorKind::config, "data.recipes must be an array");
            for (std::size_t i = 0; i < rs->size(); ++i) {
                c.data.recipes.push_back(recipe_from_json((*rs)[i], "data.recipes[" + std::to_string(i) + "]"));
            }
        }
        s.get("eval_domains", c.data.eval_domains);
        s.get("block_length", c.data.block_length);
        s.finish();
    }
    if (const auto* m = top.child("model")) c.model = model_config_from_json(*m);
    if (const auto* t = top.child("train")) c.train = train_from_json(*t);
    if (const auto* b = top.child("btm")) {
        Section s(*b, "btm");
        s.get("batches", c.plan.batches);
        s.get("total_budget", c.btm.total_budget);
        s.get("seed_fraction", c.btm.seed_fraction);
        s.get("later_batch_budgets", c.btm.later_batch_budgets);
        s.get("expert_batch_blocks", c.btm.expert_batch_blocks);
        s.get("reset_optimizer_for_averaged_branches", c.btm.reset_optimizer_for_averaged_branches);
        s.get("seed_domains", c.btm.seed_domains);
        if (const auto* p = s.child("prior")) {
            Section ps(*p, "btm.prior");
            ps.get("n_sequences", c.btm.prior.n_sequences);
            ps.get("decay", c.btm.prior.decay);
            ps.finish();
        }
        s.finish();
    }
    if (const auto* inf = top.child("inference")) {
        Section s(*inf, "inference");
        std::string mode = "ensemble";
        s.get("mode", mode);
        c.inference.mode = parse_ensemble_mode(mode);
        s.get_optional("top_k", c.inference.top_k);
        s.finish();
    }
    top.get("seeds", c.seeds);
    std::string out_dir = c.output_dir.string();
    top.get("output_dir", out_dir);
    c.output_dir = out_dir;
    top.get("workers", c.workers);
    top.finish();
    c.validate();
    return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::io, "cannot read config '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::config, "config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return experiment_config_from_json(j);
}

std::string config_hash(const ExperimentConfig& config) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(to_json(config).dump())));
    return buf;
}

void ExperimentConfig::validate() const {
    require(data.recipes.size() >= 2, ErrorKind::config, "data.recipes needs at least two domains");
    std::set<std::string> ids;
    for (const auto& r : data.recipes) {
        require(ids.insert(r.domain_id).second, ErrorKind::config,
                "duplicate recipe domain '" + r.domain_id + "'");
        require(r.test_tokens > 0 && r.valid_tokens > 0, ErrorKind::config,
                "recipe '" + r.domain_id + "' needs valid and test tokens");
    }
    for (const auto& d : data.eval_domains) {
        require(ids.count(d) > 0, ErrorKind::config, "eval domain '" + d + "' has no recipe");
    }
    require(data.block_length >= 2 && data.block_length <= model.max_seq_len, ErrorKind::config,
            "data.block_length must lie in [2, model.max_seq_len]");
    require(!plan.batches.empty(), ErrorKind::config, "btm.batches must list at least one batch");
    for (const auto& d : plan.all_domains()) {
        require(ids.count(d) > 0, ErrorKind::config, "batch domain '" + d + "' has no recipe");
        require(!is_eval_domain(d), ErrorKind::config,
                "domain '" + d + "' is both an eval domain and in a training batch");
    }
    for (const auto& d : btm.seed_domains) {
        require(ids.count(d) > 0, ErrorKind::config, "seed domain '" + d + "' has no recipe");
    }
    require(!seeds.empty(), ErrorKind::config, "seeds must list at least one seed");
    require(workers >= 1, ErrorKind::config, "workers must be at least 1");
    if (inference.top_k) require(*inference.top_k >= 1, ErrorKind::config, "inference.top_k must be >= 1");
    btm_config(seeds.front()).validate();
}

BtmConfig ExperimentConfig::btm_config(std::uint64_t seed) const {
    BtmConfig c = btm;
    c.model = model;
    c.train = train;
    c.block_length = data.block_length;
    c.prior.block_length = data.block_length;
    c.workers = workers;
    c.seed = seed;
    return c;
}

std::vector<std::string> ExperimentConfig::train_domains() const {
    return plan.all_domains();
}

bool ExperimentConfig::is_eval_domain(const std::string& domain_id) const {
    return std::find(data.eval_domains.begin(), data.eval_domains.end(), domain_id) !=
           data.eval_domains.end();
}

ExperimentConfig desk_config() {
    ExperimentConfig c;
    const std::vector<std::string> gens = {"arithmetic", "code", "prose", "dna",
                                           "csv",        "hex",  "url",   "repeat"};
    for (const auto& g : gens) c.data.recipes.push_back({g, g, {}, 60000, 3000, 4000});
    c.data.recipes.push_back({"json", "json", {}, 0, 3000, 4000});
    c.data.recipes.push_back({"mix-code-prose", "mix", {"code", "prose"}, 0, 3000, 4000});
    c.data.eval_domains = {"json", "mix-code-prose"};
    c.data.block_length = 64;

    c.model.d_model = 32;
    c.model.n_layers = 1;
    c.model.n_heads = 2;
    c.model.d_ff = 128;
    c.model.max_seq_len = 64;

    c.train.peak_lr = 3e-3;
    c.train.batch_blocks = 8;
    c.train.total_updates = 800;

    c.plan.batches = {gens};
    c.btm.total_budget = 800;
    c.btm.seed_fraction = 0.5;
    c.btm.prior.n_sequences = 100;
    c.btm.prior.decay = 0.3;

    c.seeds = {1, 2, 3};
    c.output_dir = "runs";
    return c;
}

std::vector<DomainTestSet> build_test_sets(const ExperimentConfig& config,
                                           std::span<const DomainCorpus> domains) {
    std::vector<DomainTestSet> sets;
    for (const auto& d : domains) {
        DomainTestSet s;
        s.domain_id = d.domain_id;
        s.kind = config.is_eval_domain(d.domain_id) ? DomainKind::eval : DomainKind::train;
        s.dev = pack_documents(d, Split::valid, config.data.block_length, Vocab::bytes());
        s.test = pack_documents(d, Split::test, config.data.block_length, Vocab::bytes());
        sets.push_back(std::move(s));
    }
    return sets;
}

} // namespace btm
