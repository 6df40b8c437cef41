#include "btm/eval.hpp"

#include "btm/error.hpp"
#include "btm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace btm {

double PerplexityStats::perplexity() const {
    require(tokens > 0, ErrorKind::invalid_argument, "perplexity over zero tokens");
    return std::exp(-log_likelihood / static_cast<double>(tokens));
}

PerplexityStats& PerplexityStats::operator+=(const PerplexityStats& other) {
    log_likelihood += other.log_likelihood;
    tokens += other.tokens;
    return *this;
}

PerplexityStats perplexity_stats(const ModelConfig& config, const ParameterVector& params,
                                 std::span<const SequenceBlock> blocks) {
    require(!blocks.empty(), ErrorKind::invalid_argument, "perplexity needs at least one block");
    PerplexityStats s;
    for (const auto& b : blocks) {
        const auto r = forward(config, params, b);
        s.log_likelihood += r.total_log_likelihood;
        s.tokens += r.token_count;
    }
    return s;
}

double perplexity(const ModelConfig& config, const ParameterVector& params,
                  std::span<const SequenceBlock> blocks) {
    return perplexity_stats(config, params, blocks).perplexity();
}

std::string ModeSpec::label() const {
    std::string out(to_string(mode));
    if (top_k) out += "@top" + std::to_string(*top_k);
    return out;
}

std::vector<std::string> EvalReport::models() const {
    std::vector<std::string> out;
    for (const auto& r : rows) {
        if (std::find(out.begin(), out.end(), r.model_label) == out.end()) out.push_back(r.model_label);
    }
    return out;
}

EvalAggregates EvalReport::aggregates(const std::string& model_label) const {
    double train_sum = 0, eval_sum = 0;
    std::size_t train_n = 0, eval_n = 0;
    for (const auto& r : rows) {
        if (r.model_label != model_label) continue;
        if (r.kind == DomainKind::train) {
            train_sum += r.perplexity;
            ++train_n;
        } else {
            eval_sum += r.perplexity;
            ++eval_n;
        }
    }
    EvalAggregates a;
    if (train_n) a.train_mean = train_sum / static_cast<double>(train_n);
    if (eval_n) a.eval_mean = eval_sum / static_cast<double>(eval_n);
    if (train_n + eval_n) a.overall_mean = (train_sum + eval_sum) / static_cast<double>(train_n + eval_n);
    return a;
}

std::optional<double> EvalReport::pooled_perplexity(const std::string& model_label) const {
    PerplexityStats s;
    for (const auto& r : rows) {
        if (r.model_label != model_label) continue;
        s.log_likelihood += -std::log(r.perplexity) * static_cast<double>(r.token_count);
        s.tokens += r.token_count;
    }
    if (s.tokens == 0) return std::nullopt;
    return s.perplexity();
}

const EvalRow& EvalReport::row(const std::string& domain, const std::string& model_label) const {
    for (const auto& r : rows) {
        if (r.domain == domain && r.model_label == model_label) return r;
    }
    fail(ErrorKind::not_found, "no report row for (" + domain + ", " + model_label + ")");
}

EvalRow evaluate_forest(const ElmForest& forest, const DomainTestSet& set, const ModeSpec& mode,
                        const PriorConfig& prior) {
    require(!set.test.empty(), ErrorKind::invalid_argument,
            "domain '" + set.domain_id + "' has no test blocks");
    EvalRow row;
    row.domain = set.domain_id;
    row.kind = set.kind;
    row.mode = std::string(to_string(mode.mode));
    row.top_k = mode.top_k;
    if (mode.mode == EnsembleMode::ensemble) {
        EnsembleConfig cfg;
        cfg.top_k = mode.top_k;
        cfg.prior = estimate_cached_prior(forest, set.dev, prior);
        row.perplexity = ensemble_perplexity(forest, set.test, cfg);
        std::size_t tokens = 0;
        for (const auto& b : set.test) {
            for (std::size_t t = 0; t + 1 < b.tokens.size(); ++t) {
                if (b.tokens[t + 1] != Vocab::bytes().pad_id) ++tokens;
            }
        }
        row.token_count = tokens;
    } else {
        const auto params = collapse_to_average(forest, mode.mode, set.dev, prior);
        const auto s = perplexity_stats(forest.config(), params, set.test);
        row.perplexity = s.perplexity();
        row.token_count = s.tokens;
    }
    return row;
}

EvalReport build_report(const ElmForest& forest, std::span<const NamedModel> dense_baselines,
                        std::span<const DomainTestSet> test_sets, std::span<const ModeSpec> modes,
                        const PriorConfig& prior, const std::string& forest_label) {
    EvalReport report;
    for (const auto& set : test_sets) {
        for (const auto& dense : dense_baselines) {
            const auto s = perplexity_stats(forest.config(), dense.params, set.test);
            report.rows.push_back(EvalRow{set.domain_id, set.kind, dense.label, "dense",
                                          std::nullopt, s.perplexity(), s.tokens});
        }
        for (const auto& m : modes) {
            auto row = evaluate_forest(forest, set, m, prior);
            row.model_label = forest_label + ":" + m.label();
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

namespace {

std::string_view kind_name(DomainKind kind) {
    return kind == DomainKind::train ? "train" : "eval";
}

} // namespace

void write_report_csv(std::ostream& out, const EvalReport& report) {
    out << "domain,kind,model,mode,top_k,perplexity,tokens\n";
    out << std::setprecision(10);
    for (const auto& r : report.rows) {
        out << r.domain << ',' << kind_name(r.kind) << ',' << r.model_label << ',' << r.mode << ','
            << (r.top_k ? std::to_string(*r.top_k) : std::string()) << ',' << r.perplexity << ','
            << r.token_count << '\n';
    }
}

void write_inference_csv(std::ostream& out, std::span<const EvalRow> rows) {
    out << "domain,mode,top_k,perplexity,tokens\n";
    out << std::setprecision(10);
    for (const auto& r : rows) {
        out << r.domain << ',' << r.mode << ',' << (r.top_k ? std::to_string(*r.top_k) : std::string())
            << ',' << r.perplexity << ',' << r.token_count << '\n';
    }
}

void render_table(std::ostream& out, const EvalReport& report, const std::string& title) {
    const auto models = report.models();
    std::size_t width = 5;
    for (const auto& m : models) width = std::max(width, m.size());
    auto cell = [&](const std::optional<double>& v) {
        std::ostringstream os;
        if (v) {
            os << std::fixed << std::setprecision(2) << *v;
        } else {
            os << "-";
        }
        return os.str();
    };
    out << title << '\n';
    out << std::left << std::setw(static_cast<int>(width)) << "model" << "  " << std::right
        << std::setw(10) << "train" << std::setw(10) << "eval" << std::setw(10) << "all" << '\n';
    out << std::string(width + 32, '-') << '\n';
    for (const auto& m : models) {
        const auto a = report.aggregates(m);
        out << std::left << std::setw(static_cast<int>(width)) << m << "  " << std::right
            << std::setw(10) << cell(a.train_mean) << std::setw(10) << cell(a.eval_mean)
            << std::setw(10) << cell(a.overall_mean) << '\n';
    }
}

double EfficiencyResult::parallel_ratio() const {
    return synchronized_updates_per_second > 0
               ? parallel_updates_per_second / synchronized_updates_per_second
               : 0.0;
}

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<std::unique_ptr<BlockSource>> worker_streams(std::span<const DomainCorpus> domains,
                                                         const EfficiencyConfig& config,
                                                         std::uint64_t seed) {
    std::vector<std::unique_ptr<BlockSource>> streams;
    for (std::size_t w = 0; w < config.n_workers; ++w) {
        const auto& corpus = domains[w % domains.size()];
        streams.push_back(std::make_unique<BalancedSampler>(std::span<const DomainCorpus>(&corpus, 1),
                                                            config.block_length, Vocab::bytes(),
                                                            derive_seed(seed, w)));
    }
    return streams;
}

} // namespace

EfficiencyResult efficiency_harness(const ModelConfig& model, std::span<const DomainCorpus> domains,
                                    const EfficiencyConfig& config) {
    require(config.n_workers >= 1, ErrorKind::invalid_argument, "efficiency harness needs workers");
    require(!domains.empty(), ErrorKind::invalid_argument, "efficiency harness needs a domain");
    require(config.repeats >= 1, ErrorKind::invalid_argument, "repeats must be at least 1");
    const auto init = init_params(model, derive_seed(config.seed, "bench-init"));

    std::vector<double> sync_ups, par_ups;
    EfficiencyResult out;
    out.n_workers = config.n_workers;
    for (std::size_t r = 0; r < config.repeats; ++r) {
        // Alternate which mode runs first so warm-up effects do not favor one.
        for (int pass = 0; pass < 2; ++pass) {
            const bool synced = (pass == 0) == (r % 2 == 0);
            auto streams = worker_streams(domains, config, derive_seed(config.seed, r));
            const auto result = train_data_parallel(model, init, streams, config.train, config.n_workers,
                                                    synced ? SyncMode::all_reduce : SyncMode::none);
            if (synced) {
                sync_ups.push_back(result.mean_updates_per_second());
                out.synchronized_communication_events = result.communication_events;
            } else {
                par_ups.push_back(result.mean_updates_per_second());
                out.parallel_communication_events = result.communication_events;
            }
        }
    }
    out.synchronized_updates_per_second = median(sync_ups);
    out.parallel_updates_per_second = median(par_ups);
    return out;
}

void write_efficiency_csv(std::ostream& out, std::span<const EfficiencyResult> results) {
    out << "mode,n_workers,updates_per_second,normalized,communication_events\n";
    out << std::setprecision(6);
    for (const auto& r : results) {
        out << "synchronized," << r.n_workers << ',' << r.synchronized_updates_per_second << ",1,"
            << r.synchronized_communication_events << '\n';
        out << "parallel," << r.n_workers << ',' << r.parallel_updates_per_second << ','
            << r.parallel_ratio() << ',' << r.parallel_communication_events << '\n';
    }
}

} // namespace btm
