// Randomized property checks. Each property runs over many seeded trials so
// failures are reproducible from the printed trial number.

#include "btm/btm.hpp"
#include "btm/corpus.hpp"
#include "btm/inference.hpp"
#include "btm/posterior.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

using namespace btm;
using btm::test::random_blocks;
using btm::test::random_forest;
using btm::test::tiny_config;

namespace {

const Vocab V = Vocab::bytes();

std::vector<std::string> random_docs(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> count(1, 12), len(1, 90), byte(0, 255);
    std::vector<std::string> docs(static_cast<std::size_t>(count(rng)));
    for (auto& d : docs) {
        const int n = len(rng);
        for (int i = 0; i < n; ++i) {
            char ch = static_cast<char>(byte(rng));
            d.push_back(ch == kDocumentSeparator ? 'x' : ch);
        }
    }
    return docs;
}

std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t n) {
    std::exponential_distribution<double> e(1.0);
    std::vector<double> p(n);
    double z = 0;
    for (auto& x : p) z += (x = e(rng));
    for (auto& x : p) x /= z;
    return p;
}

} // namespace

TEST_CASE("property: packing round-trips and conserves tokens") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> T(2, 70);
    for (int trial = 0; trial < 300; ++trial) {
        CAPTURE(trial);
        const auto docs = random_docs(rng);
        const std::size_t t = T(rng);
        const auto blocks = pack_documents(docs, t, V);
        std::vector<TokenId> all;
        std::size_t pads = 0;
        for (const auto& b : blocks) {
            REQUIRE(b.tokens.size() == t);
            all.insert(all.end(), b.tokens.begin(), b.tokens.end());
        }
        for (auto tok : all) pads += tok == V.pad_id;
        std::string joined;
        std::size_t expected = 0;
        for (const auto& d : docs) joined += d, expected += d.size() + 1;
        CHECK(detokenize(all, V) == joined);
        CHECK(all.size() - pads == expected);
        CHECK(pads < t);  // only the final block is padded
        CHECK(blocks.size() == (expected + t - 1) / t);
    }
}

TEST_CASE("property: posterior is invariant to a common log-likelihood shift") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> ll(-500.0, 200.0), shift(0.0, 1e4);
    for (int trial = 0; trial < 500; ++trial) {
        CAPTURE(trial);
        const std::size_t n = 1 + trial % 9;
        std::vector<double> l(n);
        for (auto& x : l) x = ll(rng);
        const auto prior = random_simplex(rng, n);
        const auto a = posterior_from_likelihoods(l, prior).probs;
        const double s = shift(rng);
        for (auto& x : l) x += s;
        const auto b = posterior_from_likelihoods(l, prior).probs;
        double z = 0;
        for (std::size_t j = 0; j < n; ++j) {
            CHECK(std::abs(a[j] - b[j]) < 1e-9);
            z += a[j];
        }
        CHECK(std::abs(z - 1.0) < 1e-12);
    }
}

TEST_CASE("property: branching is linear in the weights") {
    const auto c = tiny_config();
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        CAPTURE(trial);
        const std::size_t n = 2 + trial % 4;
        const auto f = random_forest(c, n, 1000 + trial);
        const auto w = random_simplex(rng, n);
        const auto avg = branch(f, sparsify(WeightVector{w}));
        const auto ws = sparsify(WeightVector{w}).weights;
        double worst = 0;
        for (std::size_t i = 0; i < avg.size(); ++i) {
            double ref = 0;
            for (std::size_t j = 0; j < n; ++j) ref += ws[j] * f.expert(j).params.values[i];
            worst = std::max(worst, std::abs(avg.values[i] - ref));
        }
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("property: removal equals a zeroed prior; ensembles stay normalized") {
    const auto c = tiny_config();
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 6; ++trial) {
        CAPTURE(trial);
        const std::size_t n = 3 + trial % 2;
        const auto f = random_forest(c, n, 50 + trial);
        const std::size_t drop = trial % n;
        auto prior = random_simplex(rng, n);
        prior[drop] = 0.0;
        double z = 0;
        for (double p : prior) z += p;
        for (auto& p : prior) p /= z;
        std::vector<double> kept;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != drop) kept.push_back(prior[j]);
        }
        const auto g = remove_expert(f, "d" + std::to_string(drop));
        const auto blocks = random_blocks(2, 16, 9 + trial);
        const double a = ensemble_perplexity(f, blocks, {std::nullopt, prior, EnsembleMode::ensemble});
        const double b = ensemble_perplexity(g, blocks, {std::nullopt, kept, EnsembleMode::ensemble});
        CHECK(std::abs(a - b) <= 1e-9 * b);

        const auto block = blocks.front();
        std::vector<ForwardResult<float>> res;
        for (const auto& e : f.experts()) res.push_back(forward(c, e.params, block));
        std::vector<double> state(n, 0.0);
        for (std::size_t t = 0; t + 1 < block.tokens.size(); ++t) {
            std::vector<std::span<const float>> rows;
            for (const auto& r : res) rows.push_back(r.row(t));
            const auto s = ensemble_step(rows, state, prior, 1 + t % n);
            double mass = 0, post = 0;
            for (double p : s.distribution) mass += p;
            for (double p : s.posterior) post += p;
            CHECK(std::abs(mass - 1.0) < 1e-6);
            CHECK(std::abs(post - 1.0) < 1e-12);
            advance_state(state, rows, block.tokens[t + 1]);
        }
    }
}

TEST_CASE("property: parallel expert training is bit-identical to serial for any pool size") {
    const auto c = tiny_config();
    const auto d = btm::test::small_domains({"csv", "dna", "hex", "url", "code"}, 2000, 3);
    TrainConfig t;
    t.total_updates = 3;
    t.batch_blocks = 2;
    auto jobs = [&] {
        std::vector<ExpertJob> out;
        for (std::size_t i = 0; i < d.size(); ++i) {
            ExpertJob j;
            j.expert_id = "elm-" + d[i].domain_id;
            j.domain_id = d[i].domain_id;
            j.init = init_params(c, i);
            const DomainCorpus* corpus = &d[i];
            j.make_stream = [corpus, i] {
                return std::make_unique<BalancedSampler>(std::span<const DomainCorpus>(corpus, 1), 16, V, i);
            };
            out.push_back(std::move(j));
        }
        return out;
    };
    const auto serial = train_experts_parallel(c, jobs(), t, 3, 1);
    for (std::size_t workers : {2u, 3u, 5u, 8u}) {
        CAPTURE(workers);
        const auto par = train_experts_parallel(c, jobs(), t, 3, workers);
        for (std::size_t i = 0; i < d.size(); ++i) {
            CHECK(par.outcomes[i].expert->params.values == serial.outcomes[i].expert->params.values);
        }
    }
}

// Oracle: Pearson chi-square against the uniform distribution over 8 domains.
// The critical value for 7 degrees of freedom at p = 0.001 is 24.3219.
TEST_CASE("property: balanced sampler draws domains uniformly (chi-square)") {
    std::vector<DomainCorpus> d(8);
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i].domain_id = "dom" + std::to_string(i);
        // Unequal sizes: uniformity must not depend on corpus size.
        const std::size_t docs = 2 + 30 * i;
        for (std::size_t k = 0; k < docs; ++k) d[i].train.push_back(std::string(20 + i, static_cast<char>('a' + i)));
    }
    BalancedSampler s(d, 8, V, 123);
    std::map<std::string, std::size_t> counts;
    const std::size_t draws = 100000;
    for (std::size_t k = 0; k < draws; ++k) ++counts[*s.next().domain_id];
    REQUIRE(counts.size() == 8);
    const double expected = double(draws) / 8.0;
    double chi2 = 0;
    for (const auto& [_, n] : counts) chi2 += (double(n) - expected) * (double(n) - expected) / expected;
    MESSAGE("chi-square " << chi2);
    CHECK(chi2 < 24.3219);
}
