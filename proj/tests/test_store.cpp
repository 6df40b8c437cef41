#include "btm/error.hpp"
#include "btm/inference.hpp"
#include "btm/store.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace btm;
using btm::test::random_blocks;
using btm::test::random_forest;
using btm::test::tiny_config;

namespace fs = std::filesystem;

namespace {

// Independent FNV-1a 64 and little-endian helpers for rewriting headers.
std::uint64_t fnv(std::string_view s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
    return h;
}

void reseal(std::string& bytes) {
    const std::uint64_t h = fnv(std::string_view(bytes).substr(0, bytes.size() - 8));
    for (int i = 0; i < 8; ++i) bytes[bytes.size() - 8 + i] = static_cast<char>((h >> (8 * i)) & 0xff);
}

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("btm_store_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::optional<ErrorKind> kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    return std::nullopt;
}

ExpertModel sample_expert(bool with_moments) {
    const auto c = tiny_config();
    auto e = btm::test::expert_for("prose", init_params(c, 3));
    e.lineage.seed_checkpoint_id = "abc";
    e.lineage.branch_sources = {"elm-a", "elm-b"};
    e.lineage.branch_weights = {0.25, 0.75};
    e.lineage.updates_trained = 17;
    if (with_moments) {
        auto st = OptimizerState::fresh(e.params.size());
        st.step = 5;
        st.schedule_position = 4;
        for (std::size_t i = 0; i < st.first_moment.size(); ++i) {
            st.first_moment[i] = 0.001f * float(i % 7);
            st.second_moment[i] = 0.0001f * float(i % 5);
        }
        e.opt_state = st;
    }
    return e;
}

} // namespace

TEST_CASE("checkpoint layout starts with magic and version") {
    const auto bytes = encode_checkpoint(sample_expert(false), tiny_config());
    CHECK(bytes.substr(0, 4) == "BTMF");
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 0);
    std::uint64_t stored = 0;
    for (int i = 7; i >= 0; --i) stored = (stored << 8) | static_cast<unsigned char>(bytes[bytes.size() - 8 + i]);
    CHECK(stored == fnv(std::string_view(bytes).substr(0, bytes.size() - 8)));
    CHECK(decode_checkpoint(bytes).checkpoint_id == hex(stored));
}

TEST_CASE("save, load, save is byte-identical") {
    const auto dir = scratch("roundtrip");
    for (bool moments : {false, true}) {
        const auto e = sample_expert(moments);
        const auto a = dir / "a.btmf", b = dir / "b.btmf";
        const auto id = save_expert(e, tiny_config(), a);
        const auto loaded = load_expert(a, tiny_config());
        CHECK(loaded.checkpoint_id == id);
        CHECK(checkpoint_id(a) == id);
        CHECK(loaded.config == tiny_config());
        CHECK(loaded.expert.params.values == e.params.values);
        CHECK(loaded.expert.lineage == e.lineage);
        CHECK(loaded.expert.opt_state == e.opt_state);
        CHECK(save_expert(loaded.expert, loaded.config, b) == id);
        CHECK(slurp(a) == slurp(b));
    }
    fs::remove_all(dir);
}

TEST_CASE("corruption, version and config mismatches are distinct errors") {
    const auto c = tiny_config();
    const auto good = encode_checkpoint(sample_expert(true), c);

    for (std::size_t pos : {std::size_t{9}, good.size() / 2, good.size() - 3}) {
        auto bad = good;
        bad[pos] = static_cast<char>(bad[pos] ^ 0x01);
        CHECK(kind_of([&] { decode_checkpoint(bad); }) == ErrorKind::checksum);
    }
    CHECK(kind_of([&] { decode_checkpoint(good.substr(0, 10)); }) == ErrorKind::checksum);

    auto v2 = good;
    v2[4] = 2;
    reseal(v2);
    CHECK(kind_of([&] { decode_checkpoint(v2); }) == ErrorKind::version);

    ModelConfig other = c;
    other.d_model = 32;
    try {
        decode_checkpoint(good, other);
        FAIL("expected a config error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::config);
        CHECK(std::string(e.what()).find("parameters but the config expects") != std::string::npos);
    }
    CHECK(kind_of([&] { load_expert("/nonexistent/x.btmf"); }) == ErrorKind::not_found);
}

TEST_CASE("forest round trip preserves ensemble perplexity and the cached prior") {
    const auto dir = scratch("forest");
    const auto c = tiny_config();
    auto f = random_forest(c, 3, 2);
    f.set_seed_checkpoint("0123456789abcdef");
    save_forest(f, dir);
    auto g = load_forest(dir);
    CHECK(g.size() == 3);
    CHECK(g.config() == c);
    CHECK(g.seed_checkpoint() == f.seed_checkpoint());
    CHECK_FALSE(g.cached_prior().has_value());
    const auto blocks = random_blocks(2, 16, 3);
    const EnsembleConfig ec{std::nullopt, {0.2, 0.3, 0.5}, EnsembleMode::ensemble};
    const double a = ensemble_perplexity(f, blocks, ec), b = ensemble_perplexity(g, blocks, ec);
    CHECK(std::abs(a - b) <= 1e-9 * a);

    f.set_cached_prior({"dev", {0.2, 0.3, 0.5}});
    save_forest(f, dir);
    g = load_forest(dir);
    REQUIRE(g.cached_prior().has_value());
    CHECK(g.cached_prior()->label == "dev");
    CHECK(g.cached_prior()->probs == std::vector<double>{0.2, 0.3, 0.5});

    fs::remove(dir / "experts" / "elm-d1.btmf");
    try {
        load_forest(dir);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("expert 'elm-d1'") != std::string::npos);
    }

    // A member checkpoint replaced by another valid one fails the manifest checksum.
    save_forest(f, dir);
    fs::copy_file(dir / "experts" / "elm-d0.btmf", dir / "experts" / "elm-d1.btmf",
                  fs::copy_options::overwrite_existing);
    CHECK(kind_of([&] { load_forest(dir); }) == ErrorKind::checksum);
    CHECK(kind_of([&] { load_forest(dir / "missing"); }) == ErrorKind::not_found);
    fs::remove_all(dir);
}
