#include "btm/config.hpp"
#include "btm/error.hpp"
#include "cli.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace btm;
using nlohmann::json;

namespace {

// Captures std::cout and std::cerr for the duration of one call.
struct Captured {
    int code = 0;
    std::string out, err;
};

Captured run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "btm");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    std::ostringstream out, err;
    auto* old_out = std::cout.rdbuf(out.rdbuf());
    auto* old_err = std::cerr.rdbuf(err.rdbuf());
    Captured c;
    c.code = cli::main(static_cast<int>(argv.size()), argv.data());
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    c.out = out.str();
    c.err = err.str();
    return c;
}

} // namespace

TEST_CASE("desk config is valid and pinned") {
    const auto c = desk_config();
    c.validate();
    CHECK(c.model.d_model == 32);
    CHECK(c.model.n_layers == 1);
    CHECK(c.data.block_length == 64);
    CHECK(c.btm.total_budget == 800);
    CHECK(c.train_domains().size() == 8);
    CHECK(c.data.eval_domains.size() == 2);
    for (const auto& e : c.data.eval_domains) CHECK(c.is_eval_domain(e));
    CHECK_FALSE(c.is_eval_domain("prose"));
    const auto b = c.btm_config(7);
    CHECK(b.seed == 7);
    CHECK(b.prior.block_length == 64);
    CHECK(b.model == c.model);
}

TEST_CASE("config json round trip and hash") {
    const auto c = desk_config();
    const auto j = to_json(c);
    const auto back = experiment_config_from_json(j);
    CHECK(to_json(back) == j);
    CHECK(config_hash(back) == config_hash(c));
    CHECK(config_hash(c).size() == 16);

    auto changed = c;
    changed.train.peak_lr *= 2;
    CHECK(config_hash(changed) != config_hash(c));
    CHECK(model_config_from_json(to_json(c.model)) == c.model);
}

TEST_CASE("unknown keys and invalid values are rejected") {
    auto j = to_json(desk_config());
    j["model"]["d_modle"] = 8;
    try {
        experiment_config_from_json(j);
        FAIL("expected a config error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::config);
        CHECK(std::string(e.what()).find("model.d_modle") != std::string::npos);
    }
    j = to_json(desk_config());
    j["colour"] = "red";
    CHECK_THROWS_AS(experiment_config_from_json(j), Error);

    j = to_json(desk_config());
    j["model"]["n_heads"] = 3;
    CHECK_THROWS_AS(experiment_config_from_json(j).validate(), Error);

    j = to_json(desk_config());
    j["btm"]["seed_fraction"] = 2.0;
    CHECK_THROWS_AS(experiment_config_from_json(j).validate(), Error);

    const auto bad = std::filesystem::temp_directory_path() / "btm_bad_config.json";
    std::ofstream(bad) << "{ not json";
    CHECK_THROWS_AS(load_experiment_config(bad), Error);
    std::filesystem::remove(bad);
}

TEST_CASE("help lists every subcommand and flag") {
    CLI::App app{"btm"};
    cli::Options o;
    const auto subs = cli::build_app(app, o);
    const std::string help = app.help();
    for (auto flag : {"--config", "--output-dir", "--workers", "--seed"}) CHECK(help.find(flag) != std::string::npos);
    std::vector<std::string> names;
    for (auto* s : subs) {
        names.push_back(s->get_name());
        CHECK(help.find(s->get_name()) != std::string::npos);
        const std::string sub_help = s->help();
        for (const auto* opt : s->get_options()) {
            if (opt->get_name().empty() || opt->get_name() == "--help") continue;
            CAPTURE(opt->get_name());
            for (const auto& l : opt->get_lnames()) CHECK(sub_help.find("--" + l) != std::string::npos);
        }
    }
    CHECK(names == std::vector<std::string>{"config", "gen-data", "seed", "branch", "train-expert", "merge",
                                            "remove", "eval", "prior", "bench", "reproduce"});
}

TEST_CASE("environment overrides apply unless a flag is given") {
    setenv("BTM_WORKERS", "3", 1);
    setenv("BTM_OUTPUT_DIR", "/tmp/btm-env-out", 1);
    auto r = run_cli({"config"});
    REQUIRE(r.code == 0);
    auto j = json::parse(r.out);
    CHECK(j["workers"] == 3);
    CHECK(j["output_dir"] == "/tmp/btm-env-out");

    r = run_cli({"-w", "2", "-o", "/tmp/flag-out", "config"});
    j = json::parse(r.out);
    CHECK(j["workers"] == 2);
    CHECK(j["output_dir"] == "/tmp/flag-out");

    setenv("BTM_WORKERS", "many", 1);
    r = run_cli({"config"});
    CHECK(r.code == 2);
    CHECK(r.err.rfind("error config:", 0) == 0);
    unsetenv("BTM_WORKERS");
    unsetenv("BTM_OUTPUT_DIR");
}

TEST_CASE("usage errors exit 64; runtime errors exit 2 with a category") {
    auto r = run_cli({"frobnicate"});
    CHECK(r.code == 64);
    CHECK(r.err.rfind("error usage:", 0) == 0);
    r = run_cli({"branch"});
    CHECK(r.code == 64);
    r = run_cli({"eval", "-k", "0"});
    CHECK(r.code == 64);

    const auto dir = std::filesystem::temp_directory_path() / "btm_cli_empty";
    std::filesystem::remove_all(dir);
    r = run_cli({"-o", dir.string(), "remove", "-d", "prose"});
    CHECK(r.code == 2);
    CHECK(r.err.rfind("error not_found:", 0) == 0);
    r = run_cli({"-o", dir.string(), "reproduce", "nonsense"});
    CHECK(r.code == 2);
    std::filesystem::remove_all(dir);
}
