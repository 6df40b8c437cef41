#pragma once

// Command-line surface of the btm tool. The app is built separately from
// main() so tests can inspect every subcommand's flags and help text.

#include <CLI11.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace btm::cli {

struct Options {
    std::string config_path;
    std::string output_dir;
    std::optional<std::size_t> workers;
    std::optional<std::uint64_t> seed;

    std::string domain;
    std::string forest_dir;
    std::string weights;
    std::string from_posterior;
    std::string init_path;
    std::optional<std::size_t> updates;
    std::vector<std::string> checkpoints;
    std::string mode = "ensemble";
    std::optional<std::size_t> top_k;
    std::string dev;
    std::string label;
    std::vector<std::size_t> bench_workers{4, 8};
    std::size_t bench_updates = 40;
    std::string experiment;
    bool no_store = false;
};

// Registers all subcommands; returns them in registration order.
std::vector<CLI::App*> build_app(CLI::App& app, Options& options);

// Runs the selected subcommand; returns the process exit code. Errors are
// printed to stderr as one line: "error <category>: <message>".
int run(CLI::App& app, const Options& options);

int main(int argc, char** argv);

} // namespace btm::cli
