#include <cstdint>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"

#include "steerlab/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"steerlab: attention decomposition, concept-shift dynamics and trace analysis"};
    app.set_version_flag("--version", std::string(steerlab::kVersion));
    app.require_subcommand(1);

    std::string config;
    std::uint64_t seed = 0;
    std::string out;

    const std::map<std::string, std::string> about{
        {"verify-theorem", "check the output-concentration closed form and threshold on a concept"},
        {"decompose", "split a head output into prompt and context parts over an omega sweep"},
        {"construct-prompt", "build the steering soft prompt for a target and sweep omega"},
        {"simulate", "roll a shift schedule and sample responses per round"},
        {"analyze", "score prompt-induced shifts against token groups"},
        {"pca", "3-component PCA of prompt-induced shifts"},
    };
    for (const auto& [name, fn] : steerlab::cli::commands()) {
        const auto it = about.find(name);
        auto* sub = app.add_subcommand(name, it == about.end() ? std::string() : it->second);
        sub->add_option("--config", config, "JSON experiment config")->required();
        sub->add_option("--seed", seed, "override the config seed");
        sub->add_option("--out", out, "output directory");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : steerlab::cli::kConfigError;
    }

    const CLI::App* chosen = app.get_subcommands().front();
    steerlab::cli::Overrides over;
    if (chosen->count("--seed")) over.seed = seed;
    if (chosen->count("--out")) over.out = out;
    return steerlab::cli::run_command(chosen->get_name(), config, over);
}
