// elm_cli: run, compare and sweep Lagrangian solver experiments from JSON
// configs. Exit codes: 0 success, 1 a run aborted, 2 invalid config.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "elm/experiment.hpp"

namespace {

struct Flags {
    std::vector<std::string> configs;
    std::string out;
    std::uint64_t seed = 0;
    bool quiet = false;
    std::string param;
    std::vector<std::string> values;
};

void add_common(CLI::App *cmd, Flags &f, bool many_configs) {
    if (many_configs)
        cmd->add_option("--config,-c", f.configs, "config files (one per method)")
            ->required()
            ->check(CLI::ExistingFile);
    else
        cmd->add_option("--config,-c", f.configs, "config file")
            ->required()
            ->expected(1)
            ->check(CLI::ExistingFile);
    cmd->add_option("--out,-o", f.out, "output directory (overrides output_path)");
    cmd->add_option("--seed", f.seed, "solver seed (overrides solver.seed)");
    cmd->add_flag("--quiet,-q", f.quiet, "suppress progress output");
}

elm::CommandOptions command_options(const CLI::App *cmd, const Flags &f) {
    elm::CommandOptions o;
    if (cmd->count("--out"))
        o.out = f.out;
    if (cmd->count("--seed"))
        o.seed = f.seed;
    o.quiet = f.quiet;
    return o;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Single-loop Lagrangian solvers with embedded stochastic "
                 "subgradient methods"};
    app.require_subcommand(1);
    Flags f;

    auto *run = app.add_subcommand("run", "run every repetition of a config");
    add_common(run, f, false);
    auto *compare = app.add_subcommand("compare", "run several methods on one problem");
    add_common(compare, f, true);
    auto *sweep = app.add_subcommand("sweep", "rerun a config over parameter values");
    add_common(sweep, f, false);
    sweep->add_option("--param,-p", f.param, "dotted parameter path, or seed")->required();
    sweep->add_option("--values,-v", f.values, "parameter values")
        ->required()
        ->delimiter(',');
    app.add_subcommand("list-problems", "list built-in problem recipes");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        return app.exit(e) == 0 ? elm::exit_success : elm::exit_config_invalid;
    }

    try {
        if (app.got_subcommand("list-problems")) {
            elm::cmd_list_problems(std::cout);
            return elm::exit_success;
        }
        if (run->parsed())
            return elm::cmd_run(elm::parse_config(f.configs.front()),
                                command_options(run, f), std::cout);
        if (compare->parsed()) {
            std::vector<elm::RunConfig> cfgs;
            for (const auto &c : f.configs)
                cfgs.push_back(elm::parse_config(c));
            return elm::cmd_compare(cfgs, command_options(compare, f), std::cout);
        }
        if (sweep->parsed())
            return elm::cmd_sweep(elm::parse_config(f.configs.front()), f.param,
                                  f.values, command_options(sweep, f), std::cout);
    } catch (const elm::ConfigError &e) {
        std::cerr << "config error: " << e.what() << '\n';
        return elm::exit_config_invalid;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return elm::exit_aborted;
    }
    return elm::exit_success;
}
