#include "marglik/commands.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

int main(int argc, char** argv) {
    CLI::App app{"marginal-likelihood estimators and hyperparameter training"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        auto* opt = cmd->add_option("--config", config_path, "JSON run config");
        if (needs_config) opt->required();
        cmd->add_option("--out", out_dir, "output directory (overrides config)");
        cmd->add_option("--seed", seed, "seed override");
    };

    CLI::App* grid = app.add_subcommand("grid", "bound values over a hyperparameter grid");
    CLI::App* pareto = app.add_subcommand("pareto", "tightness vs runtime matrix");
    CLI::App* train = app.add_subcommand("train", "interleaved weight/hyper training");
    CLI::App* check = app.add_subcommand("check", "run the oracle and property suite");
    add_common(grid, true);
    add_common(pareto, true);
    add_common(train, true);
    add_common(check, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (check->parsed()) return marglik::cmd_check(std::cout);
        marglik::RunConfig cfg = marglik::load_config_file(config_path);
        const std::string dir = out_dir.empty() ? cfg.out_dir : out_dir;
        if (grid->parsed()) return marglik::cmd_grid(cfg, dir, seed, std::cout);
        if (pareto->parsed()) return marglik::cmd_pareto(cfg, dir, seed, std::cout);
        if (train->parsed()) return marglik::cmd_train(cfg, dir, seed, std::cout);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
