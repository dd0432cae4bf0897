#include <cstdint>
#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "qexp/scenarios.hpp"

int main(int argc, char** argv) {
    CLI::App app{"numerical laboratory for quadratic-exponential BSDEs with jumps"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "run one scenario from a JSON config");
    std::string config_path;
    run->add_option("config", config_path, "path to the config file")->required();
    std::uint64_t seed = 0;
    auto* seed_opt = run->add_option("--seed", seed, "override the config seed");
    std::string out_dir;
    auto* out_opt = run->add_option("--out-dir", out_dir, "override the output directory");
    bool quiet = false;
    run->add_flag("--quiet", quiet, "suppress the summary printout");

    auto* scen = app.add_subcommand("list-scenarios", "list scenario names");
    auto* pres = app.add_subcommand("list-presets", "list model / driver / terminal presets");

    CLI11_PARSE(app, argc, argv);

    try {
        if (scen->parsed()) {
            for (const auto& info : qexp::scenario_registry())
                std::printf("%-20s %s\n", info.name.c_str(), info.blurb.c_str());
            return 0;
        }
        if (pres->parsed()) {
            for (const auto& entry : qexp::preset_listing())
                std::printf("%-9s %-14s %s\n", entry.kind.c_str(), entry.name.c_str(),
                            entry.params.c_str());
            return 0;
        }
        auto cfg = qexp::load_config_file(config_path);
        if (seed_opt->count() > 0) {
            cfg.seed = seed;
            cfg.echo["seed"] = seed;
        }
        if (out_opt->count() > 0) {
            cfg.out_dir = out_dir;
            cfg.echo["out_dir"] = out_dir;
        }
        auto manifest = qexp::run_experiment(cfg);
        if (!quiet) std::cout << qexp::render_summary(manifest);
        return manifest.exit_code();
    } catch (const qexp::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
