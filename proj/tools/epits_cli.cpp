#include "epits/harness.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

// exit codes: 0 success, 1 configuration error, 2 runtime failure
int guarded(const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const epits::ConfigError& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return 1;
    } catch (const epits::ParseError& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return 1;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"epidemic time-series pre-training and evaluation harness"};
    app.require_subcommand(1);

    std::string config_path;
    std::string spec_path;
    std::string results_dir;
    std::vector<std::string> overrides;
    std::vector<double> fractions;
    std::uint64_t seed = 1;

    auto* run = app.add_subcommand("run", "run one experiment from a config file");
    run->add_option("config", config_path, "experiment config (JSON)")->required();
    run->add_option("--set", overrides, "override a scalar field, e.g. model.embed_dim=32");

    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    synth->add_option("spec", spec_path, "synthetic corpus spec (JSON)")->required();
    synth->add_option("--seed", seed, "generator seed");

    auto* sweep = app.add_subcommand("sweep", "training-data fraction sweep");
    sweep->add_option("config", config_path, "experiment config (JSON)")->required();
    sweep->add_option("--fractions", fractions, "fractions in (0,1]")->required();
    sweep->add_option("--set", overrides, "override a scalar field");

    auto* plot = app.add_subcommand("plot", "render SVG plots from a results directory");
    plot->add_option("results_dir", results_dir, "experiment output directory")->required();

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) {
        return guarded([&] {
            const auto config = epits::harness::load_experiment_config(config_path, overrides);
            const auto results = epits::harness::run_experiment(config);
            for (const auto& result : results)
                std::cout << result.task << " " << result.dataset
                          << " avg_rmse=" << result.avg_rmse << "\n";
            std::cout << "artifacts written to " << config.output_dir << "\n";
        });
    }
    if (synth->parsed()) {
        return guarded([&] {
            const auto spec = epits::harness::load_synthetic_spec(spec_path);
            const auto manifest = epits::harness::generate_synthetic(spec, seed);
            std::cout << "corpus manifest: " << manifest << "\n";
        });
    }
    if (sweep->parsed()) {
        return guarded([&] {
            const auto config = epits::harness::load_experiment_config(config_path, overrides);
            const auto rows = epits::harness::sweep_data_fraction(config, fractions);
            for (const auto& row : rows) {
                std::cout << "fraction " << row.fraction << " seed " << row.seed << ": ";
                if (row.skipped)
                    std::cout << "skipped\n";
                else
                    std::cout << "avg_rmse=" << row.avg_rmse << "\n";
            }
            std::cout << "table written to " << config.output_dir << "/sweep.csv\n";
        });
    }
    return guarded([&] {
        for (const auto& file : epits::harness::emit_plots(results_dir))
            std::cout << "wrote " << file << "\n";
    });
}
