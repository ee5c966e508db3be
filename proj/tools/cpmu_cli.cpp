// Command-line front end: gen-data, train, unlearn, evaluate, experiment,
// ablation. Every verb derives its inputs from (config, seed) so artifacts are
// reproducible byte for byte; exit code 2 flags config problems, 3 numeric
// failures.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cpmu/harness.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::int64_t> seed;
    std::string params_path;
};

cpmu::ExperimentConfig load_config(const CommonArgs& args) {
    cpmu::ExperimentConfig cfg = cpmu::parse_config_file(args.config_path);
    cfg.output_dir = args.out_dir;
    if (args.seed) cfg.seeds = {static_cast<std::uint64_t>(*args.seed)};
    return cfg;
}

cpmu::detail::SeedRun prepare(const cpmu::ExperimentConfig& cfg) {
    return cpmu::detail::prepare_seed(cfg, cfg.seeds.front(), 0);
}

int cmd_gen_data(const CommonArgs& args) {
    const auto cfg = load_config(args);
    fs::create_directories(cfg.output_dir);
    const auto data = cpmu::generate_mixture(cfg.n_classes, cfg.n_dims, cfg.n_per_class,
                                             cfg.separation, cpmu::mix_seed(cfg.seeds.front(), 1));
    const auto path = fs::path(cfg.output_dir) / "dataset.txt";
    cpmu::save_dataset(data, path.string());
    std::cout << path.string() << "\n";
    return 0;
}

int cmd_train(const CommonArgs& args) {
    const auto cfg = load_config(args);
    fs::create_directories(cfg.output_dir);
    const auto run = prepare(cfg);
    const auto path = fs::path(cfg.output_dir) / "theta_o.params";
    cpmu::save_params(run.theta_o, path.string());
    std::cout << path.string() << " acc_train=" << cpmu::accuracy(run.theta_o, run.bundle.train)
              << "\n";
    return 0;
}

int cmd_unlearn(const CommonArgs& args) {
    const auto cfg = load_config(args);
    fs::create_directories(cfg.output_dir);
    auto run = prepare(cfg);
    if (!args.params_path.empty()) run.theta_o = cpmu::load_params(args.params_path);
    double tt = 0.0;
    std::vector<cpmu::EpochTrace> trace;
    const auto theta_u = cpmu::detail::apply_method(cfg, run, cfg.seeds.front(), tt, &trace);
    const auto path = fs::path(cfg.output_dir) / "theta_u.params";
    cpmu::save_params(theta_u, path.string());
    if (!trace.empty()) {
        std::ofstream ts(fs::path(cfg.output_dir) / "trace.tsv");
        cpmu::write_trace(trace, ts);
    }
    std::cout << path.string() << " tt_s=" << tt << "\n";
    return 0;
}

int cmd_evaluate(const CommonArgs& args) {
    const auto cfg = load_config(args);
    fs::create_directories(cfg.output_dir);
    auto run = prepare(cfg);
    cpmu::ModelParams params = run.theta_o;
    if (!args.params_path.empty()) {
        params = cpmu::load_params(args.params_path);
    } else {
        double tt = 0.0;
        params = cpmu::detail::apply_method(cfg, run, cfg.seeds.front(), tt);
    }
    for (int c : cfg.eval.c_values) {
        for (int d : cfg.eval.d_values) {
            const auto rep = cpmu::evaluate_all(params, run.bundle, cfg.eval.alpha, c, d);
            const auto name = "metrics_c" + std::to_string(c) + "_d" + std::to_string(d) + ".csv";
            std::ofstream os(fs::path(cfg.output_dir) / name);
            cpmu::write_report(rep, os);
        }
    }
    const auto cal = cpmu::calibrate(params, run.bundle.test_calib, cfg.eval.alpha);
    std::ofstream cs(fs::path(cfg.output_dir) / "calibration.txt");
    cpmu::write_calibration_record(cal, cs);
    std::cout << cfg.output_dir << "\n";
    return 0;
}

int cmd_experiment(const CommonArgs& args) {
    auto cfg = cpmu::parse_config_file(args.config_path);
    cfg.output_dir = args.out_dir;
    std::optional<std::uint64_t> only;
    if (args.seed) only = static_cast<std::uint64_t>(*args.seed);
    std::cout << cpmu::run_experiment(cfg, only) << "\n";
    return 0;
}

int cmd_ablation(const CommonArgs& args, const std::string& sweep,
                 const std::vector<std::string>& grid) {
    auto cfg = cpmu::parse_config_file(args.config_path);
    cfg.output_dir = args.out_dir;
    if (args.seed) cfg.seeds = {static_cast<std::uint64_t>(*args.seed)};
    std::cout << cpmu::run_ablation(cfg, cpmu::parse_sweep_key(sweep), grid) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conformal-prediction machine unlearning toolkit"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the verb

    CommonArgs args;
    app.add_option("--config", args.config_path, "experiment config file")->required();
    app.add_option("--seed", args.seed, "restrict to / select a single seed");
    app.add_option("--out", args.out_dir, "output directory");

    auto* gen = app.add_subcommand("gen-data", "write the synthetic dataset");
    auto* train = app.add_subcommand("train", "train the base model");
    auto* unlearn = app.add_subcommand("unlearn", "apply the configured unlearning method");
    unlearn->add_option("--params", args.params_path, "base model checkpoint to start from");
    auto* evaluate = app.add_subcommand("evaluate", "six-subset metric report");
    evaluate->add_option("--params", args.params_path, "checkpoint to evaluate");
    auto* experiment = app.add_subcommand("experiment", "full multi-seed run with aggregates");
    auto* ablation = app.add_subcommand("ablation", "sweep one knob over a grid");
    std::string sweep;
    std::vector<std::string> grid;
    ablation->add_option("--sweep", sweep, "c | alpha | lambda | reg_norm")->required();
    ablation->add_option("--grid", grid, "comma-separated grid values")
        ->required()
        ->delimiter(',');

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return cmd_gen_data(args);
        if (train->parsed()) return cmd_train(args);
        if (unlearn->parsed()) return cmd_unlearn(args);
        if (evaluate->parsed()) return cmd_evaluate(args);
        if (experiment->parsed()) return cmd_experiment(args);
        if (ablation->parsed()) return cmd_ablation(args, sweep, grid);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const cpmu::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const cpmu::ArgumentError& e) {
        std::cerr << "argument error: " << e.what() << "\n";
        return 2;
    } catch (const cpmu::SplitError& e) {
        std::cerr << "split error: " << e.what() << "\n";
        return 2;
    } catch (const cpmu::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
