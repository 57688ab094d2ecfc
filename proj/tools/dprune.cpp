// dprune: dynamic data pruning at desk scale.
//
// Subcommands:
//   gen-data  write source/target CSVs plus a manifest
//   train     one pretraining + pruned finetuning run
//   sweep     cartesian grid over scorers x ratios x betas x seeds
//   verify    instrumented run + numerical checks of the theory
//
// Exit codes: 0 ok, 2 config error, 3 run failure, 4 verify failure.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "dprune/experiment.hpp"
#include "dprune/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRun = 3;
constexpr int kExitVerify = 4;

struct Flags {
    std::string config_path;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<double> pruning_ratio;
    std::optional<std::string> scorer;
    std::optional<double> beta;
    std::optional<std::string> mode;
    std::optional<std::string> optimizer;
    std::optional<int> jobs;
};

void add_common_flags(CLI::App* cmd, Flags& flags) {
    cmd->add_option("--config", flags.config_path, "JSON config file; flags override its values");
    cmd->add_option("--out", flags.out, "output directory");
    cmd->add_option("--seed", flags.seed, "training seed");
    cmd->add_option("--pruning-ratio", flags.pruning_ratio,
                    "fraction of samples removed, in [0,1)");
    cmd->add_option("--scorer", flags.scorer,
                    "molpeg|soft_random|loss_magnitude|grand|el2n|forgetting|entropy|"
                    "least_confidence");
    cmd->add_option("--beta", flags.beta, "EMA pace coefficient in [0,1]");
    cmd->add_option("--mode", flags.mode, "selection granularity: batch|epoch");
    cmd->add_option("--optimizer", flags.optimizer, "sgd|adam");
    cmd->add_option("--jobs", flags.jobs, "sweep worker threads");
}

dprune::ExperimentConfig resolve_config(const Flags& flags, dprune::ExperimentConfig cfg) {
    if (!flags.config_path.empty()) {
        std::ifstream in(flags.config_path);
        if (!in) throw dprune::IoError("cannot open config file " + flags.config_path);
        dprune::json j;
        in >> j;
        dprune::config_from_json(j, cfg);
    }
    if (!flags.out.empty()) cfg.out_dir = flags.out;
    if (flags.seed) cfg.train.seed = *flags.seed;
    if (flags.pruning_ratio) cfg.train.pruning_ratio = *flags.pruning_ratio;
    if (flags.scorer) cfg.train.scorer = dprune::parse_scorer(*flags.scorer);
    if (flags.beta) cfg.train.beta = *flags.beta;
    if (flags.mode) cfg.train.selection_mode = dprune::parse_selection_mode(*flags.mode);
    if (flags.optimizer) cfg.train.optimizer = dprune::parse_optimizer(*flags.optimizer);
    if (flags.jobs) cfg.sweep.jobs = *flags.jobs;
    cfg.train.validate();
    return cfg;
}

int run_gen_data(const Flags& flags) {
    dprune::ExperimentConfig cfg;
    try {
        cfg = resolve_config(flags, dprune::default_config());
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    try {
        const auto result = dprune::cmd_gen_data(cfg);
        std::cout << "wrote " << result.source_path << "\n";
        std::cout << "wrote " << result.target_path << "\n";
        std::cout << "wrote " << result.manifest_path << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "gen-data failed: " << e.what() << "\n";
        return kExitRun;
    }
}

int run_train(const Flags& flags) {
    dprune::ExperimentConfig cfg;
    try {
        cfg = resolve_config(flags, dprune::default_config());
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    try {
        const auto result = dprune::cmd_train(cfg);
        std::cout << "run directory: " << result.run_dir << "\n";
        std::cout << "final val metric:  " << result.output.final_val << "\n";
        std::cout << "final test metric: " << result.output.final_test << "\n";
        std::cout << "time efficiency:   " << result.output.time_efficiency << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "train failed: " << e.what() << "\n";
        return kExitRun;
    }
}

int run_sweep(const Flags& flags) {
    dprune::ExperimentConfig cfg;
    try {
        cfg = resolve_config(flags, dprune::default_config());
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    try {
        const auto result = dprune::cmd_sweep(cfg);
        std::cout << "cells: " << result.cells.size() << ", failures: " << result.failures
                  << "\n";
        std::cout << "wrote " << result.raw_csv_path << "\n";
        std::cout << "wrote " << result.agg_csv_path << "\n";
        if (result.failures > 0) {
            std::cerr << "failed cells recorded in " << result.failures_csv_path << "\n";
            return kExitRun;
        }
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "sweep failed: " << e.what() << "\n";
        return kExitRun;
    }
}

int run_verify(const Flags& flags) {
    dprune::ExperimentConfig cfg;
    try {
        cfg = resolve_config(flags, dprune::default_verify_config());
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    try {
        const auto report = dprune::cmd_verify(cfg);
        for (const std::string& notice : report.notices) {
            std::cerr << "notice: " << notice << "\n";
        }
        for (const auto& check : report.checks) {
            const char* status = check.skipped ? "SKIP" : (check.pass ? "PASS" : "FAIL");
            std::cout << "[" << status << "] " << check.name << "\n";
        }
        std::cout << (report.all_pass ? "verify: all checks passed"
                                      : "verify: some checks FAILED")
                  << "\n";
        return report.all_pass ? kExitOk : kExitVerify;
    } catch (const std::exception& e) {
        std::cerr << "verify failed: " << e.what() << "\n";
        return kExitRun;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynamic data pruning trainer and verification harness"};
    app.require_subcommand(1);

    Flags gen_flags, train_flags, sweep_flags, verify_flags;
    CLI::App* gen = app.add_subcommand("gen-data", "generate source/target CSVs and a manifest");
    add_common_flags(gen, gen_flags);
    CLI::App* train = app.add_subcommand("train", "one pretraining + pruned finetuning run");
    add_common_flags(train, train_flags);
    CLI::App* sweep = app.add_subcommand("sweep", "grid over scorers, ratios, betas, seeds");
    add_common_flags(sweep, sweep_flags);
    CLI::App* verify = app.add_subcommand("verify", "numerical checks of the theory");
    add_common_flags(verify, verify_flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    if (gen->parsed()) return run_gen_data(gen_flags);
    if (train->parsed()) return run_train(train_flags);
    if (sweep->parsed()) return run_sweep(sweep_flags);
    if (verify->parsed()) return run_verify(verify_flags);
    return kExitConfig;
}
