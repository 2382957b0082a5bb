#include <CLI11.hpp>

#include <cstdint>
#include <exception>
#include <iostream>

#include "funfreeze/commands.hpp"
#include "funfreeze/errors.hpp"

int main(int argc, char** argv) {
    CLI::App app{"scheduled unfreezing for adapter stacks: training, Fisher probes, "
                 "schedule sweeps, and report emission"};
    app.require_subcommand(1);

    funfreeze::TrainOptions train_opts;
    std::uint64_t train_seed_base = 0;
    CLI::App* train = app.add_subcommand("train", "run seeded training replicas");
    train->add_option("--config", train_opts.config_path, "experiment config file")->required();
    train->add_option("--replicas", train_opts.replicas, "independent seeded runs (default 4)");
    CLI::Option* train_sb =
        train->add_option("--seed-base", train_seed_base, "root seed replacing the config seeds");
    train->add_option("--out", train_opts.out_override, "output directory override");
    train->add_option("--estimator", train_opts.estimator_override,
                      "fisher estimator override: sampled, exact, or batch_square");
    train->add_flag("--dry-run", train_opts.dry_run,
                    "print the resolved unfreeze schedule and exit");

    funfreeze::SweepOptions sweep_opts;
    std::uint64_t sweep_seed_base = 0;
    CLI::App* sweep =
        app.add_subcommand("sweep-schedules", "train over sampled fixed unfreeze orders");
    sweep->add_option("--config", sweep_opts.config_path, "experiment config file")->required();
    sweep->add_option("--n-schedules", sweep_opts.n_schedules,
                      "sampled constrained permutations (default 9; top-down is added)");
    CLI::Option* sweep_sb =
        sweep->add_option("--seed-base", sweep_seed_base, "root seed replacing the config seeds");
    sweep->add_option("--out", sweep_opts.out_override, "output directory override");

    funfreeze::ProbeOptions probe_opts;
    CLI::App* probe = app.add_subcommand("fisher-probe", "trace-of-Fisher probe on a checkpoint");
    probe->add_option("--checkpoint", probe_opts.checkpoint_path, "checkpoint file")->required();
    probe->add_option("--data", probe_opts.data_path, "dataset file (labels ignored)")->required();
    probe->add_option("--out", probe_opts.out_override, "output CSV path");
    probe->add_option("--estimator", probe_opts.estimator,
                      "sampled, exact, or batch_square (default batch_square)");
    probe->add_option("--n-batches", probe_opts.n_batches, "probe batches (default 40)");
    probe->add_option("--batch-size", probe_opts.batch_size, "probe batch size (default 8)");
    probe->add_option("--seed", probe_opts.seed, "probe seed (default 0)");

    funfreeze::ReportOptions report_opts;
    CLI::App* report = app.add_subcommand("report", "emit plot-ready curves for a run directory");
    report->add_option("--run", report_opts.run_dir, "replica directory with metrics.csv")
        ->required();
    report->add_option("--window", report_opts.window, "moving-average window (default 5)");
    report->add_option("--alpha", report_opts.alpha, "width threshold fraction (default 0.5)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(train)) {
            if (train_sb->count() > 0) train_opts.seed_base = train_seed_base;
            return funfreeze::cmd_train(train_opts);
        }
        if (app.got_subcommand(sweep)) {
            if (sweep_sb->count() > 0) sweep_opts.seed_base = sweep_seed_base;
            return funfreeze::cmd_sweep_schedules(sweep_opts);
        }
        if (app.got_subcommand(probe)) return funfreeze::cmd_fisher_probe(probe_opts);
        if (app.got_subcommand(report)) return funfreeze::cmd_report(report_opts);
    } catch (const funfreeze::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const funfreeze::RunError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
