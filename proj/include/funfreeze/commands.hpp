#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace funfreeze {

// Output root resolution, shared by all subcommands: an explicit --out wins,
// then $FUNFREEZE_OUT/<config dir>, then the config dir as written.
std::string resolve_out_dir(const std::string& config_dir_value, const std::string& out_override);

struct TrainOptions {
    std::string config_path;
    int replicas = 4;
    std::optional<std::uint64_t> seed_base;
    std::string out_override;
    std::string estimator_override;  // empty = config value
    bool dry_run = false;
};

struct SweepOptions {
    std::string config_path;
    int n_schedules = 9;
    std::optional<std::uint64_t> seed_base;
    std::string out_override;
};

struct ProbeOptions {
    std::string checkpoint_path;
    std::string data_path;
    std::string out_override;  // output CSV path
    std::string estimator = "batch_square";
    long n_batches = 40;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
};

struct ReportOptions {
    std::string run_dir;
    std::size_t window = 5;
    double alpha = 0.5;
};

int cmd_train(const TrainOptions& opts);
int cmd_sweep_schedules(const SweepOptions& opts);
int cmd_fisher_probe(const ProbeOptions& opts);
int cmd_report(const ReportOptions& opts);

}  // namespace funfreeze
