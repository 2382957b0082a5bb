#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "funfreeze/data.hpp"
#include "funfreeze/fisher.hpp"
#include "funfreeze/schedule.hpp"
#include "funfreeze/train.hpp"

namespace funfreeze {

struct ModelSection {
    std::size_t hidden = 32;
    int layers = 6;
    std::size_t classes = 4;
    std::size_t reduction_factor = 16;
    bool identity_init = true;
    long pretrain_steps = 300;
    double pretrain_lr = 0.05;

    bool operator==(const ModelSection&) const = default;
};

struct DataSection {
    std::string dataset_dir;  // empty = generate the task below
    std::size_t n_train = 2048;
    std::size_t n_val = 512;
    std::size_t n_test_per_domain = 512;
    std::size_t n_shift_domains = 3;
    double shift_strength = 0.8;
    bool rings = false;
    double latent_noise = 0.35;
    double noise_sigma = 0.05;

    bool operator==(const DataSection&) const = default;
};

struct TrainSection {
    long steps = 1500;  // exactly one of steps/epochs is positive
    long epochs = 0;
    std::size_t batch_size = 32;
    long k = 100;
    ScheduleKind scheduler = ScheduleKind::GU;
    std::vector<int> permutation;  // fixed scheduler only
    double lr = 5e-3;
    LrKind lr_schedule = LrKind::Linear;
    double weight_decay = 0.01;
    double max_grad_norm = 1.0;
    bool clip_over_all_params = false;
    long eval_every = 100;
    long fisher_log_every = 100;
    FisherEstimator fisher_estimator = FisherEstimator::BatchSquare;
    long fisher_n_batches = 40;
    std::size_t fisher_batch_size = 8;
    std::uint64_t seed_data = 1;
    std::uint64_t seed_init = 2;
    std::uint64_t seed_scheduler = 3;
    std::uint64_t seed_fisher = 4;

    bool operator==(const TrainSection&) const = default;
};

struct OutputSection {
    std::string dir = "runs/out";

    bool operator==(const OutputSection&) const = default;
};

struct ExperimentConfig {
    ModelSection model;
    DataSection data;
    TrainSection train;
    OutputSection output;

    bool operator==(const ExperimentConfig&) const = default;
};

// Sectioned key = value text. '#' and ';' start comments; unknown sections or
// keys are rejected with the offending line number. parse(serialize(c)) == c.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig parse_config_file(const std::string& path);
std::string serialize_config(const ExperimentConfig& cfg);

// Step budget: the explicit step count, or ceil(n_train / batch_size) * epochs.
long resolve_steps(const TrainSection& train, std::size_t n_train);

struct ReplicaSeeds {
    std::uint64_t data = 0;
    std::uint64_t init = 0;
    std::uint64_t scheduler = 0;
    std::uint64_t fisher = 0;
};

// Per-replica seed streams. seed_base, when given, replaces the config's four
// seeds as the common root. The generated task itself always uses the config
// (or base-derived) data seed unmixed, so every replica sees the same task.
ReplicaSeeds replica_seeds(const TrainSection& train, int replica,
                           std::optional<std::uint64_t> seed_base);
std::uint64_t task_seed(const TrainSection& train, std::optional<std::uint64_t> seed_base);

ShiftTaskSpec task_spec_from(const ExperimentConfig& cfg, std::uint64_t seed);
TrainConfig train_config_from(const ExperimentConfig& cfg, long steps,
                              const ReplicaSeeds& seeds);

}  // namespace funfreeze
