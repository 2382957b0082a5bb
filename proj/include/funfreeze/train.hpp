#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "funfreeze/data.hpp"
#include "funfreeze/fisher.hpp"
#include "funfreeze/model.hpp"
#include "funfreeze/optimizer.hpp"
#include "funfreeze/schedule.hpp"

namespace funfreeze {

struct TrainConfig {
    long steps = 0;
    std::size_t batch_size = 32;
    long k = 100;
    SchedulerSpec scheduler;
    LrKind lr_kind = LrKind::Linear;
    double lr = 5e-3;
    double weight_decay = 0.01;
    double max_grad_norm = 1.0;
    bool clip_over_all_params = false;  // norm over every gradient instead of the update set
    std::uint64_t data_seed = 0;
    std::uint64_t fisher_seed = 0;
    long eval_every = 100;
    long fisher_log_every = 100;
    FisherProbeConfig fisher;  // estimator, n_batches, batch_size for in-run probes

    void validate(int layer_count) const;
};

struct EvalPoint {
    long step = 0;
    std::string split;
    double value = 0.0;

    bool operator==(const EvalPoint&) const = default;
};

struct RunMetrics {
    std::vector<std::pair<long, double>> train_loss;  // one point per step
    std::vector<EvalPoint> evals;
    std::vector<FisherReport> fisher;
    std::vector<UnfreezeEvent> events;
    std::vector<std::string> warnings;

    bool operator==(const RunMetrics&) const = default;
};

struct TrainHooks {
    // Runs after each completed optimizer step.
    std::function<void(long step, const AdapterStack& stack, const FreezeMask& mask)> after_step;
};

// Fraction of argmax-correct predictions; ties resolve to the lowest class.
double evaluate(const AdapterStack& stack, const Dataset& dataset);

// One full run: for each step, advance the unfreeze schedule, log the Fisher
// trace and the validation accuracy on their intervals, then draw a batch,
// take the gradient, clip it, and apply AdamW to the currently trainable
// parameters. FUN schedules probe the live model through a snapshot before
// the step's update. A final validation point is recorded at step N.
RunMetrics train(AdapterStack& stack, const Dataset& train_data, const Dataset& val_data,
                 const TrainConfig& cfg, const TrainHooks* hooks = nullptr);

}  // namespace funfreeze
