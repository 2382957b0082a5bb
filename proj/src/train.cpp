#include "funfreeze/train.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "funfreeze/errors.hpp"
#include "funfreeze/rngmix.hpp"
#include "funfreeze/tape.hpp"

namespace funfreeze {

namespace {

// Sub-stream tags keeping the FUN selection probe, the periodic logging
// probe, and their batch draws on independent RNG streams.
enum : std::uint64_t {
    kFunProbeStream = 0xF1,
    kFunBatchStream = 0xF2,
    kLogProbeStream = 0x71,
    kLogBatchStream = 0x72,
};

Tensor batch_features(const Dataset& data, const std::vector<std::size_t>& idx) {
    Tensor x = Tensor::zeros({idx.size(), data.h});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < data.h; ++j) {
            x.at(i, j) = data.examples[idx[i]].features[j];
        }
    }
    return x;
}

FisherReport run_probe(const AdapterStack& stack, const Dataset& train_data,
                       const FreezeMask& mask, const TrainConfig& cfg, long step,
                       std::vector<int> scope, std::uint64_t probe_stream,
                       std::uint64_t batch_stream) {
    AdapterStack snapshot = stack;
    FisherProbeConfig pc = cfg.fisher;
    pc.scope = std::move(scope);
    pc.seed = mix_seed(cfg.fisher_seed, probe_stream, static_cast<std::uint64_t>(step));
    std::vector<Tensor> batches =
        draw_probe_batches(train_data, pc.batch_size, pc.n_batches,
                           mix_seed(cfg.fisher_seed, batch_stream, static_cast<std::uint64_t>(step)));
    return trace_probe(snapshot, batches, mask, pc);
}

}  // namespace

void TrainConfig::validate(int layer_count) const {
    if (steps < 1) throw ConfigError("training needs steps >= 1");
    if (batch_size == 0) throw ConfigError("training needs a positive batch size");
    if (lr <= 0.0) throw ConfigError("training needs a positive learning rate");
    if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
    if (max_grad_norm <= 0.0) throw ConfigError("max gradient norm must be positive");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (fisher_log_every < 1) throw ConfigError("fisher_log_every must be >= 1");
    if (validate_budget(k, layer_count, steps) == BudgetCheck::Error) {
        throw ConfigError("unfreeze budget k=" + std::to_string(k) +
                          " times L=" + std::to_string(layer_count) + " exceeds N=" +
                          std::to_string(steps) + " steps; not every layer would unfreeze");
    }
    fisher.validate(layer_count);
}

double evaluate(const AdapterStack& stack, const Dataset& dataset) {
    if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
    if (dataset.h != stack.hidden()) {
        throw std::invalid_argument("evaluate: dataset width does not match the model");
    }
    Tensor logits = forward_logits(stack, dataset.features_matrix(0, dataset.size()));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c) {
            if (logits.at(i, c) > logits.at(i, best)) best = c;
        }
        if (best == dataset.examples[i].label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

RunMetrics train(AdapterStack& stack, const Dataset& train_data, const Dataset& val_data,
                 const TrainConfig& cfg, const TrainHooks* hooks) {
    int layer_count = stack.layer_count();
    cfg.validate(layer_count);
    if (train_data.empty()) throw ConfigError("training dataset is empty");
    if (val_data.empty()) throw ConfigError("validation dataset is empty");
    if (train_data.h != stack.hidden() || val_data.h != stack.hidden()) {
        throw ConfigError("dataset width does not match the model's hidden size");
    }
    if (train_data.classes != stack.classes()) {
        throw ConfigError("dataset class count does not match the model's head");
    }

    RunMetrics metrics;
    if (validate_budget(cfg.k, layer_count, cfg.steps) == BudgetCheck::Warning) {
        metrics.warnings.push_back("unfreezing spans more than half the run (k*L > N/2)");
    }

    FreezeMask mask = FreezeMask::all_frozen(layer_count);
    long current_step = 0;

    Scheduler::ProbeFn probe;
    if (cfg.scheduler.kind == ScheduleKind::FUN) {
        probe = [&](const std::vector<int>& frozen) {
            return run_probe(stack, train_data, mask, cfg, current_step, frozen,
                             kFunProbeStream, kFunBatchStream)
                .per_layer_trace;
        };
    }
    Scheduler scheduler(cfg.scheduler, layer_count, cfg.k, cfg.steps, probe);

    AdamW opt(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
    LrSchedule lr{cfg.lr_kind, cfg.lr, cfg.steps};
    std::mt19937_64 data_rng(splitmix64(cfg.data_seed));
    std::uniform_int_distribution<std::size_t> pick(0, train_data.size() - 1);

    for (long i = 0; i < cfg.steps; ++i) {
        current_step = i;
        if (std::optional<UnfreezeEvent> event = scheduler.advance(i)) {
            for (int l : event->layers) mask.trainable[static_cast<std::size_t>(l)] = true;
            metrics.events.push_back(std::move(*event));
        }
        if (i % cfg.fisher_log_every == 0) {
            FisherReport rep =
                run_probe(stack, train_data, mask, cfg, i, {}, kLogProbeStream, kLogBatchStream);
            rep.step = i;
            metrics.fisher.push_back(std::move(rep));
        }
        if (i % cfg.eval_every == 0) {
            metrics.evals.push_back({i, "val", evaluate(stack, val_data)});
        }

        std::vector<std::size_t> idx(cfg.batch_size);
        for (std::size_t& v : idx) v = pick(data_rng);
        std::vector<std::size_t> labels(cfg.batch_size);
        for (std::size_t j = 0; j < cfg.batch_size; ++j) {
            labels[j] = train_data.examples[idx[j]].label;
        }

        Tape tape;
        ForwardNodes nodes = forward(tape, stack, batch_features(train_data, idx));
        NodeId loss = tape.nll(tape.log_softmax(nodes.logits), labels);
        double loss_value = tape.value(loss).elems[0];
        if (!std::isfinite(loss_value)) {
            throw RunError("training loss became non-finite at step " + std::to_string(i) +
                           " (scheduler " + schedule_kind_name(cfg.scheduler.kind) + ", lr " +
                           std::to_string(lr.at(i)) + ")");
        }
        tape.backward(loss);

        std::vector<ParamRef> refs = trainable_params(stack, mask);
        std::vector<Tensor> grads;
        grads.reserve(refs.size());
        for (const ParamRef& ref : refs) grads.push_back(tape.grad(nodes.node_for(ref)));

        if (cfg.clip_over_all_params) {
            double sq = 0.0;
            for (const ParamRef& ref : all_params(stack)) {
                for (double v : tape.grad(nodes.node_for(ref)).elems) sq += v * v;
            }
            double norm = std::sqrt(sq);
            if (norm > cfg.max_grad_norm) {
                double scale = cfg.max_grad_norm / norm;
                for (Tensor& g : grads) {
                    for (double& v : g.elems) v *= scale;
                }
            }
        } else {
            clip_global_norm(grads, cfg.max_grad_norm);
        }

        opt.step(stack, refs, grads, lr.at(i));
        metrics.train_loss.emplace_back(i, loss_value);
        if (hooks && hooks->after_step) hooks->after_step(i, stack, mask);
    }

    metrics.evals.push_back({cfg.steps, "val", evaluate(stack, val_data)});
    return metrics;
}

}  // namespace funfreeze
