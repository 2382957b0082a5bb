#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "funfreeze/data.hpp"
#include "funfreeze/model.hpp"

namespace funfreeze {

enum class FisherEstimator { Sampled, Exact, BatchSquare };

std::string estimator_name(FisherEstimator e);
FisherEstimator parse_estimator(const std::string& name);

struct FisherProbeConfig {
    long n_batches = 40;
    std::size_t batch_size = 8;
    FisherEstimator estimator = FisherEstimator::BatchSquare;
    std::uint64_t seed = 0;
    std::vector<int> scope;  // layer indices to report; empty = every layer

    void validate(int layer_count) const;
};

struct FisherReport {
    long step = 0;
    std::map<int, double> per_layer_trace;
    double head_trace = 0.0;
    double avg_per_trainable_adapter = 0.0;
    FisherEstimator estimator = FisherEstimator::BatchSquare;
    long n_batches_used = 0;

    bool operator==(const FisherReport&) const = default;
};

using ParamTraceMap = std::map<ParamRef, double>;

struct AggregateTraces {
    std::map<int, double> per_layer;
    double head = 0.0;
    double avg_per_trainable_adapter = 0.0;
};

// Sums per-parameter traces into adapter blocks: one value per scoped layer
// (down/up weights and biases), the head separately, and the mean over
// layers that are both scoped and trainable (0 when there are none).
AggregateTraces aggavg(const ParamTraceMap& traces, const FreezeMask& mask,
                       const std::vector<int>& scope_layers);

// One pass of training data for probing, drawn with a dedicated RNG stream:
// a fresh shuffle chunked into full batches, capped at n_batches. A dataset
// smaller than one batch yields a single short batch.
std::vector<Tensor> draw_probe_batches(const Dataset& data, std::size_t batch_size,
                                       long n_batches, std::uint64_t seed);

// Trace-of-Fisher estimate on a model snapshot. Labels come from the model's
// own predictive distribution, never from the data: sampled draws one label
// per example, exact enumerates all labels weighted by probability, and
// batch_square draws like sampled but squares the batch-mean gradient. Batch
// traces are accumulated per parameter, divided by the batch size, then
// averaged over batches and aggregated with aggavg. per_param, when given,
// receives the batch-averaged per-parameter traces for scoped adapter and
// head parameters.
FisherReport trace_probe(const AdapterStack& snapshot, const std::vector<Tensor>& batches,
                         const FreezeMask& mask, const FisherProbeConfig& cfg,
                         ParamTraceMap* per_param = nullptr);

using Series = std::vector<std::pair<long, double>>;  // (step, value)

// Trailing-window mean: point i becomes the mean of the last min(i+1, W)
// values. Steps pass through unchanged.
Series moving_average(const Series& series, std::size_t window);

struct CurveStats {
    double peak_value = 0.0;
    long peak_step = 0;
    long width_steps = 0;
    double alpha = 0.5;
};

// Peak of the series plus the length in steps of the maximal contiguous
// interval around the peak whose values stay at or above alpha * peak. A
// single-point series reports one logging interval of width; the interval
// is inferred from the first two steps.
CurveStats curve_stats(const Series& series, double alpha = 0.5);

struct NormalizedSeries {
    Series points;
    bool constant = false;  // input had max == min; points are all zero
};

NormalizedSeries min_max_normalize(const Series& series);

}  // namespace funfreeze
