#include "funfreeze/fisher.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "funfreeze/errors.hpp"
#include "funfreeze/rngmix.hpp"
#include "funfreeze/tape.hpp"

namespace funfreeze {

namespace {

std::vector<int> resolve_scope(const FisherProbeConfig& cfg, int layer_count) {
    if (cfg.scope.empty()) {
        std::vector<int> all(static_cast<std::size_t>(layer_count));
        std::iota(all.begin(), all.end(), 0);
        return all;
    }
    return cfg.scope;
}

std::size_t sample_class(const std::vector<double>& probs, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    double u = uniform(rng);
    double cum = 0.0;
    for (std::size_t c = 0; c < probs.size(); ++c) {
        cum += probs[c];
        if (u < cum) return c;
    }
    return probs.size() - 1;
}

std::vector<double> row_probs(const Tensor& log_probs, std::size_t row) {
    std::vector<double> p(log_probs.cols());
    for (std::size_t c = 0; c < p.size(); ++c) p[c] = std::exp(log_probs.at(row, c));
    return p;
}

// Probed parameters: adapter tensors of every scoped layer, plus the head.
std::vector<ParamRef> probe_params(const std::vector<int>& scope) {
    std::vector<ParamRef> refs;
    for (int l : scope) {
        refs.push_back({ParamField::DownWeight, l});
        refs.push_back({ParamField::DownBias, l});
        refs.push_back({ParamField::UpWeight, l});
        refs.push_back({ParamField::UpBias, l});
    }
    refs.push_back({ParamField::HeadWeight, -1});
    refs.push_back({ParamField::HeadBias, -1});
    return refs;
}

void accumulate_squared_grads(const Tape& tape, const ForwardNodes& nodes,
                              const std::vector<ParamRef>& refs, double weight, double divisor,
                              ParamTraceMap& acc) {
    for (const ParamRef& ref : refs) {
        const Tensor& g = tape.grad(nodes.node_for(ref));
        double sq = 0.0;
        for (double v : g.elems) sq += v * v;
        acc[ref] += weight * sq / divisor;
    }
}

Tensor single_row(const Tensor& batch, std::size_t row) {
    Tensor out = Tensor::zeros({1, batch.cols()});
    for (std::size_t c = 0; c < batch.cols(); ++c) out.at(0, c) = batch.at(row, c);
    return out;
}

}  // namespace

std::string estimator_name(FisherEstimator e) {
    switch (e) {
        case FisherEstimator::Sampled: return "sampled";
        case FisherEstimator::Exact: return "exact";
        case FisherEstimator::BatchSquare: return "batch_square";
    }
    throw std::logic_error("unknown estimator");
}

FisherEstimator parse_estimator(const std::string& name) {
    if (name == "sampled") return FisherEstimator::Sampled;
    if (name == "exact") return FisherEstimator::Exact;
    if (name == "batch_square") return FisherEstimator::BatchSquare;
    throw ConfigError("unknown fisher estimator '" + name +
                      "' (expected sampled, exact, or batch_square)");
}

void FisherProbeConfig::validate(int layer_count) const {
    if (n_batches < 1) throw ConfigError("fisher probe needs n_batches >= 1");
    if (batch_size == 0) throw ConfigError("fisher probe needs a positive batch size");
    for (int l : scope) {
        if (l < 0 || l >= layer_count) {
            throw ConfigError("fisher scope layer " + std::to_string(l) +
                              " is out of range for a " + std::to_string(layer_count) +
                              "-layer stack");
        }
    }
}

AggregateTraces aggavg(const ParamTraceMap& traces, const FreezeMask& mask,
                       const std::vector<int>& scope_layers) {
    auto trace_of = [&traces](const ParamRef& ref) {
        auto it = traces.find(ref);
        return it == traces.end() ? 0.0 : it->second;
    };

    AggregateTraces agg;
    for (int l : scope_layers) {
        agg.per_layer[l] = trace_of({ParamField::DownWeight, l}) +
                           trace_of({ParamField::DownBias, l}) +
                           trace_of({ParamField::UpWeight, l}) + trace_of({ParamField::UpBias, l});
    }
    agg.head = trace_of({ParamField::HeadWeight, -1}) + trace_of({ParamField::HeadBias, -1});

    double sum = 0.0;
    int count = 0;
    for (const auto& [layer, trace] : agg.per_layer) {
        if (layer < static_cast<int>(mask.trainable.size()) &&
            mask.trainable[static_cast<std::size_t>(layer)]) {
            sum += trace;
            ++count;
        }
    }
    agg.avg_per_trainable_adapter = count > 0 ? sum / count : 0.0;
    return agg;
}

std::vector<Tensor> draw_probe_batches(const Dataset& data, std::size_t batch_size,
                                       long n_batches, std::uint64_t seed) {
    if (data.empty()) throw RunError("fisher probe has no data to draw batches from");
    if (batch_size == 0) throw ConfigError("fisher probe needs a positive batch size");
    if (n_batches < 1) throw ConfigError("fisher probe needs n_batches >= 1");

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(splitmix64(seed));
    std::shuffle(order.begin(), order.end(), rng);

    std::size_t n_full = data.size() / batch_size;
    std::vector<Tensor> batches;
    if (n_full == 0) {
        Tensor b = Tensor::zeros({data.size(), data.h});
        for (std::size_t i = 0; i < data.size(); ++i) {
            for (std::size_t j = 0; j < data.h; ++j) {
                b.at(i, j) = data.examples[order[i]].features[j];
            }
        }
        batches.push_back(std::move(b));
        return batches;
    }
    std::size_t n_used = std::min<std::size_t>(static_cast<std::size_t>(n_batches), n_full);
    for (std::size_t k = 0; k < n_used; ++k) {
        Tensor b = Tensor::zeros({batch_size, data.h});
        for (std::size_t i = 0; i < batch_size; ++i) {
            const Example& ex = data.examples[order[k * batch_size + i]];
            for (std::size_t j = 0; j < data.h; ++j) b.at(i, j) = ex.features[j];
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

FisherReport trace_probe(const AdapterStack& snapshot, const std::vector<Tensor>& batches,
                         const FreezeMask& mask, const FisherProbeConfig& cfg,
                         ParamTraceMap* per_param) {
    cfg.validate(snapshot.layer_count());
    if (batches.empty()) throw RunError("fisher probe received no batches");

    std::vector<int> scope = resolve_scope(cfg, snapshot.layer_count());
    std::vector<ParamRef> refs = probe_params(scope);
    std::size_t n_used =
        std::min<std::size_t>(static_cast<std::size_t>(cfg.n_batches), batches.size());

    std::mt19937_64 rng(splitmix64(cfg.seed));
    ParamTraceMap acc;
    for (const ParamRef& ref : refs) acc[ref] = 0.0;

    for (std::size_t bi = 0; bi < n_used; ++bi) {
        const Tensor& batch = batches[bi];
        std::size_t rows = batch.rows();
        double divisor = static_cast<double>(rows);

        if (cfg.estimator == FisherEstimator::BatchSquare) {
            Tape tape;
            ForwardNodes nodes = forward(tape, snapshot, batch);
            NodeId lp = tape.log_softmax(nodes.logits);
            std::vector<std::size_t> labels(rows);
            for (std::size_t r = 0; r < rows; ++r) {
                labels[r] = sample_class(row_probs(tape.value(lp), r), rng);
            }
            NodeId loss = tape.nll(lp, labels);
            tape.backward(loss);
            accumulate_squared_grads(tape, nodes, refs, 1.0, divisor, acc);
        } else if (cfg.estimator == FisherEstimator::Sampled) {
            for (std::size_t r = 0; r < rows; ++r) {
                Tape tape;
                ForwardNodes nodes = forward(tape, snapshot, single_row(batch, r));
                NodeId lp = tape.log_softmax(nodes.logits);
                std::size_t label = sample_class(row_probs(tape.value(lp), 0), rng);
                NodeId loss = tape.nll(lp, {label});
                tape.backward(loss);
                accumulate_squared_grads(tape, nodes, refs, 1.0, divisor, acc);
            }
        } else {
            for (std::size_t r = 0; r < rows; ++r) {
                Tensor row = single_row(batch, r);
                for (std::size_t y = 0; y < snapshot.classes(); ++y) {
                    Tape tape;
                    ForwardNodes nodes = forward(tape, snapshot, row);
                    NodeId lp = tape.log_softmax(nodes.logits);
                    double p_y = std::exp(tape.value(lp).at(0, y));
                    NodeId loss = tape.nll(lp, {y});
                    tape.backward(loss);
                    accumulate_squared_grads(tape, nodes, refs, p_y, divisor, acc);
                }
            }
        }
    }

    for (auto& [ref, trace] : acc) trace /= static_cast<double>(n_used);
    if (per_param) *per_param = acc;

    AggregateTraces agg = aggavg(acc, mask, scope);
    FisherReport report;
    report.per_layer_trace = agg.per_layer;
    report.head_trace = agg.head;
    report.avg_per_trainable_adapter = agg.avg_per_trainable_adapter;
    report.estimator = cfg.estimator;
    report.n_batches_used = static_cast<long>(n_used);
    return report;
}

Series moving_average(const Series& series, std::size_t window) {
    if (window == 0) throw std::invalid_argument("moving_average: window must be >= 1");
    Series out;
    out.reserve(series.size());
    for (std::size_t i = 0; i < series.size(); ++i) {
        std::size_t span = std::min(i + 1, window);
        double sum = 0.0;
        for (std::size_t j = i + 1 - span; j <= i; ++j) sum += series[j].second;
        out.emplace_back(series[i].first, sum / static_cast<double>(span));
    }
    return out;
}

CurveStats curve_stats(const Series& series, double alpha) {
    if (series.empty()) throw std::invalid_argument("curve_stats: empty series");
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::invalid_argument("curve_stats: alpha must lie in (0,1)");
    }

    std::size_t peak = 0;
    for (std::size_t i = 1; i < series.size(); ++i) {
        if (series[i].second > series[peak].second) peak = i;
    }
    double threshold = alpha * series[peak].second;

    std::size_t lo = peak;
    while (lo > 0 && series[lo - 1].second >= threshold) --lo;
    std::size_t hi = peak;
    while (hi + 1 < series.size() && series[hi + 1].second >= threshold) ++hi;

    long interval = series.size() > 1 ? series[1].first - series[0].first : 1;
    CurveStats stats;
    stats.peak_value = series[peak].second;
    stats.peak_step = series[peak].first;
    stats.width_steps = series[hi].first - series[lo].first + interval;
    stats.alpha = alpha;
    return stats;
}

NormalizedSeries min_max_normalize(const Series& series) {
    if (series.empty()) throw std::invalid_argument("min_max_normalize: empty series");
    double lo = series[0].second, hi = series[0].second;
    for (const auto& [step, v] : series) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    NormalizedSeries out;
    out.points.reserve(series.size());
    if (hi == lo) {
        out.constant = true;
        for (const auto& [step, v] : series) out.points.emplace_back(step, 0.0);
        return out;
    }
    for (const auto& [step, v] : series) out.points.emplace_back(step, (v - lo) / (hi - lo));
    return out;
}

}  // namespace funfreeze
