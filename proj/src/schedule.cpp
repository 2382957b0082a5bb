#include "funfreeze/schedule.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "funfreeze/errors.hpp"
#include "funfreeze/rngmix.hpp"

namespace funfreeze {

std::string schedule_kind_name(ScheduleKind kind) {
    switch (kind) {
        case ScheduleKind::Standard: return "standard";
        case ScheduleKind::GU: return "gu";
        case ScheduleKind::ReverseGU: return "reverse_gu";
        case ScheduleKind::LPFT: return "lpft";
        case ScheduleKind::Random: return "random";
        case ScheduleKind::Fixed: return "fixed";
        case ScheduleKind::FUN: return "fun";
    }
    throw std::logic_error("unknown schedule kind");
}

ScheduleKind parse_schedule_kind(const std::string& name) {
    if (name == "standard") return ScheduleKind::Standard;
    if (name == "gu") return ScheduleKind::GU;
    if (name == "reverse_gu") return ScheduleKind::ReverseGU;
    if (name == "lpft") return ScheduleKind::LPFT;
    if (name == "random") return ScheduleKind::Random;
    if (name == "fixed") return ScheduleKind::Fixed;
    if (name == "fun") return ScheduleKind::FUN;
    throw ConfigError("unknown scheduler '" + name +
                      "' (expected standard, gu, reverse_gu, lpft, random, fixed, or fun)");
}

BudgetCheck validate_budget(long k, int layer_count, long total_steps) {
    if (k < 1 || layer_count < 1 || total_steps < 1) {
        throw ConfigError("schedule budget needs positive k, layer count, and step count");
    }
    long unfreeze_span = k * layer_count;
    if (unfreeze_span > total_steps) return BudgetCheck::Error;
    if (2 * unfreeze_span > total_steps) return BudgetCheck::Warning;
    return BudgetCheck::Ok;
}

std::vector<int> sample_constrained_permutation(int layer_count, std::mt19937_64& rng) {
    if (layer_count < 3) {
        throw std::invalid_argument("constrained permutations need at least 3 layers");
    }
    std::vector<int> perm(static_cast<std::size_t>(layer_count));
    std::iota(perm.begin(), perm.end(), 0);
    for (;;) {
        std::shuffle(perm.begin(), perm.end(), rng);
        if (perm[0] != layer_count - 1) continue;
        if (perm[1] == layer_count - 2 || perm[1] == layer_count - 3) return perm;
    }
}

Scheduler::Scheduler(SchedulerSpec spec, int layer_count, long k, long total_steps, ProbeFn probe)
    : spec_(std::move(spec)), probe_(std::move(probe)), rng_(splitmix64(spec_.random_seed)) {
    if (layer_count < 1) throw ConfigError("scheduler needs at least 1 layer");
    if (k < 1) throw ConfigError("scheduler needs k >= 1");
    if (total_steps < 1) throw ConfigError("scheduler needs a positive step count");
    if (spec_.kind == ScheduleKind::Fixed) {
        std::vector<int> sorted = spec_.permutation;
        std::sort(sorted.begin(), sorted.end());
        std::vector<int> expect(static_cast<std::size_t>(layer_count));
        std::iota(expect.begin(), expect.end(), 0);
        if (sorted != expect) {
            throw ConfigError("fixed schedule needs a permutation of 0.." +
                              std::to_string(layer_count - 1));
        }
    }
    if (spec_.kind == ScheduleKind::FUN && !probe_) {
        throw ConfigError("fun scheduler needs a trace probe");
    }
    state_.layer_count = layer_count;
    state_.k = k;
    state_.total_steps = total_steps;
}

std::vector<int> Scheduler::frozen_layers() const {
    std::vector<int> frozen;
    for (int l = 0; l < state_.layer_count; ++l) {
        if (!state_.unfrozen.count(l)) frozen.push_back(l);
    }
    return frozen;
}

std::vector<int> Scheduler::select_next(long step) {
    std::vector<int> frozen = frozen_layers();
    last_traces_.reset();
    switch (spec_.kind) {
        case ScheduleKind::Standard:
            return step == 0 ? frozen : std::vector<int>{};
        case ScheduleKind::LPFT:
            return step >= state_.k ? frozen : std::vector<int>{};
        case ScheduleKind::GU:
            return {frozen.back()};
        case ScheduleKind::ReverseGU:
            return {frozen.front()};
        case ScheduleKind::Random: {
            std::uniform_int_distribution<std::size_t> pick(0, frozen.size() - 1);
            return {frozen[pick(rng_)]};
        }
        case ScheduleKind::Fixed:
            return {spec_.permutation[state_.unfrozen.size()]};
        case ScheduleKind::FUN: {
            std::map<int, double> traces = probe_(frozen);
            int best = -1;
            double best_trace = 0.0;
            for (int l : frozen) {
                auto it = traces.find(l);
                if (it == traces.end()) {
                    throw RunError("trace probe returned no value for frozen layer " +
                                   std::to_string(l));
                }
                if (best < 0 || it->second > best_trace ||
                    (it->second == best_trace && l > best)) {
                    best = l;
                    best_trace = it->second;
                }
            }
            last_traces_ = std::move(traces);
            return {best};
        }
    }
    throw std::logic_error("unknown schedule kind");
}

std::optional<UnfreezeEvent> Scheduler::advance(long step) {
    if (step == state_.step) return std::nullopt;
    if (step != state_.step + 1) {
        throw std::logic_error("scheduler advanced to step " + std::to_string(step) +
                               " from step " + std::to_string(state_.step));
    }
    state_.step = step;

    bool guard = step % state_.k == 0 &&
                 step <= state_.k * static_cast<long>(state_.layer_count);
    if (!guard || static_cast<int>(state_.unfrozen.size()) == state_.layer_count) {
        return std::nullopt;
    }

    std::vector<int> selected = select_next(step);
    if (selected.empty()) return std::nullopt;

    std::sort(selected.begin(), selected.end());
    UnfreezeEvent event;
    event.step = step;
    event.layers = selected;
    event.trace_snapshot = std::move(last_traces_);
    for (int l : selected) {
        if (state_.unfrozen.count(l)) {
            throw std::logic_error("layer " + std::to_string(l) + " selected twice");
        }
        state_.unfrozen.insert(l);
    }
    state_.events.push_back(event);
    return event;
}

}  // namespace funfreeze
