#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace funfreeze {

enum class ScheduleKind { Standard, GU, ReverseGU, LPFT, Random, Fixed, FUN };

std::string schedule_kind_name(ScheduleKind kind);
ScheduleKind parse_schedule_kind(const std::string& name);

struct SchedulerSpec {
    ScheduleKind kind = ScheduleKind::GU;
    std::uint64_t random_seed = 0;   // Random only
    std::vector<int> permutation{};  // Fixed only, a permutation of 0..L-1
};

struct UnfreezeEvent {
    long step = 0;
    std::vector<int> layers;  // ascending, newly unfrozen at this step
    std::optional<std::map<int, double>> trace_snapshot;  // FUN only

    bool operator==(const UnfreezeEvent&) const = default;
};

struct ScheduleState {
    int layer_count = 0;
    long k = 0;
    long total_steps = 0;
    long step = -1;  // last advanced step; -1 before the run starts
    std::set<int> unfrozen;
    std::vector<UnfreezeEvent> events;
};

enum class BudgetCheck { Ok, Warning, Error };

// kL > N means the schedule cannot unfreeze every layer: error. kL > N/2
// leaves little time to train the full set: warning.
BudgetCheck validate_budget(long k, int layer_count, long total_steps);

// Permutation whose first element is the top layer and whose second element
// is one of the two layers directly below it, drawn by rejection sampling.
std::vector<int> sample_constrained_permutation(int layer_count, std::mt19937_64& rng);

// The unfreezing state machine. The head is trainable from step 0 and is not
// tracked here; layers move to the unfrozen set exactly once. advance(step)
// must be called for every step in order; it fires a selection when
// step % k == 0, step <= k * L, and frozen layers remain, and returns the
// event when the selection is nonempty. Calling advance twice with the same
// step returns nothing the second time.
class Scheduler {
public:
    // Traces for the given frozen layers, measured on the current model.
    // Wired to the fisher probe by the training loop; required for FUN.
    using ProbeFn = std::function<std::map<int, double>(const std::vector<int>& frozen)>;

    Scheduler(SchedulerSpec spec, int layer_count, long k, long total_steps,
              ProbeFn probe = nullptr);

    std::optional<UnfreezeEvent> advance(long step);

    const ScheduleState& state() const { return state_; }
    const SchedulerSpec& spec() const { return spec_; }
    std::vector<int> frozen_layers() const;  // ascending

private:
    std::vector<int> select_next(long step);

    SchedulerSpec spec_;
    ScheduleState state_;
    ProbeFn probe_;
    std::mt19937_64 rng_;                              // Random only
    std::optional<std::map<int, double>> last_traces_;  // FUN, for the event record
};

}  // namespace funfreeze
