#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "funfreeze/errors.hpp"
#include "funfreeze/rngmix.hpp"
#include "funfreeze/schedule.hpp"

using namespace funfreeze;

namespace {

// Runs a scheduler over a whole training budget and collects its events.
std::vector<UnfreezeEvent> run_schedule(SchedulerSpec spec, int layers, long k, long steps,
                                        Scheduler::ProbeFn probe = nullptr) {
    Scheduler sched(spec, layers, k, steps, std::move(probe));
    std::vector<UnfreezeEvent> events;
    for (long i = 0; i < steps; ++i) {
        if (auto ev = sched.advance(i)) events.push_back(*ev);
    }
    return events;
}

std::set<int> union_of(const std::vector<UnfreezeEvent>& events) {
    std::set<int> all;
    for (const UnfreezeEvent& ev : events) all.insert(ev.layers.begin(), ev.layers.end());
    return all;
}

}  // namespace

TEST_SUITE("schedule") {

TEST_CASE("kind names round-trip") {
    for (ScheduleKind kind : {ScheduleKind::Standard, ScheduleKind::GU, ScheduleKind::ReverseGU,
                              ScheduleKind::LPFT, ScheduleKind::Random, ScheduleKind::Fixed,
                              ScheduleKind::FUN}) {
        CHECK(parse_schedule_kind(schedule_kind_name(kind)) == kind);
    }
    CHECK_THROWS_AS(parse_schedule_kind("chain"), ConfigError);
}

TEST_CASE("budget validation") {
    CHECK(validate_budget(800, 12, 40000) == BudgetCheck::Ok);
    CHECK(validate_budget(100, 12, 1000) == BudgetCheck::Error);
    CHECK(validate_budget(100, 12, 2000) == BudgetCheck::Warning);
}

TEST_CASE("GU unfreezes top-down at multiples of k") {
    std::vector<UnfreezeEvent> events =
        run_schedule({.kind = ScheduleKind::GU}, 12, 800, 40000);
    REQUIRE(events.size() == 12);
    for (int i = 0; i < 12; ++i) {
        CHECK(events[static_cast<std::size_t>(i)].step == 800L * i);
        CHECK(events[static_cast<std::size_t>(i)].layers == std::vector<int>{11 - i});
    }
    CHECK(union_of(events) == std::set<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
}

TEST_CASE("GU small enumeration") {
    std::vector<UnfreezeEvent> events = run_schedule({.kind = ScheduleKind::GU}, 3, 2, 100);
    REQUIRE(events.size() == 3);
    CHECK(events[0].step == 0);
    CHECK(events[0].layers == std::vector<int>{2});
    CHECK(events[1].step == 2);
    CHECK(events[1].layers == std::vector<int>{1});
    CHECK(events[2].step == 4);
    CHECK(events[2].layers == std::vector<int>{0});
}

TEST_CASE("Standard fires once at step 0 with every layer") {
    std::vector<UnfreezeEvent> events =
        run_schedule({.kind = ScheduleKind::Standard}, 6, 100, 1500);
    REQUIRE(events.size() == 1);
    CHECK(events[0].step == 0);
    CHECK(events[0].layers == std::vector<int>{0, 1, 2, 3, 4, 5});
}

TEST_CASE("LPFT trains the head alone for k steps, then everything") {
    std::vector<UnfreezeEvent> events =
        run_schedule({.kind = ScheduleKind::LPFT}, 6, 100, 1500);
    REQUIRE(events.size() == 1);
    CHECK(events[0].step == 100);
    CHECK(events[0].layers == std::vector<int>{0, 1, 2, 3, 4, 5});
}

TEST_CASE("ReverseGU mirrors GU layerwise") {
    std::vector<UnfreezeEvent> gu = run_schedule({.kind = ScheduleKind::GU}, 8, 50, 1000);
    std::vector<UnfreezeEvent> rev =
        run_schedule({.kind = ScheduleKind::ReverseGU}, 8, 50, 1000);
    REQUIRE(gu.size() == rev.size());
    for (std::size_t i = 0; i < gu.size(); ++i) {
        CHECK(gu[i].step == rev[i].step);
        CHECK(gu[i].layers == std::vector<int>{rev[rev.size() - 1 - i].layers[0]});
    }
}

TEST_CASE("Fixed with the top-down permutation reproduces GU exactly") {
    std::vector<int> topdown = {11, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0};
    std::vector<UnfreezeEvent> fixed = run_schedule(
        {.kind = ScheduleKind::Fixed, .permutation = topdown}, 12, 800, 40000);
    std::vector<UnfreezeEvent> gu = run_schedule({.kind = ScheduleKind::GU}, 12, 800, 40000);
    CHECK(fixed == gu);
}

TEST_CASE("Fixed follows an arbitrary permutation") {
    std::vector<int> perm = {2, 0, 3, 1};
    std::vector<UnfreezeEvent> events =
        run_schedule({.kind = ScheduleKind::Fixed, .permutation = perm}, 4, 10, 200);
    REQUIRE(events.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(events[i].layers == std::vector<int>{perm[i]});
        CHECK(events[i].step == static_cast<long>(i) * 10);
    }
}

TEST_CASE("Fixed permutation is validated") {
    CHECK_THROWS_AS(Scheduler({.kind = ScheduleKind::Fixed, .permutation = {0, 1}}, 3, 10, 100),
                    ConfigError);
    CHECK_THROWS_AS(
        Scheduler({.kind = ScheduleKind::Fixed, .permutation = {0, 1, 1}}, 3, 10, 100),
        ConfigError);
    CHECK_THROWS_AS(Scheduler({.kind = ScheduleKind::Fixed, .permutation = {}}, 3, 10, 100),
                    ConfigError);
    CHECK_THROWS_AS(
        Scheduler({.kind = ScheduleKind::Fixed, .permutation = {0, 1, 3}}, 3, 10, 100),
        ConfigError);
}

TEST_CASE("Random with a pinned seed gives a stable golden permutation") {
    SchedulerSpec spec{.kind = ScheduleKind::Random, .random_seed = 7};
    std::vector<UnfreezeEvent> first = run_schedule(spec, 4, 10, 200);
    REQUIRE(first.size() == 4);
    CHECK(union_of(first) == std::set<int>{0, 1, 2, 3});

    // Golden order for seed 7; catches silent RNG stream changes.
    std::vector<int> order;
    for (const UnfreezeEvent& ev : first) order.push_back(ev.layers[0]);
    CHECK(order == std::vector<int>{3, 2, 0, 1});

    CHECK(run_schedule(spec, 4, 10, 200) == first);
    SchedulerSpec other{.kind = ScheduleKind::Random, .random_seed = 8};
    std::vector<UnfreezeEvent> different = run_schedule(other, 4, 10, 200);
    CHECK(union_of(different) == std::set<int>{0, 1, 2, 3});
}

TEST_CASE("FUN picks the argmax trace with ties broken toward the higher index") {
    auto probe = [](const std::vector<int>& frozen) {
        std::map<int, double> traces;
        for (int l : frozen) {
            if (l == 3) traces[l] = 0.9;
            else if (l == 5) traces[l] = 0.2;
            else if (l == 7) traces[l] = 0.9;
            else traces[l] = 0.0;
        }
        return traces;
    };
    std::vector<UnfreezeEvent> events =
        run_schedule({.kind = ScheduleKind::FUN}, 8, 10, 200, probe);
    REQUIRE(!events.empty());
    CHECK(events[0].layers == std::vector<int>{7});
    REQUIRE(events[0].trace_snapshot.has_value());
    CHECK(events[0].trace_snapshot->at(7) == 0.9);
    CHECK(events[0].trace_snapshot->at(3) == 0.9);
    // Second event: 7 is gone, the tie is broken and 3 wins.
    CHECK(events[1].layers == std::vector<int>{3});

    // Every event satisfies the argmax contract against its own snapshot.
    for (const UnfreezeEvent& ev : events) {
        REQUIRE(ev.trace_snapshot.has_value());
        double chosen = ev.trace_snapshot->at(ev.layers[0]);
        for (const auto& [layer, trace] : *ev.trace_snapshot) {
            CHECK(chosen >= trace);
            if (trace == chosen) CHECK(layer <= ev.layers[0]);
        }
    }
}

TEST_CASE("FUN requires a probe") {
    CHECK_THROWS_AS(Scheduler({.kind = ScheduleKind::FUN}, 4, 10, 100), ConfigError);
}

TEST_CASE("advance is idempotent per step and rejects going backwards") {
    Scheduler sched({.kind = ScheduleKind::GU}, 4, 10, 100);
    std::optional<UnfreezeEvent> first = sched.advance(0);
    REQUIRE(first.has_value());
    CHECK(!sched.advance(0).has_value());
    CHECK(!sched.advance(1).has_value());
    CHECK_THROWS_AS(sched.advance(0), std::logic_error);
}

TEST_CASE("no events at non-multiples of k and none after kL") {
    std::vector<UnfreezeEvent> events = run_schedule({.kind = ScheduleKind::GU}, 3, 7, 200);
    REQUIRE(events.size() == 3);
    for (const UnfreezeEvent& ev : events) {
        CHECK(ev.step % 7 == 0);
        CHECK(ev.step <= 7 * 3);
    }
    long last = events.back().step;
    CHECK(last == 14);
}

TEST_CASE("every budget-ok scheduler unfreezes all layers exactly once") {
    int layers = 5;
    auto probe = [](const std::vector<int>& frozen) {
        std::map<int, double> traces;
        for (int l : frozen) traces[l] = 0.1 * l;
        return traces;
    };
    std::vector<SchedulerSpec> specs = {
        {.kind = ScheduleKind::Standard},
        {.kind = ScheduleKind::GU},
        {.kind = ScheduleKind::ReverseGU},
        {.kind = ScheduleKind::LPFT},
        {.kind = ScheduleKind::Random, .random_seed = 3},
        {.kind = ScheduleKind::Fixed, .permutation = {1, 3, 0, 4, 2}},
        {.kind = ScheduleKind::FUN},
    };
    for (const SchedulerSpec& spec : specs) {
        std::vector<UnfreezeEvent> events = run_schedule(spec, layers, 20, 500, probe);
        std::set<int> all = union_of(events);
        CHECK(all == std::set<int>{0, 1, 2, 3, 4});
        std::size_t total = 0;
        for (const UnfreezeEvent& ev : events) total += ev.layers.size();
        CHECK(total == 5);  // nothing unfrozen twice
        for (std::size_t i = 1; i < events.size(); ++i) {
            CHECK(events[i].step > events[i - 1].step);
        }
    }
}

TEST_CASE("constrained permutations start at the top") {
    std::mt19937_64 rng(splitmix64(71));
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<int> perm = sample_constrained_permutation(12, rng);
        REQUIRE(perm.size() == 12);
        CHECK(perm[0] == 11);
        CHECK((perm[1] == 10 || perm[1] == 9));
        std::set<int> seen(perm.begin(), perm.end());
        CHECK(seen.size() == 12);
    }
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> perm = sample_constrained_permutation(3, rng);
        CHECK(perm[0] == 2);
        CHECK((perm[1] == 1 || perm[1] == 0));
    }
    CHECK_THROWS_AS(sample_constrained_permutation(2, rng), std::invalid_argument);
}

TEST_CASE("second element of constrained permutations splits 50/50") {
    std::mt19937_64 rng(splitmix64(72));
    long hi = 0;
    const long draws = 10000;
    for (long i = 0; i < draws; ++i) {
        if (sample_constrained_permutation(12, rng)[1] == 10) ++hi;
    }
    // chi^2 with 1 dof at p=0.001 is 10.83; reject only a truly broken sampler.
    double expected = draws / 2.0;
    double chi2 = (hi - expected) * (hi - expected) / expected +
                  ((draws - hi) - expected) * ((draws - hi) - expected) / expected;
    CHECK(chi2 <= 10.83);
}

}  // TEST_SUITE
