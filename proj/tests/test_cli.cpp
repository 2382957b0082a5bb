#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <sstream>
#include <string>
#include <vector>

#include "funfreeze/commands.hpp"
#include "funfreeze/config.hpp"
#include "funfreeze/errors.hpp"
#include "funfreeze/rngmix.hpp"
#include "funfreeze/stats.hpp"

using namespace funfreeze;

namespace {

ExperimentConfig parse_text(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

std::string parse_error_of(const std::string& text) {
    try {
        parse_text(text);
        return "";
    } catch (const ConfigError& e) {
        return e.what();
    }
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("config round-trips through serialize and parse") {
    ExperimentConfig cfg;
    cfg.model.hidden = 24;
    cfg.model.layers = 5;
    cfg.model.identity_init = false;
    cfg.data.shift_strength = 0.65;
    cfg.data.rings = true;
    cfg.train.steps = 900;
    cfg.train.scheduler = ScheduleKind::FUN;
    cfg.train.lr = 0.0125;
    cfg.train.fisher_estimator = FisherEstimator::Exact;
    cfg.train.seed_fisher = 77;
    cfg.output.dir = "runs/elsewhere";

    ExperimentConfig back = parse_text(serialize_config(cfg));
    CHECK(back == cfg);
    CHECK(serialize_config(back) == serialize_config(cfg));

    // A fixed schedule keeps its permutation through the round trip.
    cfg.train.scheduler = ScheduleKind::Fixed;
    cfg.model.layers = 4;
    cfg.train.permutation = {3, 1, 0, 2};
    ExperimentConfig fixed_back = parse_text(serialize_config(cfg));
    CHECK(fixed_back == cfg);

    // Epoch-based budgets survive too.
    cfg.train.scheduler = ScheduleKind::GU;
    cfg.train.permutation.clear();
    cfg.train.steps = 0;
    cfg.train.epochs = 3;
    CHECK(parse_text(serialize_config(cfg)) == cfg);
}

TEST_CASE("defaults parse from an empty config") {
    ExperimentConfig cfg = parse_text("");
    CHECK(cfg == ExperimentConfig{});
    CHECK(cfg.train.steps == 1500);
    CHECK(cfg.model.hidden == 32);
}

TEST_CASE("unknown keys and sections are rejected with line numbers") {
    std::string bad_key = parse_error_of("[model]\nhidden = 32\nwidht = 3\n");
    CHECK(bad_key.find("line 3") != std::string::npos);
    CHECK(bad_key.find("widht") != std::string::npos);

    std::string bad_section = parse_error_of("[model]\nhidden = 32\n[modle]\n");
    CHECK(bad_section.find("line 3") != std::string::npos);

    std::string orphan = parse_error_of("hidden = 32\n");
    CHECK(orphan.find("line 1") != std::string::npos);

    std::string dup = parse_error_of("[train]\nsteps = 100\nsteps = 200\n");
    CHECK(dup.find("line 3") != std::string::npos);
    CHECK(dup.find("steps") != std::string::npos);

    std::string junk = parse_error_of("[train]\nsteps 100\n");
    CHECK(junk.find("line 2") != std::string::npos);

    std::string bad_value = parse_error_of("[train]\nsteps = soon\n");
    CHECK(bad_value.find("line 2") != std::string::npos);
}

TEST_CASE("steps and epochs are mutually exclusive") {
    CHECK_THROWS_AS(parse_text("[train]\nsteps = 100\nepochs = 2\n"), ConfigError);
    ExperimentConfig cfg = parse_text("[train]\nepochs = 2\n");
    CHECK(cfg.train.steps == 0);
    CHECK(cfg.train.epochs == 2);
}

TEST_CASE("fixed scheduler requires a permutation") {
    CHECK_THROWS_AS(parse_text("[train]\nscheduler = fixed\n"), ConfigError);
    ExperimentConfig cfg = parse_text("[model]\nlayers = 3\n[train]\nscheduler = fixed\npermutation = 2,0,1\n");
    CHECK(cfg.train.permutation == std::vector<int>{2, 0, 1});
}

TEST_CASE("comments and blank lines are ignored") {
    ExperimentConfig cfg = parse_text(
        "# experiment\n\n[train]\n; comment\nsteps = 50\n\nk = 10\n");
    CHECK(cfg.train.steps == 50);
    CHECK(cfg.train.k == 10);
}

TEST_CASE("resolve_steps converts epochs to steps") {
    TrainSection t;
    t.steps = 700;
    CHECK(resolve_steps(t, 2048) == 700);

    t.steps = 0;
    t.epochs = 3;
    t.batch_size = 32;
    CHECK(resolve_steps(t, 2048) == 64 * 3);
    CHECK(resolve_steps(t, 2049) == 65 * 3);  // ceil division
}

TEST_CASE("replica seeds derive from config seeds or a seed base") {
    TrainSection t;
    t.seed_data = 10;
    t.seed_init = 20;
    t.seed_scheduler = 30;
    t.seed_fisher = 40;

    ReplicaSeeds r0 = replica_seeds(t, 0, std::nullopt);
    ReplicaSeeds r1 = replica_seeds(t, 1, std::nullopt);
    CHECK(r0.data != r1.data);
    CHECK(r0.init != r1.init);
    CHECK(r0.scheduler != r1.scheduler);
    CHECK(r0.fisher != r1.fisher);
    CHECK(replica_seeds(t, 0, std::nullopt).data == r0.data);  // deterministic

    // The task seed ignores the replica index entirely.
    CHECK(task_seed(t, std::nullopt) == task_seed(t, std::nullopt));

    // A seed base overrides the config seeds.
    ReplicaSeeds base0 = replica_seeds(t, 0, 999);
    CHECK(base0.data != r0.data);
    TrainSection other = t;
    other.seed_data = 11;
    CHECK(replica_seeds(other, 0, 999).data == base0.data);
    CHECK(task_seed(other, 999) == task_seed(t, 999));
}

TEST_CASE("train_config_from mirrors the section") {
    ExperimentConfig cfg;
    cfg.train.steps = 500;
    cfg.train.k = 50;
    cfg.train.scheduler = ScheduleKind::ReverseGU;
    cfg.train.lr = 0.02;
    cfg.train.fisher_n_batches = 7;
    ReplicaSeeds seeds{1, 2, 3, 4};
    TrainConfig tc = train_config_from(cfg, 500, seeds);
    CHECK(tc.steps == 500);
    CHECK(tc.k == 50);
    CHECK(tc.scheduler.kind == ScheduleKind::ReverseGU);
    CHECK(tc.lr == 0.02);
    CHECK(tc.fisher.n_batches == 7);
    CHECK(tc.data_seed == 1);
    CHECK(tc.fisher_seed == 4);
    CHECK_NOTHROW(tc.validate(6));
}

TEST_CASE("resolve_out_dir precedence") {
    const char* saved = std::getenv("FUNFREEZE_OUT");
    std::string saved_value = saved ? saved : "";

    unsetenv("FUNFREEZE_OUT");
    CHECK(resolve_out_dir("runs/a", "") == "runs/a");
    CHECK(resolve_out_dir("runs/a", "explicit") == "explicit");

    setenv("FUNFREEZE_OUT", "/tmp/funfreeze-root", 1);
    CHECK(resolve_out_dir("runs/a", "") == "/tmp/funfreeze-root/runs/a");
    CHECK(resolve_out_dir("runs/a", "explicit") == "explicit");

    if (saved) setenv("FUNFREEZE_OUT", saved_value.c_str(), 1);
    else unsetenv("FUNFREEZE_OUT");
}

TEST_CASE("mean and sample stddev") {
    CHECK(mean({2.0, 4.0, 6.0}) == 4.0);
    CHECK(sample_stddev({5.0}) == 0.0);
    // Hand value: var of {2,4,6} with n-1 is 4.
    CHECK(sample_stddev({2.0, 4.0, 6.0}) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("average ranks share tied positions") {
    std::vector<double> ranks = average_ranks({10.0, 30.0, 20.0, 30.0});
    CHECK(ranks == std::vector<double>{1.0, 3.5, 2.0, 3.5});
}

TEST_CASE("spearman agrees with a brute-force rank correlation") {
    std::mt19937_64 rng(splitmix64(90));
    std::uniform_real_distribution<double> dist(-5.0, 5.0);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> xs, ys;
        for (int i = 0; i < 12; ++i) {
            xs.push_back(dist(rng));
            ys.push_back(dist(rng));
        }
        std::vector<double> rx = average_ranks(xs), ry = average_ranks(ys);
        double mx = mean(rx), my = mean(ry);
        double num = 0.0, dx = 0.0, dy = 0.0;
        for (std::size_t i = 0; i < rx.size(); ++i) {
            num += (rx[i] - mx) * (ry[i] - my);
            dx += (rx[i] - mx) * (rx[i] - mx);
            dy += (ry[i] - my) * (ry[i] - my);
        }
        double want = num / std::sqrt(dx * dy);
        CHECK(spearman(xs, ys) == doctest::Approx(want).epsilon(1e-12));
    }

    CHECK(spearman({1.0, 2.0, 3.0}, {10.0, 20.0, 30.0}) == doctest::Approx(1.0));
    CHECK(spearman({1.0, 2.0, 3.0}, {30.0, 20.0, 10.0}) == doctest::Approx(-1.0));
    CHECK(spearman({1.0, 1.0, 1.0}, {1.0, 2.0, 3.0}) == 0.0);
}

TEST_CASE("group_within clusters scores greedily from the top") {
    // 0.90 anchors {0.90, 0.895}; 0.80 anchors {0.80}; 0.50 anchors {0.50}.
    std::vector<int> groups = group_within({0.80, 0.90, 0.895, 0.50}, 0.01);
    CHECK(groups == std::vector<int>{1, 0, 0, 2});

    // All scores within one point collapse into a single group.
    std::vector<int> one = group_within({0.701, 0.700, 0.696, 0.705}, 0.01);
    CHECK(one == std::vector<int>{0, 0, 0, 0});

    // Chain spacing: grouping is anchored, not transitive.
    std::vector<int> chain = group_within({1.00, 0.995, 0.989}, 0.01);
    CHECK(chain == std::vector<int>{0, 0, 1});
}

}  // TEST_SUITE
