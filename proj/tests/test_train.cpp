#include <doctest.h>

#include <cmath>
#include <map>
#include <vector>

#include "funfreeze/data.hpp"
#include "funfreeze/errors.hpp"
#include "funfreeze/model.hpp"
#include "funfreeze/optimizer.hpp"
#include "funfreeze/rngmix.hpp"
#include "funfreeze/train.hpp"

using namespace funfreeze;

namespace {

// Linearly separable two-class source data, no distribution shift machinery.
Dataset separable_dataset(std::uint64_t seed, std::size_t n, std::size_t h) {
    std::mt19937_64 rng(splitmix64(seed));
    std::normal_distribution<double> noise(0.0, 0.25);
    Dataset d;
    d.h = h;
    d.classes = 2;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t label = i % 2;
        std::vector<double> f(h);
        for (std::size_t j = 0; j < h; ++j) {
            f[j] = noise(rng) + (label == 0 ? 1.0 : -1.0) * (j < h / 2 ? 1.0 : -1.0);
        }
        d.examples.push_back({f, label, "source"});
    }
    return d;
}

TrainConfig quick_config(long steps, ScheduleKind kind, long k) {
    TrainConfig cfg;
    cfg.steps = steps;
    cfg.batch_size = 8;
    cfg.k = k;
    cfg.scheduler.kind = kind;
    cfg.lr = 0.01;
    cfg.data_seed = 11;
    cfg.fisher_seed = 12;
    cfg.eval_every = steps;       // endpoints only
    cfg.fisher_log_every = steps;
    cfg.fisher.n_batches = 2;
    cfg.fisher.batch_size = 4;
    return cfg;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("lr schedules") {
    LrSchedule linear{LrKind::Linear, 0.01, 100};
    CHECK(linear.at(0) == 0.01);
    CHECK(linear.at(50) == doctest::Approx(0.005).epsilon(1e-12));
    CHECK(linear.at(100) == 0.0);

    LrSchedule constant{LrKind::Constant, 0.01, 100};
    CHECK(constant.at(0) == 0.01);
    CHECK(constant.at(99) == 0.01);
}

TEST_CASE("clip_global_norm") {
    SUBCASE("below the cap is untouched") {
        std::vector<Tensor> grads = {Tensor({2}, {0.3, 0.4})};  // norm 0.5
        std::vector<Tensor> before = grads;
        double norm = clip_global_norm(grads, 1.0);
        CHECK(norm == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(grads[0] == before[0]);
    }
    SUBCASE("above the cap scales to max_norm") {
        std::vector<Tensor> grads = {Tensor({2}, {0.0, 3.0}), Tensor({1}, {4.0})};  // norm 5
        double pre = clip_global_norm(grads, 1.0);
        CHECK(pre == doctest::Approx(5.0).epsilon(1e-12));
        double post_sq = 0.0;
        for (const Tensor& g : grads)
            for (double v : g.elems) post_sq += v * v;
        CHECK(std::sqrt(post_sq) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(grads[0].elems[1] == doctest::Approx(0.6).epsilon(1e-12));
        CHECK(grads[1].elems[0] == doctest::Approx(0.8).epsilon(1e-12));
    }
    SUBCASE("direction is preserved") {
        std::vector<Tensor> grads = {Tensor({3}, {2.0, -1.0, 4.0})};
        std::vector<Tensor> before = grads;
        clip_global_norm(grads, 0.5);
        std::size_t argmax_before = 0, argmax_after = 0;
        for (std::size_t i = 1; i < 3; ++i) {
            if (std::abs(before[0].elems[i]) > std::abs(before[0].elems[argmax_before]))
                argmax_before = i;
            if (std::abs(grads[0].elems[i]) > std::abs(grads[0].elems[argmax_after]))
                argmax_after = i;
        }
        CHECK(argmax_before == argmax_after);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(grads[0].elems[i] * before[0].elems[i] >= 0.0);
        }
    }
}

TEST_CASE("adamw single step matches hand arithmetic") {
    AdapterStack stack = init_stack({.hidden = 4, .layers = 1, .classes = 2,
                                     .reduction_factor = 2, .identity_init = true, .seed = 70});
    ParamRef ref{ParamField::HeadBias, -1};
    Tensor before = param_tensor(stack, ref);
    Tensor grad = Tensor::zeros({2});
    grad.elems = {0.5, -1.0};

    double lr = 0.01, wd = 0.1, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    AdamW opt({beta1, beta2, eps, wd});
    opt.step(stack, {ref}, {grad}, lr);

    const Tensor& after = param_tensor(stack, ref);
    for (std::size_t i = 0; i < 2; ++i) {
        double p = before.elems[i] * (1.0 - lr * wd);
        double m = (1.0 - beta1) * grad.elems[i];
        double v = (1.0 - beta2) * grad.elems[i] * grad.elems[i];
        double mhat = m / (1.0 - beta1);
        double vhat = v / (1.0 - beta2);
        p -= lr * mhat / (std::sqrt(vhat) + eps);
        CHECK(std::abs(after.elems[i] - p) <= 1e-12);
    }

    const AdamW::MomentSlot* slot = opt.slot(ref);
    REQUIRE(slot != nullptr);
    CHECK(slot->t == 1);
    CHECK(opt.slot({ParamField::HeadWeight, -1}) == nullptr);
}

TEST_CASE("adamw zero gradient only decays the weights") {
    AdapterStack stack = init_stack({.hidden = 4, .layers = 1, .classes = 2,
                                     .reduction_factor = 2, .identity_init = false, .seed = 71});
    ParamRef ref{ParamField::HeadWeight, -1};
    Tensor before = param_tensor(stack, ref);
    double lr = 0.01, wd = 0.5;
    AdamW opt({0.9, 0.999, 1e-8, wd});
    opt.step(stack, {ref}, {Tensor::zeros(before.shape)}, lr);
    const Tensor& after = param_tensor(stack, ref);
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(std::abs(after.elems[i] - before.elems[i] * (1.0 - lr * wd)) <= 1e-15);
    }

    // Without decay a zero gradient is a fixed point.
    AdapterStack stack2 = init_stack({.hidden = 4, .layers = 1, .classes = 2,
                                      .reduction_factor = 2, .identity_init = false, .seed = 71});
    Tensor before2 = param_tensor(stack2, ref);
    AdamW opt2({0.9, 0.999, 1e-8, 0.0});
    opt2.step(stack2, {ref}, {Tensor::zeros(before2.shape)}, lr);
    CHECK(param_tensor(stack2, ref) == before2);
}

TEST_CASE("evaluate") {
    AdapterStack stack = init_stack({.hidden = 4, .layers = 1, .classes = 3,
                                     .reduction_factor = 2, .identity_init = true, .seed = 72});

    SUBCASE("per-example argmax oracle") {
        Dataset d = separable_dataset(720, 30, 4);
        d.classes = 3;  // keep labels 0/1, widen the head comparison
        double acc = evaluate(stack, d);
        Tensor logits = forward_logits(stack, d.features_matrix(0, d.size()));
        std::size_t hits = 0;
        for (std::size_t i = 0; i < d.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < 3; ++c)
                if (logits.at(i, c) > logits.at(i, best)) best = c;
            hits += best == d.examples[i].label ? 1 : 0;
        }
        CHECK(acc == static_cast<double>(hits) / 30.0);
    }

    SUBCASE("ties resolve to the lowest class") {
        // Zero head weight and bias: all logits equal, argmax must pick class 0.
        for (double& v : stack.head_weight.elems) v = 0.0;
        for (double& v : stack.head_bias.elems) v = 0.0;
        Dataset d;
        d.h = 4;
        d.classes = 3;
        d.examples.push_back({{1.0, 2.0, 3.0, 4.0}, 0, "source"});
        d.examples.push_back({{4.0, 3.0, 2.0, 1.0}, 1, "source"});
        CHECK(evaluate(stack, d) == 0.5);
    }
}

TEST_CASE("standard fine-tuning drives a separable task to low loss") {
    AdapterStack stack = init_stack({.hidden = 8, .layers = 2, .classes = 2,
                                     .reduction_factor = 4, .identity_init = true, .seed = 73});
    Dataset train_data = separable_dataset(730, 256, 8);
    Dataset val_data = separable_dataset(731, 64, 8);
    TrainConfig cfg = quick_config(500, ScheduleKind::Standard, 100);
    RunMetrics metrics = train(stack, train_data, val_data, cfg);

    REQUIRE(metrics.train_loss.size() == 500);
    double tail = 0.0;
    for (std::size_t i = 480; i < 500; ++i) tail += metrics.train_loss[i].second;
    CHECK(tail / 20.0 < 0.1);

    // Final eval at step N present and high.
    REQUIRE(!metrics.evals.empty());
    const EvalPoint& last = metrics.evals.back();
    CHECK(last.step == 500);
    CHECK(last.split == "val");
    CHECK(last.value > 0.9);

    REQUIRE(metrics.events.size() == 1);
    CHECK(metrics.events[0].step == 0);
}

TEST_CASE("training rejects an impossible unfreeze budget") {
    TrainConfig cfg = quick_config(100, ScheduleKind::GU, 100);
    CHECK_THROWS_AS(cfg.validate(6), ConfigError);  // kL = 600 > 100
    try {
        cfg.validate(6);
    } catch (const ConfigError& e) {
        std::string msg = e.what();
        CHECK(msg.find("k=100") != std::string::npos);
        CHECK(msg.find("100 steps") != std::string::npos);
    }
}

TEST_CASE("tight budget records a warning") {
    AdapterStack stack = init_stack({.hidden = 8, .layers = 2, .classes = 2,
                                     .reduction_factor = 4, .identity_init = true, .seed = 74});
    Dataset train_data = separable_dataset(740, 64, 8);
    Dataset val_data = separable_dataset(741, 32, 8);
    TrainConfig cfg = quick_config(150, ScheduleKind::GU, 50);  // kL = 100 > 75
    RunMetrics metrics = train(stack, train_data, val_data, cfg);
    REQUIRE(!metrics.warnings.empty());
    CHECK(metrics.warnings[0].find("k*L > N/2") != std::string::npos);
}

TEST_CASE("reruns are bitwise identical") {
    auto one_run = [] {
        AdapterStack stack = init_stack({.hidden = 8, .layers = 3, .classes = 2,
                                         .reduction_factor = 4, .identity_init = true, .seed = 75});
        Dataset train_data = separable_dataset(750, 128, 8);
        Dataset val_data = separable_dataset(751, 32, 8);
        TrainConfig cfg = quick_config(90, ScheduleKind::GU, 30);
        cfg.eval_every = 30;
        cfg.fisher_log_every = 30;
        RunMetrics metrics = train(stack, train_data, val_data, cfg);
        return std::make_pair(metrics, stack);
    };
    auto [m1, s1] = one_run();
    auto [m2, s2] = one_run();
    CHECK(m1 == m2);
    for (const ParamRef& ref : all_params(s1)) {
        CHECK(param_tensor(s1, ref) == param_tensor(s2, ref));
    }
}

TEST_CASE("frozen parameters stay bitwise frozen and moments start at zero") {
    AdapterStack stack = init_stack({.hidden = 8, .layers = 3, .classes = 2,
                                     .reduction_factor = 4, .identity_init = true, .seed = 76});
    Dataset train_data = separable_dataset(760, 128, 8);
    Dataset val_data = separable_dataset(761, 32, 8);
    TrainConfig cfg = quick_config(120, ScheduleKind::GU, 40);

    // Snapshot of every tensor, refreshed whenever a layer unfreezes.
    std::map<std::string, Tensor> frozen_snapshot;
    AdapterStack initial = stack;
    for (const ParamRef& ref : all_params(initial)) {
        frozen_snapshot[ref.name()] = param_tensor(initial, ref);
    }

    std::vector<bool> was_trainable(3, false);

    TrainHooks hooks;
    hooks.after_step = [&](long step, const AdapterStack& live, const FreezeMask& mask) {
        (void)step;
        for (int l = 0; l < 3; ++l) {
            const std::size_t lu = static_cast<std::size_t>(l);
            // Monotone: a trainable layer never refreezes.
            if (was_trainable[lu]) CHECK(mask.trainable[lu]);
            was_trainable[lu] = mask.trainable[lu];
            for (ParamField f : {ParamField::DownWeight, ParamField::DownBias,
                                 ParamField::UpWeight, ParamField::UpBias}) {
                ParamRef ref{f, l};
                if (!mask.trainable[lu]) {
                    CHECK(param_tensor(live, ref) == frozen_snapshot.at(ref.name()));
                } else {
                    frozen_snapshot[ref.name()] = param_tensor(live, ref);
                }
            }
        }
        // Base and norm tensors never move, trainable or not.
        for (int l = 0; l < 3; ++l) {
            for (ParamField f : {ParamField::BaseWeight, ParamField::BaseBias,
                                 ParamField::NormScale, ParamField::NormShift}) {
                ParamRef ref{f, l};
                CHECK(param_tensor(live, ref) == param_tensor(initial, ref));
            }
        }
    };

    train(stack, train_data, val_data, cfg, &hooks);
    CHECK(was_trainable == std::vector<bool>{true, true, true});
}

TEST_CASE("LPFT leaves adapters untouched for the first k steps") {
    AdapterStack stack = init_stack({.hidden = 8, .layers = 2, .classes = 2,
                                     .reduction_factor = 4, .identity_init = true, .seed = 77});
    AdapterStack initial = stack;
    Dataset train_data = separable_dataset(770, 64, 8);
    Dataset val_data = separable_dataset(771, 32, 8);
    TrainConfig cfg = quick_config(100, ScheduleKind::LPFT, 40);

    TrainHooks hooks;
    hooks.after_step = [&](long step, const AdapterStack& live, const FreezeMask& mask) {
        if (step < 40) {
            CHECK(mask.trainable_layer_count() == 0);
            for (int l = 0; l < 2; ++l) {
                CHECK(param_tensor(live, {ParamField::UpWeight, l}) ==
                      param_tensor(initial, {ParamField::UpWeight, l}));
            }
            // The head is training the whole time.
            if (step > 0) {
                CHECK(live.head_weight != initial.head_weight);
            }
        } else {
            CHECK(mask.trainable_layer_count() == 2);
        }
    };
    RunMetrics metrics = train(stack, train_data, val_data, cfg, &hooks);
    REQUIRE(metrics.events.size() == 1);
    CHECK(metrics.events[0].step == 40);
}

TEST_CASE("eval and fisher logs land on their intervals") {
    AdapterStack stack = init_stack({.hidden = 8, .layers = 2, .classes = 2,
                                     .reduction_factor = 4, .identity_init = true, .seed = 78});
    Dataset train_data = separable_dataset(780, 64, 8);
    Dataset val_data = separable_dataset(781, 32, 8);
    TrainConfig cfg = quick_config(100, ScheduleKind::GU, 30);
    cfg.eval_every = 25;
    cfg.fisher_log_every = 50;
    RunMetrics metrics = train(stack, train_data, val_data, cfg);

    std::vector<long> eval_steps;
    for (const EvalPoint& p : metrics.evals) eval_steps.push_back(p.step);
    CHECK(eval_steps == std::vector<long>{0, 25, 50, 75, 100});

    std::vector<long> fisher_steps;
    for (const FisherReport& r : metrics.fisher) fisher_steps.push_back(r.step);
    CHECK(fisher_steps == std::vector<long>{0, 50});
    for (const FisherReport& r : metrics.fisher) {
        CHECK(r.n_batches_used >= 1);
    }
}

TEST_CASE("FUN training probes frozen layers and records snapshots") {
    AdapterStack stack = init_stack({.hidden = 8, .layers = 3, .classes = 2,
                                     .reduction_factor = 4, .identity_init = true, .seed = 79});
    Dataset train_data = separable_dataset(790, 128, 8);
    Dataset val_data = separable_dataset(791, 32, 8);
    TrainConfig cfg = quick_config(120, ScheduleKind::FUN, 40);
    RunMetrics metrics = train(stack, train_data, val_data, cfg);

    REQUIRE(metrics.events.size() == 3);
    std::set<int> all;
    for (const UnfreezeEvent& ev : metrics.events) {
        REQUIRE(ev.layers.size() == 1);
        REQUIRE(ev.trace_snapshot.has_value());
        // Snapshot covers exactly the layers frozen at selection time.
        CHECK(ev.trace_snapshot->count(ev.layers[0]) == 1);
        double chosen = ev.trace_snapshot->at(ev.layers[0]);
        for (const auto& [layer, trace] : *ev.trace_snapshot) {
            CHECK(all.count(layer) == 0);
            CHECK(chosen >= trace);
        }
        all.insert(ev.layers[0]);
    }
    CHECK(all.size() == 3);
}

TEST_CASE("non-finite loss raises a run error naming the step") {
    AdapterStack stack = init_stack({.hidden = 8, .layers = 1, .classes = 2,
                                     .reduction_factor = 4, .identity_init = true, .seed = 80});
    Dataset train_data = separable_dataset(800, 64, 8);
    // Poison the head so logits blow past the double range.
    for (double& v : stack.head_weight.elems) v = 1e308;
    Dataset val_data = separable_dataset(801, 16, 8);
    TrainConfig cfg = quick_config(10, ScheduleKind::Standard, 5);
    try {
        train(stack, train_data, val_data, cfg);
        FAIL("expected a run error");
    } catch (const RunError& e) {
        std::string msg = e.what();
        CHECK(msg.find("step") != std::string::npos);
    }
}

}  // TEST_SUITE
