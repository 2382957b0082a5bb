#include "funfreeze/commands.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "funfreeze/checkpoint.hpp"
#include "funfreeze/config.hpp"
#include "funfreeze/errors.hpp"
#include "funfreeze/rngmix.hpp"
#include "funfreeze/stats.hpp"

namespace fs = std::filesystem;

namespace funfreeze {

namespace {

using nlohmann::json;

// Sub-stream tags for per-replica derived seeds.
enum : std::uint64_t {
    kAuxDataStream = 0xAA,
    kHeadStream = 0x4EAD,
    kPermStream = 0x5EED,
    kProbeCmdStream = 0xBA7,
};

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::ofstream open_out(const fs::path& path) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RunError("cannot open for writing: " + path.string());
    return out;
}

std::string join_perm(const std::vector<int>& perm) {
    std::ostringstream os;
    for (std::size_t i = 0; i < perm.size(); ++i) {
        if (i) os << "-";
        os << perm[i];
    }
    return os.str();
}

void write_metrics_csv(const fs::path& path, const RunMetrics& metrics) {
    std::ofstream out = open_out(path);
    out << "# funfreeze-metrics v1\n";
    out << "step,kind,split,value\n";
    for (const auto& [step, loss] : metrics.train_loss) {
        out << step << ",train_loss,train," << fmt_double(loss) << "\n";
    }
    for (const EvalPoint& e : metrics.evals) {
        out << e.step << ",eval," << e.split << "," << fmt_double(e.value) << "\n";
    }
    for (const FisherReport& r : metrics.fisher) {
        out << r.step << ",fisher_avg,train," << fmt_double(r.avg_per_trainable_adapter) << "\n";
    }
}

void write_fisher_csv(const fs::path& path, const std::vector<FisherReport>& reports) {
    std::ofstream out = open_out(path);
    out << "# funfreeze-fisher v1\n";
    out << "step,layer,trace,estimator,n_batches\n";
    for (const FisherReport& r : reports) {
        std::string suffix = "," + estimator_name(r.estimator) + "," +
                             std::to_string(r.n_batches_used) + "\n";
        for (const auto& [layer, trace] : r.per_layer_trace) {
            out << r.step << "," << layer << "," << fmt_double(trace) << suffix;
        }
        out << r.step << ",head," << fmt_double(r.head_trace) << suffix;
        out << r.step << ",avg," << fmt_double(r.avg_per_trainable_adapter) << suffix;
    }
}

void write_schedule_jsonl(const fs::path& path, const std::vector<UnfreezeEvent>& events,
                          const std::string& scheduler_name) {
    std::ofstream out = open_out(path);
    for (const UnfreezeEvent& e : events) {
        json rec{{"step", e.step}, {"layers", e.layers}, {"scheduler", scheduler_name}};
        if (e.trace_snapshot) {
            json snap = json::object();
            for (const auto& [layer, trace] : *e.trace_snapshot) {
                snap[std::to_string(layer)] = trace;
            }
            rec["trace_snapshot"] = snap;
        }
        out << rec.dump() << "\n";
    }
}

void write_accuracy_csv(const fs::path& path,
                        const std::vector<std::pair<std::string, double>>& accs) {
    std::ofstream out = open_out(path);
    out << "# funfreeze-accuracy v1\n";
    out << "domain,accuracy\n";
    for (const auto& [domain, acc] : accs) out << domain << "," << fmt_double(acc) << "\n";
}

ShiftBenchmark load_benchmark(const std::string& dir, const ExperimentConfig& cfg) {
    ShiftBenchmark bench;
    bench.train = load_dataset(dir + "/train.jsonl");
    bench.val = load_dataset(dir + "/val.jsonl");
    bench.source_test = load_dataset(dir + "/source_test.jsonl");
    for (std::size_t d = 1;; ++d) {
        std::string path = dir + "/shift" + std::to_string(d) + ".jsonl";
        if (!fs::exists(path)) break;
        bench.shifted_tests.push_back(load_dataset(path));
    }
    if (bench.shifted_tests.empty()) {
        throw ConfigError("dataset dir " + dir + " has no shift<N>.jsonl test sets");
    }
    for (const Dataset* d : {&bench.train, &bench.val, &bench.source_test}) {
        if (d->h != cfg.model.hidden || d->classes != cfg.model.classes) {
            throw ConfigError("dataset dir " + dir + " does not match the model (" +
                              std::to_string(d->h) + "-wide, " + std::to_string(d->classes) +
                              " classes vs configured " + std::to_string(cfg.model.hidden) +
                              ", " + std::to_string(cfg.model.classes) + ")");
        }
    }
    return bench;
}

void save_benchmark(const fs::path& dir, const ShiftBenchmark& bench) {
    fs::create_directories(dir);
    save_dataset((dir / "train.jsonl").string(), bench.train);
    save_dataset((dir / "val.jsonl").string(), bench.val);
    save_dataset((dir / "source_test.jsonl").string(), bench.source_test);
    for (std::size_t d = 0; d < bench.shifted_tests.size(); ++d) {
        save_dataset((dir / ("shift" + std::to_string(d + 1) + ".jsonl")).string(),
                     bench.shifted_tests[d]);
    }
}

ShiftBenchmark obtain_benchmark(const ExperimentConfig& cfg, std::uint64_t tseed,
                                const fs::path& out_dir) {
    if (!cfg.data.dataset_dir.empty()) return load_benchmark(cfg.data.dataset_dir, cfg);
    ShiftBenchmark bench = generate(task_spec_from(cfg, tseed));
    save_benchmark(out_dir / "data", bench);
    return bench;
}

struct ReplicaResult {
    std::vector<std::pair<std::string, double>> accuracies;  // source first, then shifts
    double source_acc = 0.0;
    double shifted_mean = 0.0;
    double lowest_acc = 0.0;
    RunMetrics metrics;
};

ReplicaResult run_replica(const ExperimentConfig& cfg, const ShiftBenchmark& bench,
                          const TrainConfig& tc, const ReplicaSeeds& seeds,
                          const fs::path& dir) {
    AdapterStack stack = init_stack({cfg.model.hidden, cfg.model.layers, cfg.model.classes,
                                     cfg.model.reduction_factor, cfg.model.identity_init,
                                     seeds.init});
    auto [aux_x, aux_y] = aux_pretrain_batches(cfg.model.hidden, cfg.model.classes,
                                               cfg.train.batch_size, 16,
                                               mix_seed(seeds.init, kAuxDataStream));
    pretrain_base(stack, aux_x, aux_y, cfg.model.pretrain_steps, cfg.model.pretrain_lr,
                  mix_seed(seeds.init, kHeadStream));

    ReplicaResult result;
    result.metrics = train(stack, bench.train, bench.val, tc);

    result.source_acc = evaluate(stack, bench.source_test);
    result.accuracies.emplace_back("source", result.source_acc);
    double shifted_sum = 0.0;
    result.lowest_acc = 1.0;
    for (const Dataset& test : bench.shifted_tests) {
        double acc = evaluate(stack, test);
        result.accuracies.emplace_back(test.examples.front().domain, acc);
        shifted_sum += acc;
        result.lowest_acc = std::min(result.lowest_acc, acc);
    }
    result.shifted_mean = shifted_sum / static_cast<double>(bench.shifted_tests.size());

    if (!dir.empty()) {
        write_metrics_csv(dir / "metrics.csv", result.metrics);
        write_fisher_csv(dir / "fisher.csv", result.metrics.fisher);
        write_schedule_jsonl(dir / "schedule.jsonl", result.metrics.events,
                             schedule_kind_name(tc.scheduler.kind));
        write_accuracy_csv(dir / "accuracy.csv", result.accuracies);
        save_checkpoint((dir / "checkpoint.txt").string(), stack);
    }
    return result;
}

void print_dry_run(const ExperimentConfig& cfg, long steps) {
    const TrainSection& t = cfg.train;
    std::cout << "dry run: scheduler=" << schedule_kind_name(t.scheduler) << " k=" << t.k
              << " steps=" << steps << " layers=" << cfg.model.layers << "\n";
    if (t.scheduler == ScheduleKind::FUN) {
        std::cout << "  fun selects by Fisher traces measured during training;"
                  << " selections happen at steps 0";
        for (long s = t.k; s <= t.k * cfg.model.layers && s < steps; s += t.k) {
            std::cout << "," << s;
        }
        std::cout << " but the chosen layers depend on the data\n";
        return;
    }
    SchedulerSpec spec{t.scheduler, 0, t.permutation};
    ReplicaSeeds seeds = replica_seeds(t, 0, std::nullopt);
    spec.random_seed = seeds.scheduler;
    Scheduler sched(spec, cfg.model.layers, t.k, steps);
    for (long i = 0; i < steps; ++i) {
        if (std::optional<UnfreezeEvent> event = sched.advance(i)) {
            std::cout << "  step " << event->step << ": unfreeze layer"
                      << (event->layers.size() > 1 ? "s" : "");
            for (int l : event->layers) std::cout << " " << l;
            std::cout << "\n";
        }
    }
}

Series fisher_avg_series(const RunMetrics& metrics) {
    Series s;
    for (const FisherReport& r : metrics.fisher) {
        s.emplace_back(r.step, r.avg_per_trainable_adapter);
    }
    return s;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    CsvTable table;
    std::string line;
    long line_no = 0;
    auto split = [](const std::string& s) {
        std::vector<std::string> fields;
        std::string field;
        std::istringstream is(s);
        while (std::getline(is, field, ',')) fields.push_back(field);
        return fields;
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        if (table.header.empty()) {
            table.header = split(line);
            continue;
        }
        std::vector<std::string> fields = split(line);
        if (fields.size() != table.header.size()) {
            throw ParseError(path.string() + " line " + std::to_string(line_no) + ": expected " +
                             std::to_string(table.header.size()) + " fields, found " +
                             std::to_string(fields.size()));
        }
        table.rows.push_back(std::move(fields));
    }
    return table;
}

}  // namespace

std::string resolve_out_dir(const std::string& config_dir_value,
                            const std::string& out_override) {
    if (!out_override.empty()) return out_override;
    const char* env = std::getenv("FUNFREEZE_OUT");
    if (env && *env) return std::string(env) + "/" + config_dir_value;
    return config_dir_value;
}

int cmd_train(const TrainOptions& opts) {
    if (opts.replicas < 1) throw ConfigError("--replicas must be >= 1");
    ExperimentConfig cfg = parse_config_file(opts.config_path);
    if (!opts.estimator_override.empty()) {
        cfg.train.fisher_estimator = parse_estimator(opts.estimator_override);
    }

    std::size_t n_train = cfg.data.dataset_dir.empty()
                              ? cfg.data.n_train
                              : load_dataset(cfg.data.dataset_dir + "/train.jsonl").size();
    long steps = resolve_steps(cfg.train, n_train);
    ReplicaSeeds probe_seeds = replica_seeds(cfg.train, 0, opts.seed_base);
    train_config_from(cfg, steps, probe_seeds).validate(cfg.model.layers);

    if (opts.dry_run) {
        print_dry_run(cfg, steps);
        return 0;
    }

    fs::path out_dir = resolve_out_dir(cfg.output.dir, opts.out_override);
    fs::create_directories(out_dir);
    {
        std::ofstream out = open_out(out_dir / "resolved_config.ini");
        out << serialize_config(cfg);
    }

    ShiftBenchmark bench = obtain_benchmark(cfg, task_seed(cfg.train, opts.seed_base), out_dir);

    std::vector<double> source, shifted, lowest;
    for (int r = 0; r < opts.replicas; ++r) {
        ReplicaSeeds seeds = replica_seeds(cfg.train, r, opts.seed_base);
        TrainConfig tc = train_config_from(cfg, steps, seeds);
        fs::path dir = out_dir / ("replica" + std::to_string(r));
        ReplicaResult result = run_replica(cfg, bench, tc, seeds, dir);
        for (const std::string& w : result.metrics.warnings) {
            std::cerr << "warning: " << w << "\n";
        }
        source.push_back(result.source_acc);
        shifted.push_back(result.shifted_mean);
        lowest.push_back(result.lowest_acc);
        std::cout << "replica " << r << ": source " << result.source_acc << ", shifted mean "
                  << result.shifted_mean << ", lowest " << result.lowest_acc << "\n";
    }

    {
        std::ofstream out = open_out(out_dir / "summary.csv");
        out << "# funfreeze-summary v1\n";
        out << "scheduler,replicas,source_mean,source_std,shifted_mean,shifted_std,"
               "lowest_mean,lowest_std\n";
        out << schedule_kind_name(cfg.train.scheduler) << "," << opts.replicas << ","
            << fmt_double(mean(source)) << "," << fmt_double(sample_stddev(source)) << ","
            << fmt_double(mean(shifted)) << "," << fmt_double(sample_stddev(shifted)) << ","
            << fmt_double(mean(lowest)) << "," << fmt_double(sample_stddev(lowest)) << "\n";
    }
    std::cout << "scheduler " << schedule_kind_name(cfg.train.scheduler) << ": source "
              << mean(source) << " +/- " << sample_stddev(source) << ", shifted "
              << mean(shifted) << " +/- " << sample_stddev(shifted) << ", lowest "
              << mean(lowest) << " +/- " << sample_stddev(lowest) << " over " << opts.replicas
              << " replicas\n";
    std::cout << "wrote " << (out_dir / "summary.csv").string() << "\n";
    return 0;
}

int cmd_sweep_schedules(const SweepOptions& opts) {
    if (opts.n_schedules < 1) throw ConfigError("--n-schedules must be >= 1");
    ExperimentConfig cfg = parse_config_file(opts.config_path);
    if (cfg.model.layers < 3) throw ConfigError("schedule sweep needs at least 3 layers");

    std::size_t n_train = cfg.data.dataset_dir.empty()
                              ? cfg.data.n_train
                              : load_dataset(cfg.data.dataset_dir + "/train.jsonl").size();
    long steps = resolve_steps(cfg.train, n_train);
    ReplicaSeeds seeds = replica_seeds(cfg.train, 0, opts.seed_base);

    std::uint64_t sched_root =
        opts.seed_base ? mix_seed(*opts.seed_base, 3) : cfg.train.seed_scheduler;
    std::mt19937_64 perm_rng(splitmix64(mix_seed(sched_root, kPermStream)));

    std::vector<std::pair<std::string, std::vector<int>>> schedules;
    for (int s = 0; s < opts.n_schedules; ++s) {
        schedules.emplace_back(std::to_string(s),
                               sample_constrained_permutation(cfg.model.layers, perm_rng));
    }
    std::vector<int> topdown(static_cast<std::size_t>(cfg.model.layers));
    for (int l = 0; l < cfg.model.layers; ++l) {
        topdown[static_cast<std::size_t>(l)] = cfg.model.layers - 1 - l;
    }
    schedules.emplace_back("topdown", topdown);

    {
        TrainConfig probe = train_config_from(cfg, steps, seeds);
        probe.scheduler.kind = ScheduleKind::Fixed;
        probe.scheduler.permutation = topdown;
        probe.validate(cfg.model.layers);
    }

    fs::path out_dir = resolve_out_dir(cfg.output.dir, opts.out_override);
    fs::create_directories(out_dir);
    {
        std::ofstream out = open_out(out_dir / "resolved_config.ini");
        out << serialize_config(cfg);
    }
    ShiftBenchmark bench = obtain_benchmark(cfg, task_seed(cfg.train, opts.seed_base), out_dir);

    struct Row {
        std::string id;
        std::vector<int> perm;
        CurveStats stats;
        double source_acc;
        double shifted_acc;
    };
    std::vector<Row> rows;
    for (const auto& [id, perm] : schedules) {
        TrainConfig tc = train_config_from(cfg, steps, seeds);
        tc.scheduler.kind = ScheduleKind::Fixed;
        tc.scheduler.permutation = perm;
        ReplicaResult result =
            run_replica(cfg, bench, tc, seeds, out_dir / ("schedule_" + id));
        Series series = fisher_avg_series(result.metrics);
        rows.push_back({id, perm, curve_stats(series), result.source_acc, result.shifted_mean});
        std::cout << "schedule " << id << " [" << join_perm(perm) << "]: shifted "
                  << result.shifted_mean << ", peak " << rows.back().stats.peak_value
                  << ", width " << rows.back().stats.width_steps << "\n";
    }

    std::vector<double> shifted_accs, peaks, widths;
    for (const Row& r : rows) {
        shifted_accs.push_back(r.shifted_acc);
        peaks.push_back(r.stats.peak_value);
        widths.push_back(static_cast<double>(r.stats.width_steps));
    }
    std::vector<int> groups = group_within(shifted_accs, 0.01);

    {
        std::ofstream out = open_out(out_dir / "sweep.csv");
        out << "# funfreeze-sweep v1\n";
        out << "schedule_id,permutation,peak_value,peak_step,width_steps,alpha,"
               "source_acc,shifted_acc,group\n";
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const Row& r = rows[i];
            out << r.id << "," << join_perm(r.perm) << "," << fmt_double(r.stats.peak_value)
                << "," << r.stats.peak_step << "," << r.stats.width_steps << ","
                << fmt_double(r.stats.alpha) << "," << fmt_double(r.source_acc) << ","
                << fmt_double(r.shifted_acc) << "," << groups[i] << "\n";
        }
    }
    {
        std::ofstream out = open_out(out_dir / "correlation.csv");
        out << "# funfreeze-correlation v1\n";
        out << "metric,spearman_vs_shifted_acc\n";
        out << "peak_value," << fmt_double(spearman(peaks, shifted_accs)) << "\n";
        out << "width_steps," << fmt_double(spearman(widths, shifted_accs)) << "\n";
    }
    std::cout << "wrote " << (out_dir / "sweep.csv").string() << " and "
              << (out_dir / "correlation.csv").string() << "\n";
    return 0;
}

int cmd_fisher_probe(const ProbeOptions& opts) {
    AdapterStack stack = load_checkpoint(opts.checkpoint_path);
    Dataset data = load_dataset(opts.data_path);
    if (data.h != stack.hidden()) {
        throw ConfigError("dataset width " + std::to_string(data.h) +
                          " does not match the checkpoint's hidden size " +
                          std::to_string(stack.hidden()));
    }

    FisherProbeConfig pc;
    pc.n_batches = opts.n_batches;
    pc.batch_size = opts.batch_size;
    pc.estimator = parse_estimator(opts.estimator);
    pc.seed = opts.seed;
    std::vector<Tensor> batches = draw_probe_batches(
        data, pc.batch_size, pc.n_batches, mix_seed(opts.seed, kProbeCmdStream));
    FreezeMask mask = FreezeMask::all_trainable(stack.layer_count());
    FisherReport report = trace_probe(stack, batches, mask, pc);

    fs::path out_path;
    if (!opts.out_override.empty()) {
        out_path = opts.out_override;
    } else {
        const char* env = std::getenv("FUNFREEZE_OUT");
        out_path = env && *env ? fs::path(env) / "fisher_probe.csv" : fs::path("fisher_probe.csv");
    }
    write_fisher_csv(out_path, {report});

    std::cout << "trace of Fisher (" << estimator_name(report.estimator) << ", "
              << report.n_batches_used << " batches)\n";
    for (const auto& [layer, trace] : report.per_layer_trace) {
        std::cout << "  layer " << layer << ": " << trace << "\n";
    }
    std::cout << "  head: " << report.head_trace << "\n";
    std::cout << "  avg per trainable adapter: " << report.avg_per_trainable_adapter << "\n";
    std::cout << "wrote " << out_path.string() << "\n";
    return 0;
}

int cmd_report(const ReportOptions& opts) {
    if (opts.window < 1) throw ConfigError("--window must be >= 1");
    if (!(opts.alpha > 0.0 && opts.alpha < 1.0)) {
        throw ConfigError("--alpha must lie in (0,1)");
    }
    fs::path run_dir = opts.run_dir;
    fs::path metrics_path = run_dir / "metrics.csv";
    fs::path fisher_path = run_dir / "fisher.csv";
    if (!fs::exists(metrics_path)) throw ParseError("report input missing: " + metrics_path.string());
    if (!fs::exists(fisher_path)) throw ParseError("report input missing: " + fisher_path.string());

    CsvTable metrics = read_csv(metrics_path);
    if (metrics.header != std::vector<std::string>{"step", "kind", "split", "value"}) {
        throw ParseError(metrics_path.string() + " does not have the metrics schema");
    }
    Series fisher_raw, validation;
    for (const std::vector<std::string>& row : metrics.rows) {
        long step = std::stol(row[0]);
        double value = std::stod(row[3]);
        if (row[1] == "fisher_avg") fisher_raw.emplace_back(step, value);
        else if (row[1] == "eval") validation.emplace_back(step, value);
    }
    if (fisher_raw.empty()) {
        throw ParseError(metrics_path.string() + " has no fisher_avg rows to report on");
    }

    Series smoothed = moving_average(fisher_raw, opts.window);
    NormalizedSeries normalized = min_max_normalize(smoothed);
    if (normalized.constant) {
        std::cerr << "warning: fisher series is constant; normalized values set to 0\n";
    }
    CurveStats stats = curve_stats(fisher_raw, opts.alpha);

    fs::path report_dir = run_dir / "report";
    {
        std::ofstream out = open_out(report_dir / "fisher_smoothed.csv");
        out << "# funfreeze-fisher-smoothed v1\n";
        out << "step,raw,smoothed,normalized\n";
        for (std::size_t i = 0; i < fisher_raw.size(); ++i) {
            out << fisher_raw[i].first << "," << fmt_double(fisher_raw[i].second) << ","
                << fmt_double(smoothed[i].second) << ","
                << fmt_double(normalized.points[i].second) << "\n";
        }
    }
    {
        std::ofstream out = open_out(report_dir / "validation.csv");
        out << "# funfreeze-validation v1\n";
        out << "step,accuracy\n";
        for (const auto& [step, acc] : validation) {
            out << step << "," << fmt_double(acc) << "\n";
        }
    }
    {
        std::ofstream out = open_out(report_dir / "curve_stats.csv");
        out << "# funfreeze-curve-stats v1\n";
        out << "peak_value,peak_step,width_steps,alpha\n";
        out << fmt_double(stats.peak_value) << "," << stats.peak_step << ","
            << stats.width_steps << "," << fmt_double(stats.alpha) << "\n";
    }
    std::cout << "wrote " << (report_dir / "fisher_smoothed.csv").string() << ", "
              << (report_dir / "validation.csv").string() << ", "
              << (report_dir / "curve_stats.csv").string() << "\n";
    return 0;
}

}  // namespace funfreeze
