#include "funfreeze/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "funfreeze/errors.hpp"
#include "funfreeze/rngmix.hpp"

namespace funfreeze {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_line(long line_no, const std::string& what) {
    throw ParseError("config line " + std::to_string(line_no) + ": " + what);
}

struct KeyContext {
    std::string key;
    long line_no;
};

long parse_long(const std::string& v, const KeyContext& ctx) {
    std::size_t pos = 0;
    long out = 0;
    try {
        out = std::stol(v, &pos);
    } catch (const std::exception&) {
        bad_line(ctx.line_no, ctx.key + " needs an integer, got '" + v + "'");
    }
    if (pos != v.size()) bad_line(ctx.line_no, ctx.key + " needs an integer, got '" + v + "'");
    return out;
}

std::uint64_t parse_u64(const std::string& v, const KeyContext& ctx) {
    std::size_t pos = 0;
    unsigned long long out = 0;
    try {
        out = std::stoull(v, &pos);
    } catch (const std::exception&) {
        bad_line(ctx.line_no, ctx.key + " needs a non-negative integer, got '" + v + "'");
    }
    if (pos != v.size() || v[0] == '-') {
        bad_line(ctx.line_no, ctx.key + " needs a non-negative integer, got '" + v + "'");
    }
    return out;
}

std::size_t parse_size(const std::string& v, const KeyContext& ctx) {
    return static_cast<std::size_t>(parse_u64(v, ctx));
}

double parse_double(const std::string& v, const KeyContext& ctx) {
    std::size_t pos = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &pos);
    } catch (const std::exception&) {
        bad_line(ctx.line_no, ctx.key + " needs a number, got '" + v + "'");
    }
    if (pos != v.size()) bad_line(ctx.line_no, ctx.key + " needs a number, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& v, const KeyContext& ctx) {
    if (v == "true") return true;
    if (v == "false") return false;
    bad_line(ctx.line_no, ctx.key + " needs true or false, got '" + v + "'");
}

std::vector<int> parse_permutation(const std::string& v, const KeyContext& ctx) {
    std::vector<int> out;
    std::istringstream is(v);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) bad_line(ctx.line_no, "permutation has an empty element");
        out.push_back(static_cast<int>(parse_long(tok, ctx)));
    }
    if (out.empty()) bad_line(ctx.line_no, "permutation is empty");
    return out;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

ExperimentConfig parse_config(std::istream& in) {
    ExperimentConfig cfg;
    std::string section;
    std::string line;
    long line_no = 0;
    std::map<std::string, long> seen;  // "section.key" -> first line
    bool steps_given = false, epochs_given = false;

    using Setter = std::function<void(const std::string&, const KeyContext&)>;
    std::map<std::string, Setter> setters;
    auto reg = [&setters](const char* name, Setter fn) { setters[name] = std::move(fn); };

    reg("model.hidden", [&](const std::string& v, const KeyContext& c) { cfg.model.hidden = parse_size(v, c); });
    reg("model.layers", [&](const std::string& v, const KeyContext& c) { cfg.model.layers = static_cast<int>(parse_long(v, c)); });
    reg("model.classes", [&](const std::string& v, const KeyContext& c) { cfg.model.classes = parse_size(v, c); });
    reg("model.reduction_factor", [&](const std::string& v, const KeyContext& c) { cfg.model.reduction_factor = parse_size(v, c); });
    reg("model.identity_init", [&](const std::string& v, const KeyContext& c) { cfg.model.identity_init = parse_bool(v, c); });
    reg("model.pretrain_steps", [&](const std::string& v, const KeyContext& c) { cfg.model.pretrain_steps = parse_long(v, c); });
    reg("model.pretrain_lr", [&](const std::string& v, const KeyContext& c) { cfg.model.pretrain_lr = parse_double(v, c); });

    reg("data.dataset_dir", [&](const std::string& v, const KeyContext&) { cfg.data.dataset_dir = v; });
    reg("data.n_train", [&](const std::string& v, const KeyContext& c) { cfg.data.n_train = parse_size(v, c); });
    reg("data.n_val", [&](const std::string& v, const KeyContext& c) { cfg.data.n_val = parse_size(v, c); });
    reg("data.n_test_per_domain", [&](const std::string& v, const KeyContext& c) { cfg.data.n_test_per_domain = parse_size(v, c); });
    reg("data.n_shift_domains", [&](const std::string& v, const KeyContext& c) { cfg.data.n_shift_domains = parse_size(v, c); });
    reg("data.shift_strength", [&](const std::string& v, const KeyContext& c) { cfg.data.shift_strength = parse_double(v, c); });
    reg("data.rings", [&](const std::string& v, const KeyContext& c) { cfg.data.rings = parse_bool(v, c); });
    reg("data.latent_noise", [&](const std::string& v, const KeyContext& c) { cfg.data.latent_noise = parse_double(v, c); });
    reg("data.noise_sigma", [&](const std::string& v, const KeyContext& c) { cfg.data.noise_sigma = parse_double(v, c); });

    reg("train.steps", [&](const std::string& v, const KeyContext& c) { cfg.train.steps = parse_long(v, c); steps_given = true; });
    reg("train.epochs", [&](const std::string& v, const KeyContext& c) { cfg.train.epochs = parse_long(v, c); epochs_given = true; });
    reg("train.batch_size", [&](const std::string& v, const KeyContext& c) { cfg.train.batch_size = parse_size(v, c); });
    reg("train.k", [&](const std::string& v, const KeyContext& c) { cfg.train.k = parse_long(v, c); });
    reg("train.scheduler", [&](const std::string& v, const KeyContext&) { cfg.train.scheduler = parse_schedule_kind(v); });
    reg("train.permutation", [&](const std::string& v, const KeyContext& c) { cfg.train.permutation = parse_permutation(v, c); });
    reg("train.lr", [&](const std::string& v, const KeyContext& c) { cfg.train.lr = parse_double(v, c); });
    reg("train.lr_schedule", [&](const std::string& v, const KeyContext& c) {
        if (v == "linear") cfg.train.lr_schedule = LrKind::Linear;
        else if (v == "constant") cfg.train.lr_schedule = LrKind::Constant;
        else bad_line(c.line_no, "lr_schedule must be linear or constant, got '" + v + "'");
    });
    reg("train.weight_decay", [&](const std::string& v, const KeyContext& c) { cfg.train.weight_decay = parse_double(v, c); });
    reg("train.max_grad_norm", [&](const std::string& v, const KeyContext& c) { cfg.train.max_grad_norm = parse_double(v, c); });
    reg("train.clip_over_all_params", [&](const std::string& v, const KeyContext& c) { cfg.train.clip_over_all_params = parse_bool(v, c); });
    reg("train.eval_every", [&](const std::string& v, const KeyContext& c) { cfg.train.eval_every = parse_long(v, c); });
    reg("train.fisher_log_every", [&](const std::string& v, const KeyContext& c) { cfg.train.fisher_log_every = parse_long(v, c); });
    reg("train.fisher_estimator", [&](const std::string& v, const KeyContext&) { cfg.train.fisher_estimator = parse_estimator(v); });
    reg("train.fisher_n_batches", [&](const std::string& v, const KeyContext& c) { cfg.train.fisher_n_batches = parse_long(v, c); });
    reg("train.fisher_batch_size", [&](const std::string& v, const KeyContext& c) { cfg.train.fisher_batch_size = parse_size(v, c); });
    reg("train.seed_data", [&](const std::string& v, const KeyContext& c) { cfg.train.seed_data = parse_u64(v, c); });
    reg("train.seed_init", [&](const std::string& v, const KeyContext& c) { cfg.train.seed_init = parse_u64(v, c); });
    reg("train.seed_scheduler", [&](const std::string& v, const KeyContext& c) { cfg.train.seed_scheduler = parse_u64(v, c); });
    reg("train.seed_fisher", [&](const std::string& v, const KeyContext& c) { cfg.train.seed_fisher = parse_u64(v, c); });

    reg("output.dir", [&](const std::string& v, const KeyContext&) { cfg.output.dir = v; });

    while (std::getline(in, line)) {
        ++line_no;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') bad_line(line_no, "unterminated section header");
            section = trim(t.substr(1, t.size() - 2));
            if (section != "model" && section != "data" && section != "train" &&
                section != "output") {
                bad_line(line_no, "unknown section [" + section + "]");
            }
            continue;
        }
        std::size_t eq = t.find('=');
        if (eq == std::string::npos) bad_line(line_no, "expected key = value");
        if (section.empty()) bad_line(line_no, "key outside any section");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty()) bad_line(line_no, "empty key");
        std::string full = section + "." + key;
        auto it = setters.find(full);
        if (it == setters.end()) bad_line(line_no, "unknown key '" + key + "' in [" + section + "]");
        auto [seen_it, inserted] = seen.emplace(full, line_no);
        if (!inserted) {
            bad_line(line_no, "duplicate key '" + key + "' (first set on line " +
                                  std::to_string(seen_it->second) + ")");
        }
        it->second(value, {full, line_no});
    }

    if (steps_given && epochs_given) {
        throw ConfigError("config sets both train.steps and train.epochs; pick one");
    }
    if (epochs_given) cfg.train.steps = 0;
    if (cfg.train.steps < 0 || cfg.train.epochs < 0) {
        throw ConfigError("train.steps and train.epochs must be non-negative");
    }
    if (cfg.train.steps == 0 && cfg.train.epochs == 0) {
        throw ConfigError("config must set train.steps or train.epochs");
    }
    if (cfg.train.scheduler == ScheduleKind::Fixed && cfg.train.permutation.empty()) {
        throw ConfigError("fixed scheduler needs train.permutation");
    }
    return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config: " + path);
    return parse_config(in);
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    os << "[model]\n";
    os << "hidden = " << cfg.model.hidden << "\n";
    os << "layers = " << cfg.model.layers << "\n";
    os << "classes = " << cfg.model.classes << "\n";
    os << "reduction_factor = " << cfg.model.reduction_factor << "\n";
    os << "identity_init = " << (cfg.model.identity_init ? "true" : "false") << "\n";
    os << "pretrain_steps = " << cfg.model.pretrain_steps << "\n";
    os << "pretrain_lr = " << fmt_double(cfg.model.pretrain_lr) << "\n";

    os << "\n[data]\n";
    if (!cfg.data.dataset_dir.empty()) os << "dataset_dir = " << cfg.data.dataset_dir << "\n";
    os << "n_train = " << cfg.data.n_train << "\n";
    os << "n_val = " << cfg.data.n_val << "\n";
    os << "n_test_per_domain = " << cfg.data.n_test_per_domain << "\n";
    os << "n_shift_domains = " << cfg.data.n_shift_domains << "\n";
    os << "shift_strength = " << fmt_double(cfg.data.shift_strength) << "\n";
    os << "rings = " << (cfg.data.rings ? "true" : "false") << "\n";
    os << "latent_noise = " << fmt_double(cfg.data.latent_noise) << "\n";
    os << "noise_sigma = " << fmt_double(cfg.data.noise_sigma) << "\n";

    os << "\n[train]\n";
    if (cfg.train.epochs > 0) os << "epochs = " << cfg.train.epochs << "\n";
    else os << "steps = " << cfg.train.steps << "\n";
    os << "batch_size = " << cfg.train.batch_size << "\n";
    os << "k = " << cfg.train.k << "\n";
    os << "scheduler = " << schedule_kind_name(cfg.train.scheduler) << "\n";
    if (!cfg.train.permutation.empty()) {
        os << "permutation = ";
        for (std::size_t i = 0; i < cfg.train.permutation.size(); ++i) {
            if (i) os << ",";
            os << cfg.train.permutation[i];
        }
        os << "\n";
    }
    os << "lr = " << fmt_double(cfg.train.lr) << "\n";
    os << "lr_schedule = " << (cfg.train.lr_schedule == LrKind::Linear ? "linear" : "constant")
       << "\n";
    os << "weight_decay = " << fmt_double(cfg.train.weight_decay) << "\n";
    os << "max_grad_norm = " << fmt_double(cfg.train.max_grad_norm) << "\n";
    os << "clip_over_all_params = " << (cfg.train.clip_over_all_params ? "true" : "false") << "\n";
    os << "eval_every = " << cfg.train.eval_every << "\n";
    os << "fisher_log_every = " << cfg.train.fisher_log_every << "\n";
    os << "fisher_estimator = " << estimator_name(cfg.train.fisher_estimator) << "\n";
    os << "fisher_n_batches = " << cfg.train.fisher_n_batches << "\n";
    os << "fisher_batch_size = " << cfg.train.fisher_batch_size << "\n";
    os << "seed_data = " << cfg.train.seed_data << "\n";
    os << "seed_init = " << cfg.train.seed_init << "\n";
    os << "seed_scheduler = " << cfg.train.seed_scheduler << "\n";
    os << "seed_fisher = " << cfg.train.seed_fisher << "\n";

    os << "\n[output]\n";
    os << "dir = " << cfg.output.dir << "\n";
    return os.str();
}

long resolve_steps(const TrainSection& train, std::size_t n_train) {
    if (train.steps > 0 && train.epochs > 0) {
        throw ConfigError("config sets both train.steps and train.epochs; pick one");
    }
    if (train.steps > 0) return train.steps;
    if (train.epochs > 0) {
        if (train.batch_size == 0) throw ConfigError("training needs a positive batch size");
        if (n_train == 0) throw ConfigError("cannot convert epochs to steps on an empty dataset");
        long per_epoch = static_cast<long>((n_train + train.batch_size - 1) / train.batch_size);
        return per_epoch * train.epochs;
    }
    throw ConfigError("config must set train.steps or train.epochs");
}

ReplicaSeeds replica_seeds(const TrainSection& train, int replica,
                           std::optional<std::uint64_t> seed_base) {
    std::uint64_t r = static_cast<std::uint64_t>(replica);
    std::uint64_t data = seed_base ? mix_seed(*seed_base, 1) : train.seed_data;
    std::uint64_t init = seed_base ? mix_seed(*seed_base, 2) : train.seed_init;
    std::uint64_t sched = seed_base ? mix_seed(*seed_base, 3) : train.seed_scheduler;
    std::uint64_t fisher = seed_base ? mix_seed(*seed_base, 4) : train.seed_fisher;
    return {mix_seed(data, r), mix_seed(init, r), mix_seed(sched, r), mix_seed(fisher, r)};
}

std::uint64_t task_seed(const TrainSection& train, std::optional<std::uint64_t> seed_base) {
    return seed_base ? mix_seed(*seed_base, 1) : train.seed_data;
}

ShiftTaskSpec task_spec_from(const ExperimentConfig& cfg, std::uint64_t seed) {
    ShiftTaskSpec spec;
    spec.h = cfg.model.hidden;
    spec.classes = cfg.model.classes;
    spec.n_train = cfg.data.n_train;
    spec.n_val = cfg.data.n_val;
    spec.n_test_per_domain = cfg.data.n_test_per_domain;
    spec.n_shift_domains = cfg.data.n_shift_domains;
    spec.shift_strength = cfg.data.shift_strength;
    spec.seed = seed;
    spec.rings = cfg.data.rings;
    spec.latent_noise = cfg.data.latent_noise;
    spec.noise_sigma = cfg.data.noise_sigma;
    return spec;
}

TrainConfig train_config_from(const ExperimentConfig& cfg, long steps,
                              const ReplicaSeeds& seeds) {
    TrainConfig tc;
    tc.steps = steps;
    tc.batch_size = cfg.train.batch_size;
    tc.k = cfg.train.k;
    tc.scheduler.kind = cfg.train.scheduler;
    tc.scheduler.random_seed = seeds.scheduler;
    tc.scheduler.permutation = cfg.train.permutation;
    tc.lr_kind = cfg.train.lr_schedule;
    tc.lr = cfg.train.lr;
    tc.weight_decay = cfg.train.weight_decay;
    tc.max_grad_norm = cfg.train.max_grad_norm;
    tc.clip_over_all_params = cfg.train.clip_over_all_params;
    tc.data_seed = seeds.data;
    tc.fisher_seed = seeds.fisher;
    tc.eval_every = cfg.train.eval_every;
    tc.fisher_log_every = cfg.train.fisher_log_every;
    tc.fisher.n_batches = cfg.train.fisher_n_batches;
    tc.fisher.batch_size = cfg.train.fisher_batch_size;
    tc.fisher.estimator = cfg.train.fisher_estimator;
    return tc;
}

}  // namespace funfreeze
