#include "funfreeze/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "funfreeze/errors.hpp"
#include "funfreeze/rngmix.hpp"

namespace funfreeze {

namespace {

using nlohmann::json;

// Sub-stream tags for deriving per-purpose RNG seeds from the task seed.
enum : std::uint64_t {
    kProtoStream = 1,
    kTransformStream = 2,
    kTrainStream = 3,
    kValStream = 4,
    kTestStream = 5,
    kOffsetStream = 6,
};

std::vector<double> gaussian_vec(std::size_t n, double scale, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) x = scale * dist(rng);
    return v;
}

// Modified Gram-Schmidt over rows. Returns false when a row collapses below
// the pivot threshold before normalization.
bool orthonormalize_rows(Tensor& m) {
    std::size_t n = m.rows();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < n; ++c) dot += m.at(i, c) * m.at(j, c);
            for (std::size_t c = 0; c < n; ++c) m.at(i, c) -= dot * m.at(j, c);
        }
        double norm = 0.0;
        for (std::size_t c = 0; c < n; ++c) norm += m.at(i, c) * m.at(i, c);
        norm = std::sqrt(norm);
        if (norm < 1e-6) return false;
        for (std::size_t c = 0; c < n; ++c) m.at(i, c) /= norm;
    }
    return true;
}

double max_orthonormality_defect(const Tensor& m) {
    std::size_t n = m.rows();
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < n; ++c) dot += m.at(i, c) * m.at(j, c);
            double target = i == j ? 1.0 : 0.0;
            worst = std::max(worst, std::abs(dot - target));
        }
    }
    return worst;
}

Tensor random_rotation(std::size_t h, std::mt19937_64& rng) {
    for (;;) {
        Tensor m({h, h}, gaussian_vec(h * h, 1.0, rng));
        if (orthonormalize_rows(m)) return m;
    }
}

// Blend of the source rotation toward an independent rotation, renormalized
// so every domain transform stays orthonormal (condition number 1).
Tensor blended_rotation(const Tensor& source, double strength, std::mt19937_64& rng) {
    std::size_t h = source.rows();
    for (;;) {
        Tensor q = random_rotation(h, rng);
        Tensor blend = Tensor::zeros({h, h});
        for (std::size_t i = 0; i < h * h; ++i) {
            blend.elems[i] = (1.0 - strength) * source.elems[i] + strength * q.elems[i];
        }
        if (orthonormalize_rows(blend)) return blend;
    }
}

std::vector<double> latent_point(const ShiftTaskSpec& spec,
                                 const std::vector<std::vector<double>>& prototypes,
                                 std::size_t label, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> z(spec.h);
    if (spec.rings) {
        std::uniform_real_distribution<double> angle(0.0, 2.0 * 3.14159265358979323846);
        double radius = 1.5 * static_cast<double>(label + 1);
        double theta = angle(rng);
        z[0] = radius * std::cos(theta);
        z[1] = radius * std::sin(theta);
        for (std::size_t j = 2; j < spec.h; ++j) z[j] = spec.latent_noise * dist(rng);
    } else {
        for (std::size_t j = 0; j < spec.h; ++j) {
            z[j] = prototypes[label][j] + spec.latent_noise * dist(rng);
        }
    }
    return z;
}

Example observe(const ShiftTaskSpec& spec, const DomainSpec& domain,
                const std::vector<double>& z, std::size_t label, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Example ex;
    ex.label = label;
    ex.domain = domain.name;
    ex.features.assign(spec.h, 0.0);
    for (std::size_t i = 0; i < spec.h; ++i) {
        double s = domain.offset.elems[i];
        for (std::size_t j = 0; j < spec.h; ++j) s += domain.transform.at(i, j) * z[j];
        if (domain.noise_sigma > 0.0) s += domain.noise_sigma * dist(rng);
        ex.features[i] = s;
    }
    return ex;
}

Dataset sample_split(const ShiftTaskSpec& spec, const DomainSpec& domain,
                     const std::vector<std::vector<double>>& prototypes, std::size_t count,
                     std::uint64_t stream_seed) {
    Dataset d;
    d.h = spec.h;
    d.classes = spec.classes;
    d.spec_hash = spec_hash(spec);
    d.examples.reserve(count);
    std::mt19937_64 rng(stream_seed);
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t label = i % spec.classes;
        std::vector<double> z = latent_point(spec, prototypes, label, rng);
        d.examples.push_back(observe(spec, domain, z, label, rng));
    }
    return d;
}

json dataset_header(const Dataset& d) {
    return json{{"type", "header"}, {"version", 1},           {"h", d.h},
                {"classes", d.classes}, {"domains", d.domains()}, {"spec_hash", d.spec_hash}};
}

[[noreturn]] void line_error(long line_no, const std::string& what) {
    throw ParseError("dataset line " + std::to_string(line_no) + ": " + what);
}

}  // namespace

std::vector<std::string> Dataset::domains() const {
    std::vector<std::string> names;
    for (const Example& ex : examples) {
        if (std::find(names.begin(), names.end(), ex.domain) == names.end()) {
            names.push_back(ex.domain);
        }
    }
    return names;
}

Tensor Dataset::features_matrix(std::size_t begin, std::size_t end) const {
    if (begin >= end || end > examples.size()) {
        throw std::out_of_range("features_matrix: bad range");
    }
    Tensor m = Tensor::zeros({end - begin, h});
    for (std::size_t i = begin; i < end; ++i) {
        for (std::size_t j = 0; j < h; ++j) m.at(i - begin, j) = examples[i].features[j];
    }
    return m;
}

void ShiftTaskSpec::validate() const {
    if (h == 0) throw ConfigError("task h must be positive");
    if (classes < 2) throw ConfigError("task must have at least 2 classes");
    if (n_train == 0 || n_val == 0 || n_test_per_domain == 0) {
        throw ConfigError("task split sizes must be positive");
    }
    if (n_shift_domains == 0) throw ConfigError("task needs at least one shifted domain");
    if (shift_strength < 0.0 || shift_strength > 1.0) {
        throw ConfigError("shift_strength must lie in [0,1]");
    }
    if (latent_noise < 0.0 || noise_sigma < 0.0) {
        throw ConfigError("noise levels must be non-negative");
    }
    if (rings && h < 2) throw ConfigError("rings task needs h >= 2");
}

std::uint64_t spec_hash(const ShiftTaskSpec& spec) {
    std::ostringstream os;
    os << spec.h << "|" << spec.classes << "|" << spec.n_train << "|" << spec.n_val << "|"
       << spec.n_test_per_domain << "|" << spec.n_shift_domains << "|";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%a", spec.shift_strength);
    os << buf << "|" << spec.seed << "|" << (spec.rings ? 1 : 0) << "|";
    std::snprintf(buf, sizeof buf, "%a", spec.latent_noise);
    os << buf << "|";
    std::snprintf(buf, sizeof buf, "%a", spec.noise_sigma);
    os << buf;
    std::string s = os.str();
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

ShiftBenchmark generate(const ShiftTaskSpec& spec) {
    spec.validate();

    std::mt19937_64 proto_rng(mix_seed(spec.seed, kProtoStream));
    std::vector<std::vector<double>> prototypes;
    for (std::size_t c = 0; c < spec.classes; ++c) {
        prototypes.push_back(gaussian_vec(spec.h, 2.0, proto_rng));
    }

    ShiftBenchmark bench;
    bench.spec = spec;

    std::mt19937_64 source_rng(mix_seed(spec.seed, kTransformStream, 0));
    DomainSpec source{"source", random_rotation(spec.h, source_rng), Tensor::zeros({spec.h}),
                      spec.noise_sigma};
    bench.domain_specs.push_back(source);

    for (std::size_t d = 1; d <= spec.n_shift_domains; ++d) {
        std::mt19937_64 t_rng(mix_seed(spec.seed, kTransformStream, d));
        std::mt19937_64 o_rng(mix_seed(spec.seed, kOffsetStream, d));
        DomainSpec dom;
        dom.name = "shift" + std::to_string(d);
        dom.transform = blended_rotation(source.transform, spec.shift_strength, t_rng);
        dom.offset = Tensor({spec.h}, gaussian_vec(spec.h, 0.5 * spec.shift_strength, o_rng));
        dom.noise_sigma = spec.noise_sigma;
        if (max_orthonormality_defect(dom.transform) > 1e-8) {
            throw std::logic_error("domain transform failed the orthonormality check");
        }
        bench.domain_specs.push_back(std::move(dom));
    }

    bench.train = sample_split(spec, bench.domain_specs[0], prototypes, spec.n_train,
                               mix_seed(spec.seed, kTrainStream));
    bench.val = sample_split(spec, bench.domain_specs[0], prototypes, spec.n_val,
                             mix_seed(spec.seed, kValStream));
    bench.source_test = sample_split(spec, bench.domain_specs[0], prototypes,
                                     spec.n_test_per_domain, mix_seed(spec.seed, kTestStream, 0));
    for (std::size_t d = 1; d <= spec.n_shift_domains; ++d) {
        bench.shifted_tests.push_back(sample_split(spec, bench.domain_specs[d], prototypes,
                                                   spec.n_test_per_domain,
                                                   mix_seed(spec.seed, kTestStream, d)));
    }
    return bench;
}

double moment_distance(const Dataset& a, const Dataset& b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("moment_distance: empty dataset");
    if (a.h != b.h) throw std::invalid_argument("moment_distance: feature widths differ");
    std::size_t h = a.h;

    auto moments = [h](const Dataset& d) {
        std::vector<double> mean(h, 0.0);
        for (const Example& ex : d.examples) {
            for (std::size_t j = 0; j < h; ++j) mean[j] += ex.features[j];
        }
        for (double& m : mean) m /= static_cast<double>(d.size());
        Tensor cov = Tensor::zeros({h, h});
        for (const Example& ex : d.examples) {
            for (std::size_t i = 0; i < h; ++i) {
                double di = ex.features[i] - mean[i];
                for (std::size_t j = 0; j < h; ++j) {
                    cov.at(i, j) += di * (ex.features[j] - mean[j]);
                }
            }
        }
        for (double& v : cov.elems) v /= static_cast<double>(d.size());
        return std::make_pair(mean, cov);
    };

    auto [mean_a, cov_a] = moments(a);
    auto [mean_b, cov_b] = moments(b);
    double dist = 0.0;
    for (std::size_t j = 0; j < h; ++j) {
        double d = mean_a[j] - mean_b[j];
        dist += d * d;
    }
    for (std::size_t i = 0; i < h * h; ++i) {
        double d = cov_a.elems[i] - cov_b.elems[i];
        dist += d * d;
    }
    return dist;
}

std::pair<std::vector<Tensor>, std::vector<std::vector<std::size_t>>> aux_pretrain_batches(
    std::size_t h, std::size_t classes, std::size_t batch_size, std::size_t n_batches,
    std::uint64_t seed) {
    if (h == 0 || classes < 2 || batch_size == 0) {
        throw std::invalid_argument("aux_pretrain_batches: bad dimensions");
    }
    const std::size_t n_domains = 3;
    std::mt19937_64 setup_rng(mix_seed(seed, kProtoStream, 0xa0));
    std::vector<std::vector<double>> prototypes;
    for (std::size_t c = 0; c < classes; ++c) prototypes.push_back(gaussian_vec(h, 2.0, setup_rng));
    std::vector<Tensor> transforms;
    for (std::size_t d = 0; d < n_domains; ++d) transforms.push_back(random_rotation(h, setup_rng));

    std::mt19937_64 rng(mix_seed(seed, kTrainStream, 0xa0));
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<Tensor> features;
    std::vector<std::vector<std::size_t>> labels;
    for (std::size_t b = 0; b < n_batches; ++b) {
        const Tensor& t = transforms[b % n_domains];
        Tensor x = Tensor::zeros({batch_size, h});
        std::vector<std::size_t> y(batch_size);
        for (std::size_t i = 0; i < batch_size; ++i) {
            y[i] = i % classes;
            std::vector<double> z(h);
            for (std::size_t j = 0; j < h; ++j) z[j] = prototypes[y[i]][j] + 0.35 * dist(rng);
            for (std::size_t r = 0; r < h; ++r) {
                double s = 0.0;
                for (std::size_t c = 0; c < h; ++c) s += t.at(r, c) * z[c];
                x.at(i, r) = s;
            }
        }
        features.push_back(std::move(x));
        labels.push_back(std::move(y));
    }
    return {std::move(features), std::move(labels)};
}

void save_dataset(std::ostream& out, const Dataset& dataset) {
    out << dataset_header(dataset).dump() << "\n";
    for (const Example& ex : dataset.examples) {
        json rec{{"features", ex.features}, {"label", ex.label}, {"domain", ex.domain}};
        out << rec.dump() << "\n";
    }
}

void save_dataset(const std::string& path, const Dataset& dataset) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RunError("cannot open dataset for writing: " + path);
    save_dataset(out, dataset);
    if (!out) throw RunError("write failed for dataset: " + path);
}

Dataset load_dataset(std::istream& in) {
    std::string line;
    long line_no = 0;

    auto parse_line = [&](const std::string& text) {
        try {
            return json::parse(text);
        } catch (const json::parse_error& e) {
            line_error(line_no, e.what());
        }
    };

    if (!std::getline(in, line)) throw ParseError("dataset is empty, expected a header record");
    ++line_no;
    json header = parse_line(line);
    if (!header.is_object() || header.value("type", "") != "header" ||
        header.value("version", 0) != 1) {
        line_error(line_no, "expected a version-1 header record");
    }
    if (!header.contains("h") || !header["h"].is_number_unsigned() ||
        !header.contains("classes") || !header["classes"].is_number_unsigned() ||
        !header.contains("domains") || !header["domains"].is_array() ||
        !header.contains("spec_hash") || !header["spec_hash"].is_number_unsigned()) {
        line_error(line_no, "header is missing h, classes, domains, or spec_hash");
    }

    Dataset d;
    d.h = header["h"].get<std::size_t>();
    d.classes = header["classes"].get<std::size_t>();
    d.spec_hash = header["spec_hash"].get<std::uint64_t>();
    if (d.h == 0 || d.classes < 2) line_error(line_no, "header has degenerate h or classes");
    std::set<std::string> known_domains;
    for (const json& name : header["domains"]) {
        if (!name.is_string()) line_error(line_no, "domain names must be strings");
        known_domains.insert(name.get<std::string>());
    }

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) line_error(line_no, "blank line");
        json rec = parse_line(line);
        if (!rec.is_object() || !rec.contains("features") || !rec["features"].is_array() ||
            !rec.contains("label") || !rec["label"].is_number_unsigned() ||
            !rec.contains("domain") || !rec["domain"].is_string()) {
            line_error(line_no, "expected an example record with features, label, domain");
        }
        Example ex;
        ex.features.reserve(d.h);
        for (const json& v : rec["features"]) {
            if (!v.is_number()) line_error(line_no, "features must be numbers");
            ex.features.push_back(v.get<double>());
        }
        if (ex.features.size() != d.h) {
            line_error(line_no, "expected " + std::to_string(d.h) + " features, found " +
                                    std::to_string(ex.features.size()));
        }
        ex.label = rec["label"].get<std::size_t>();
        if (ex.label >= d.classes) line_error(line_no, "label out of range");
        ex.domain = rec["domain"].get<std::string>();
        if (!known_domains.count(ex.domain)) {
            line_error(line_no, "domain '" + ex.domain + "' is not in the header");
        }
        d.examples.push_back(std::move(ex));
    }
    return d;
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open dataset: " + path);
    return load_dataset(in);
}

}  // namespace funfreeze
