#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "funfreeze/tensor.hpp"

namespace funfreeze {

struct Example {
    std::vector<double> features;
    std::size_t label = 0;
    std::string domain;

    friend bool operator==(const Example& a, const Example& b) {
        return a.features == b.features && a.label == b.label && a.domain == b.domain;
    }
};

struct Dataset {
    std::size_t h = 0;
    std::size_t classes = 0;
    std::uint64_t spec_hash = 0;
    std::vector<Example> examples;

    std::size_t size() const { return examples.size(); }
    bool empty() const { return examples.empty(); }
    // Unique domain names in first-appearance order.
    std::vector<std::string> domains() const;
    // Features of examples [begin, end) stacked into a (end-begin) x h matrix.
    Tensor features_matrix(std::size_t begin, std::size_t end) const;

    friend bool operator==(const Dataset& a, const Dataset& b) {
        return a.h == b.h && a.classes == b.classes && a.spec_hash == b.spec_hash &&
               a.examples == b.examples;
    }
};

// One observation domain: an orthonormal h x h transform plus an offset
// applied to latent points, with additive observation noise.
struct DomainSpec {
    std::string name;
    Tensor transform;  // h x h, orthonormal
    Tensor offset;     // h
    double noise_sigma = 0.0;
};

struct ShiftTaskSpec {
    std::size_t h = 32;
    std::size_t classes = 4;
    std::size_t n_train = 2048;
    std::size_t n_val = 512;
    std::size_t n_test_per_domain = 512;
    std::size_t n_shift_domains = 3;
    double shift_strength = 0.8;  // 0 = source distribution, 1 = unrelated rotation
    std::uint64_t seed = 0;
    bool rings = false;           // concentric-rings latent clusters instead of Gaussians
    double latent_noise = 0.35;
    double noise_sigma = 0.05;

    void validate() const;
};

std::uint64_t spec_hash(const ShiftTaskSpec& spec);

struct ShiftBenchmark {
    ShiftTaskSpec spec;
    std::vector<DomainSpec> domain_specs;  // index 0 = source
    Dataset train;        // source domain
    Dataset val;          // source domain
    Dataset source_test;  // source domain, same size as each shifted test set
    std::vector<Dataset> shifted_tests;
};

// Draws C latent cluster prototypes, builds one orthonormal transform per
// domain (source, then n_shift_domains shifted domains whose transforms are
// the source transform blended toward an independent rotation by
// shift_strength), and samples every split. Deterministic per seed.
ShiftBenchmark generate(const ShiftTaskSpec& spec);

// Squared mean gap plus Frobenius covariance gap between the feature
// distributions of two datasets. Zero iff first and second moments agree.
double moment_distance(const Dataset& a, const Dataset& b);

// Multi-domain auxiliary classification batches for base pretraining. The
// task shares nothing with a generated benchmark beyond its dimensions.
std::pair<std::vector<Tensor>, std::vector<std::vector<std::size_t>>> aux_pretrain_batches(
    std::size_t h, std::size_t classes, std::size_t batch_size, std::size_t n_batches,
    std::uint64_t seed);

// Line-delimited JSON: a header record {type, version, h, classes, domains,
// spec_hash} followed by one example record per line. load(save(d)) == d.
void save_dataset(std::ostream& out, const Dataset& dataset);
void save_dataset(const std::string& path, const Dataset& dataset);
Dataset load_dataset(std::istream& in);
Dataset load_dataset(const std::string& path);

}  // namespace funfreeze
