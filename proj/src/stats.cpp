#include "funfreeze/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace funfreeze {

double mean(const std::vector<double>& xs) {
    if (xs.empty()) throw std::invalid_argument("mean of an empty sample");
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double sample_stddev(const std::vector<double>& xs) {
    if (xs.empty()) throw std::invalid_argument("stddev of an empty sample");
    if (xs.size() == 1) return 0.0;
    double m = mean(xs);
    double sq = 0.0;
    for (double x : xs) sq += (x - m) * (x - m);
    return std::sqrt(sq / static_cast<double>(xs.size() - 1));
}

std::vector<double> average_ranks(const std::vector<double>& xs) {
    std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&xs](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
        double shared = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t p = i; p <= j; ++p) ranks[order[p]] = shared;
        i = j + 1;
    }
    return ranks;
}

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("spearman: length mismatch");
    if (xs.size() < 2) throw std::invalid_argument("spearman needs at least 2 points");
    std::vector<double> rx = average_ranks(xs);
    std::vector<double> ry = average_ranks(ys);
    double mx = mean(rx), my = mean(ry);
    double cov = 0.0, vx = 0.0, vy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        double dx = rx[i] - mx, dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if (vx == 0.0 || vy == 0.0) return 0.0;
    return cov / std::sqrt(vx * vy);
}

std::vector<int> group_within(const std::vector<double>& scores, double threshold) {
    if (threshold < 0.0) throw std::invalid_argument("group threshold must be non-negative");
    std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<int> group(n, -1);
    int next = 0;
    for (std::size_t oi = 0; oi < n; ++oi) {
        std::size_t anchor = order[oi];
        if (group[anchor] >= 0) continue;
        for (std::size_t oj = oi; oj < n; ++oj) {
            std::size_t cand = order[oj];
            if (group[cand] < 0 && scores[anchor] - scores[cand] <= threshold) {
                group[cand] = next;
            }
        }
        ++next;
    }
    return group;
}

}  // namespace funfreeze
