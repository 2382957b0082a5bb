#pragma once

#include <cstddef>
#include <vector>

namespace funfreeze {

double mean(const std::vector<double>& xs);
// Sample standard deviation (n-1 denominator); 0 for a single value.
double sample_stddev(const std::vector<double>& xs);

// Average ranks, 1-based; ties share the mean of their positions.
std::vector<double> average_ranks(const std::vector<double>& xs);

// Spearman rank correlation: Pearson correlation of average ranks. Returns 0
// when either side is constant (rank variance 0).
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

// Greedy grouping of scores: sort descending, anchor each group at the best
// ungrouped score, absorb everything within `threshold` of the anchor.
// Returns a group id per input position; ids are 0-based in anchor order.
std::vector<int> group_within(const std::vector<double>& scores, double threshold);

}  // namespace funfreeze
