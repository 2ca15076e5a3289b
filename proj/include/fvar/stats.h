#pragma once

#include <optional>
#include <span>
#include <vector>

namespace fvar {

double mean(std::span<const double> v);
// Sample standard deviation (n - 1); zero for fewer than two values.
double stddev(std::span<const double> v);
double median(std::vector<double> v);

// Empty when either side has zero variance or the lengths differ/are < 2.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);
// Pearson correlation of average ranks.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

std::vector<double> average_ranks(std::span<const double> v);

}  // namespace fvar
