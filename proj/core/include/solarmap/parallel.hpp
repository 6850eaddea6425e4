#pragma once

#include <cstddef>
#include <functional>
#include <span>

namespace solarmap {

/// Calls fn(i) for every i in [0, n) using up to `workers` threads. Each call
/// must only write state owned by index i, which keeps results independent of
/// the worker count. The exception thrown for the lowest index is rethrown.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

/// Pairwise (tree) summation in a fixed order.
double pairwise_sum(std::span<const double> values);

}  // namespace solarmap
