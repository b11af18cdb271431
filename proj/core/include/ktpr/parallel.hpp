#pragma once

#include <cstddef>
#include <functional>

namespace ktpr {

/// Number of worker threads used by parallel loops. Zero (the default)
/// resolves to $KTPR_THREADS, falling back to the hardware concurrency.
void set_thread_count(int threads);
int thread_count();

/// Runs body(begin, end) over [0, n) in fixed-size chunks. Chunk boundaries
/// depend only on n and grain, never on the thread count, so any per-chunk
/// state a caller keeps is reproducible. The first exception (by chunk
/// order) is rethrown after all workers finish.
void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t grain = 2048);

/// Sum of term(i) over [0, n): per-chunk partial sums followed by a pairwise
/// reduction, bitwise identical for any thread count.
double deterministic_sum(std::size_t n, const std::function<double(std::size_t)>& term,
                         std::size_t grain = 2048);

/// Pairwise (cascade) summation of a contiguous range.
double pairwise_sum(const double* values, std::size_t n);

}  // namespace ktpr
