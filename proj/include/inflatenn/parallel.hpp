#pragma once

#include <cstdint>
#include <functional>

namespace inflatenn {

// Worker count: INFLATENN_THREADS if set, else hardware concurrency.
int worker_count();

// Runs body(i) for i in [0, n). Work is split into contiguous chunks, one per
// worker; results are bit-deterministic as long as body(i) writes only to
// locations owned by index i.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body);

}  // namespace inflatenn
