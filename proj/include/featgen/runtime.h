#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string_view>

namespace featgen {

// Worker count: FEATGEN_NUM_THREADS if set and positive, otherwise the
// hardware concurrency (at least 1).
int num_threads();

// Runs fn(i) for i in [0, n) on up to num_threads() workers. Callers write
// results into per-index slots so the outcome does not depend on scheduling.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

// Independent stream for one purpose ("real", "z", ...) of a run seed.
std::mt19937_64 derive_rng(uint64_t seed, std::string_view purpose);

}  // namespace featgen
