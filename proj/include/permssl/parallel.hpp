#pragma once

#include <algorithm>
#include <cstdlib>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

namespace permssl {

// Worker count used by parallel_for. Defaults to the hardware concurrency,
// capped by the PERMSSL_THREADS environment variable when set.
inline int worker_count() {
    unsigned hw = std::thread::hardware_concurrency();
    int n = hw == 0 ? 1 : static_cast<int>(hw);
    if (const char* env = std::getenv("PERMSSL_THREADS")) {
        int cap = std::atoi(env);
        if (cap >= 1) n = std::min(n, cap);
    }
    return n;
}

// Runs fn(i) for i in [0, count). Work is split into contiguous chunks, one
// per worker. Results must not depend on the worker count; any randomness
// inside fn has to be derived from the index, never from thread identity.
template <typename Fn>
void parallel_for(int64_t count, Fn&& fn) {
    if (count <= 0) return;
    int workers = worker_count();
    if (workers > count) workers = static_cast<int>(count);
    if (workers <= 1) {
        for (int64_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    int64_t chunk = (count + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        int64_t lo = w * chunk;
        int64_t hi = std::min(count, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace permssl
