#pragma once

// Deterministic fork/join helpers. Work is split into contiguous index ranges;
// callers write results by index so output never depends on the thread count.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace oaareg {

/// Thread cap from OAAREG_THREADS; falls back to hardware concurrency.
inline std::size_t thread_cap() {
    if (const char* env = std::getenv("OAAREG_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) return static_cast<std::size_t>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

/// Calls fn(i) for i in [0, n). Rethrows the exception of the lowest failing index.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t max_threads = thread_cap()) {
    if (n == 0) return;
    const std::size_t workers = std::max<std::size_t>(1, std::min(max_threads, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    const std::size_t chunk = (n + workers - 1) / workers;
    auto run = [&](std::size_t w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        try {
            for (std::size_t i = begin; i < end; ++i) fn(i);
        } catch (...) {
            errors[w] = std::current_exception();
        }
    };
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run, w);
    run(0);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Child seed for stream `index` of a root seed; independent of evaluation order.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index, std::uint64_t salt = 0) {
    return mix64(mix64(root ^ mix64(salt)) + index);
}

using Rng = std::mt19937_64;

} // namespace oaareg
