#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace sdfn {

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// kernel after every op. Call once at startup.
inline void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

/// Worker cap: SDFN_THREADS if set and positive, else the hardware concurrency.
inline std::size_t thread_cap() {
    static const std::size_t cap = [] {
        if (const char* env = std::getenv("SDFN_THREADS")) {
            try {
                long v = std::stol(env);
                if (v > 0) return static_cast<std::size_t>(v);
            } catch (...) {
            }
        }
        return std::max<std::size_t>(1, std::thread::hardware_concurrency());
    }();
    return cap;
}

/// Number of workers parallel_for uses for n items.
inline std::size_t worker_count(std::size_t n) { return std::max<std::size_t>(1, std::min(thread_cap(), n)); }

/// Runs fn(i, worker) for i in [0, n); worker < worker_count(n) identifies the
/// thread, so callers can hand each one its own scratch buffer. Work items
/// must write disjoint outputs; any reduction across items is the caller's
/// job, done afterwards in index order.
template <class Fn>
void parallel_for_workers(std::size_t n, Fn&& fn) {
    const std::size_t workers = worker_count(n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i, std::size_t{0});
        return;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i, w);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    parallel_for_workers(n, [&fn](std::size_t i, std::size_t) { fn(i); });
}

}  // namespace sdfn
