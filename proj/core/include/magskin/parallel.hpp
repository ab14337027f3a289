#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace magskin {

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

// Runs fn(chunk, worker) for every chunk in [0, n_chunks) on up to `threads`
// workers; worker ids are stable in [0, threads) so callers can keep
// per-worker scratch. Chunks are claimed through a shared counter, so
// assignment to workers is arbitrary; callers must write results into
// per-chunk slots and reduce them serially in chunk order. That keeps
// numeric output independent of the thread count. The first worker
// exception is rethrown after the join.
inline void parallel_for_chunks(int n_chunks, int threads,
                                const std::function<void(int, int)>& fn) {
    if (n_chunks <= 0) return;
    threads = resolve_threads(threads);
    if (threads > n_chunks) threads = n_chunks;

    if (threads <= 1) {
        for (int c = 0; c < n_chunks; ++c) fn(c, 0);
        return;
    }

    std::atomic<int> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr first_error;
    std::mutex error_mutex;

    auto worker = [&](int id) {
        for (;;) {
            const int c = next.fetch_add(1, std::memory_order_relaxed);
            if (c >= n_chunks || failed.load(std::memory_order_relaxed)) return;
            try {
                fn(c, id);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                failed.store(true, std::memory_order_relaxed);
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads) - 1);
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker, t);
    worker(0);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace magskin
