#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace frim {

// Runs body(i) for i in [0, n) on up to `workers` threads.  Results must be
// written to pre-sized, per-index slots so the outcome is identical no matter
// how the indices are scheduled.  The first exception thrown by any worker is
// rethrown on the calling thread after all workers have drained.
inline void parallel_for(std::size_t n, int workers,
                         const std::function<void(std::size_t)>& body) {
    if (n == 0) return;
    if (workers < 1) workers = 1;
    const std::size_t n_threads =
        std::min<std::size_t>(static_cast<std::size_t>(workers), n);
    if (n_threads == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }

    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr first_error = nullptr;

    auto run = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(run);
    for (auto& th : pool) th.join();

    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace frim
