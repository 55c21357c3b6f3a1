#pragma once

#include <algorithm>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace lmk {

/// Run fn(i) for i in [0, n) across a few threads. Results are collected by
/// index, so the outcome does not depend on the schedule. The first exception
/// thrown by any worker is rethrown on the calling thread.
inline void parallel_for_index(int n, const std::function<void(int)>& fn,
                               int max_threads = 0) {
    if (n <= 0) return;
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    int n_threads = static_cast<int>(std::min<unsigned>(hw, static_cast<unsigned>(n)));
    if (max_threads > 0) n_threads = std::min(n_threads, max_threads);
    if (n_threads <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int w = 0; w < n_threads; ++w) {
        pool.emplace_back([&, w]() {
            for (int i = w; i < n; i += n_threads) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace lmk
