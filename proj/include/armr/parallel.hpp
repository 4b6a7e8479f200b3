#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace armr {

/// Worker count from REGIME_SELECT_THREADS (unset or 0 = hardware concurrency).
[[nodiscard]] inline int thread_count_from_env() {
    int requested = 0;
    if (const char* env = std::getenv("REGIME_SELECT_THREADS")) {
        try {
            requested = std::stoi(env);
        } catch (const std::exception&) {
            requested = 0;
        }
    }
    if (requested <= 0) requested = static_cast<int>(std::thread::hardware_concurrency());
    return requested > 0 ? requested : 1;
}

/// Runs body(i) for i in [0, count) on up to `threads` workers. Each index is
/// processed exactly once; the first exception is rethrown after all workers join.
template <typename Body>
void parallel_for(int count, int threads, Body&& body) {
    if (threads <= 1 || count <= 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (int i = next++; i < count; i = next++) {
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const int workers = std::min(threads, count);
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace armr
