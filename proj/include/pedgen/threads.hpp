#pragma once

#include <cstdlib>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "pedgen/common.hpp"

namespace pedgen {

// Parallelism cap: PEDGEN_THREADS when set, hardware concurrency otherwise.
inline int max_threads() {
    if (const char* env = std::getenv("PEDGEN_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n >= 1) return n;
        } catch (...) {
        }
        throw ConfigError("PEDGEN_THREADS must be a positive integer");
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Static-partition parallel map over [0, n). Work item i writes only state
// owned by index i, so results are independent of the thread count.
template <typename Fn>
void parallel_for(int n, Fn&& fn, int threads = -1) {
    if (threads <= 0) threads = max_threads();
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    std::exception_ptr error;
    std::mutex error_mu;
    for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (int i = w; i < n; i += threads) fn(i);
            } catch (...) {
                const std::lock_guard<std::mutex> lock(error_mu);
                if (!error) error = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace pedgen
