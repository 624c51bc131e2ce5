// Copyright (c) 2026, the ckmerge authors
// SPDX-License-Identifier: Apache-2.0

#include "parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace ckm {

int default_thread_count() {
    if (const char * env = std::getenv("CKMERGE_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) {
            return n;
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

void parallel_for(size_t n, int n_threads, const std::function<void(size_t)> & fn) {
    if (n == 0) {
        return;
    }
    size_t workers = n_threads > 0 ? static_cast<size_t>(n_threads)
                                   : static_cast<size_t>(default_thread_count());
    if (workers > n) {
        workers = n;
    }
    if (workers <= 1) {
        for (size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }

    std::atomic<size_t> next{0};
    std::exception_ptr  first_error;
    std::mutex          error_mutex;

    auto work = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1, std::memory_order_relaxed);
            if (i >= n) {
                return;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) {
                    first_error = std::current_exception();
                }
            }
        }
    };

    std::vector<std::thread> threads;
    threads.reserve(workers - 1);
    for (size_t t = 1; t < workers; ++t) {
        threads.emplace_back(work);
    }
    work();
    for (auto & t : threads) {
        t.join();
    }
    if (first_error) {
        std::rethrow_exception(first_error);
    }
}

} // namespace ckm
