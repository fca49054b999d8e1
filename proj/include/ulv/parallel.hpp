#ifndef ULV_PARALLEL_HPP
#define ULV_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

/**
 * @file parallel.hpp
 * @brief Minimal data-parallel loop.
 */

namespace ulv {

/**
 * Call `fun(i)` for every `i` in `[0, n)` using up to `threads` workers.
 * Each index should write only to its own output slot, so results do not depend on the schedule.
 * The exception from the lowest failing index is rethrown after all workers finish.
 */
template<class Function_>
void parallel_for(long long n, int threads, Function_ fun) {
    if (n <= 0) {
        return;
    }

    const int nworkers = static_cast<int>(std::min<long long>(std::max(threads, 1), n));
    if (nworkers == 1) {
        for (long long i = 0; i < n; ++i) {
            fun(i);
        }
        return;
    }

    std::atomic<long long> next(0);
    std::mutex lock;
    std::exception_ptr error;
    long long error_index = n;

    auto worker = [&]() -> void {
        while (true) {
            const long long i = next.fetch_add(1);
            if (i >= n) {
                return;
            }
            try {
                fun(i);
            } catch (...) {
                std::lock_guard<std::mutex> guard(lock);
                if (i < error_index) {
                    error_index = i;
                    error = std::current_exception();
                }
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(nworkers - 1);
    for (int w = 1; w < nworkers; ++w) {
        pool.emplace_back(worker);
    }
    worker();
    for (auto& t : pool) {
        t.join();
    }

    if (error) {
        std::rethrow_exception(error);
    }
}

}

#endif
