#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace ctmass {

// Runs body(i) for i in [0, n) on up to `jobs` threads. Each index writes
// only its own output slot, so results do not depend on scheduling. If any
// calls throw, the exception of the lowest failing index is rethrown after
// all workers finish.
template <class Body>
void parallel_for(std::size_t n, int jobs, Body&& body)
{
    std::vector<std::exception_ptr> errors(n);
    const auto workers = static_cast<std::size_t>(std::max(1, jobs));
    if (workers == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            try {
                body(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        auto run = [&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        };
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < std::min(workers, n); ++w)
            pool.emplace_back(run);
        for (auto& t : pool)
            t.join();
    }
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

} // namespace ctmass
