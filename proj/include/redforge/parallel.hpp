#pragma once

#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace redforge {

// Runs fn(i) for i in [0, n) across up to n_threads workers. Each index is
// expected to write into its own pre-sized output slot, so results are
// identical for any thread count; callers do any reduction serially.
template <class Fn>
void parallel_for(std::size_t n, int n_threads, const Fn& fn) {
    if (n == 0) return;
    if (n_threads <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(n_threads), n);
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mu;
    std::size_t next = 0;
    std::mutex next_mu;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            for (;;) {
                std::size_t i;
                {
                    std::lock_guard lock(next_mu);
                    if (next >= n) return;
                    i = next++;
                }
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mu);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

int default_thread_count();

}  // namespace redforge
