#include "patchspn/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace patchspn {

namespace {

std::atomic<int> g_max_threads{0};
thread_local bool t_in_worker = false;

int effective_threads() {
    const int cap = g_max_threads.load(std::memory_order_relaxed);
    if (cap > 0) return cap;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace

void set_max_threads(int n) { g_max_threads.store(n, std::memory_order_relaxed); }

int max_threads() { return effective_threads(); }

std::size_t parallel_chunks(std::size_t n) {
    if (n == 0) return 0;
    const auto t = static_cast<std::size_t>(effective_threads());
    return std::min(n, t);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    const std::size_t chunks = parallel_chunks(n);
    if (chunks <= 1 || t_in_worker) {
        fn(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(chunks - 1);
    const std::size_t base = n / chunks;
    const std::size_t extra = n % chunks;
    std::size_t begin = 0;
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t len = base + (c < extra ? 1 : 0);
        const std::size_t end = begin + len;
        if (c + 1 == chunks) {
            t_in_worker = true;
            fn(begin, end);
            t_in_worker = false;
        } else {
            pool.emplace_back([&fn, begin, end] {
                t_in_worker = true;
                fn(begin, end);
                t_in_worker = false;
            });
        }
        begin = end;
    }
    for (auto& th : pool) th.join();
}

}  // namespace patchspn
