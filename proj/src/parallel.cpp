#include "volray/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>

namespace volray {

int worker_threads() {
    static const int n = [] {
        if (const char* env = std::getenv("VOLRAY_THREADS")) {
            int v = std::atoi(env);
            if (v > 0) return v;
        }
        unsigned hw = std::thread::hardware_concurrency();
        return hw > 0 ? static_cast<int>(hw) : 1;
    }();
    return n;
}

void parallel_chunks_indexed(std::int64_t n, std::int64_t grain,
                             const std::function<void(std::size_t, std::int64_t, std::int64_t)>& fn) {
    if (n <= 0) return;
    if (grain < 1) grain = 1;
    const std::int64_t chunks = static_cast<std::int64_t>(chunk_count(n, grain));
    const int threads = worker_threads();
    if (threads <= 1 || chunks <= 1) {
        for (std::int64_t c = 0; c < chunks; ++c)
            fn(static_cast<std::size_t>(c), c * grain, std::min(n, (c + 1) * grain));
        return;
    }
    std::atomic<std::int64_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const std::int64_t c = next.fetch_add(1);
            if (c >= chunks) return;
            try {
                fn(static_cast<std::size_t>(c), c * grain, std::min(n, (c + 1) * grain));
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads) - 1);
    for (int t = 0; t < threads - 1; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

void parallel_chunks(std::int64_t n, std::int64_t grain,
                     const std::function<void(std::int64_t, std::int64_t)>& fn) {
    parallel_chunks_indexed(n, grain, [&](std::size_t, std::int64_t b, std::int64_t e) { fn(b, e); });
}

}  // namespace volray
