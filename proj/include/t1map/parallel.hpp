#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace t1map {

/// Fixed-size chunking makes parallel reductions deterministic: workers
/// process whole chunks, the caller combines per-chunk results in chunk
/// order, so any thread count (including 1) produces identical output.
constexpr int kChunkSize = 16;

inline int chunk_count(int items, int chunk = kChunkSize) {
    return items <= 0 ? 0 : (items + chunk - 1) / chunk;
}

/// Run fn(chunk_index, begin, end) over [0, items) split into fixed
/// chunks. Exceptions from workers are rethrown on the calling thread.
inline void parallel_chunks(int items, int threads,
                            const std::function<void(int, int, int)>& fn,
                            int chunk = kChunkSize) {
    const int nchunks = chunk_count(items, chunk);
    if (nchunks == 0) return;
    threads = std::max(1, std::min(threads, nchunks));
    if (threads == 1) {
        for (int ci = 0; ci < nchunks; ++ci)
            fn(ci, ci * chunk, std::min(items, (ci + 1) * chunk));
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const int ci = next.fetch_add(1);
            if (ci >= nchunks) return;
            try {
                fn(ci, ci * chunk, std::min(items, (ci + 1) * chunk));
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

inline int hardware_threads() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

} // namespace t1map
