#pragma once

// Template definitions for montecarlo.hpp.

#include <algorithm>
#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

namespace dnd {

template <class Acc>
Acc chunked_reduce(std::uint64_t count, unsigned workers, const std::function<Acc()>& make,
                   const std::function<void(Acc&, std::uint64_t, std::uint64_t)>& process,
                   const std::function<void(Acc&, Acc&&)>& merge) {
    const std::uint64_t chunks = (count + kChunkPaths - 1) / kChunkPaths;
    Acc total = make();
    if (chunks == 0) return total;
    const auto threads = static_cast<unsigned>(std::clamp<std::uint64_t>(workers, 1, chunks));

    std::atomic<std::uint64_t> next{0};
    std::mutex lock;
    std::map<std::uint64_t, Acc> pending;
    std::uint64_t merged = 0;
    std::exception_ptr error;

    auto work = [&] {
        for (;;) {
            const std::uint64_t c = next.fetch_add(1);
            if (c >= chunks) return;
            Acc acc = make();
            try {
                process(acc, c * kChunkPaths, std::min(count, (c + 1) * kChunkPaths));
            } catch (...) {
                std::lock_guard guard(lock);
                if (!error) error = std::current_exception();
                next.store(chunks);
                return;
            }
            std::lock_guard guard(lock);
            pending.emplace(c, std::move(acc));
            // Merge whatever is contiguous with the already merged prefix.
            for (auto it = pending.find(merged); it != pending.end(); it = pending.find(merged)) {
                merge(total, std::move(it->second));
                pending.erase(it);
                ++merged;
            }
        }
    };

    if (threads == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (unsigned i = 0; i < threads; ++i) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);
    return total;
}

}  // namespace dnd
