#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace nexp {

namespace detail {
inline std::atomic<unsigned>& thread_cap() {
    static std::atomic<unsigned> cap{1};
    return cap;
}
}  // namespace detail

/// Global cap on worker threads (the CLI's --threads). 0 means hardware concurrency.
inline void set_thread_cap(unsigned n) {
    if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
    detail::thread_cap().store(n);
}

inline unsigned thread_cap() { return detail::thread_cap().load(); }

/// Runs body(begin, end) over fixed contiguous chunks of [0, n). Each index is
/// owned by exactly one chunk and bodies only write index-local data, so the
/// result does not depend on the thread count.
template <class Body>
void parallel_for(std::size_t n, Body&& body, std::size_t min_chunk = 1024) {
    const unsigned cap = thread_cap();
    const std::size_t chunks = std::min<std::size_t>(cap, (n + min_chunk - 1) / std::max<std::size_t>(min_chunk, 1));
    if (chunks <= 1) {
        if (n) body(std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(chunks);
    const std::size_t per = (n + chunks - 1) / chunks;
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t b = c * per;
        const std::size_t e = std::min(n, b + per);
        if (b >= e) break;
        pool.emplace_back([&, c, b, e] {
            try {
                body(b, e);
            } catch (...) {
                errors[c] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    // lowest chunk wins so the reported error is deterministic
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace nexp
