#include "sidrec/util.hpp"

#include <atomic>
#include <cstdlib>

namespace sidrec {

size_t worker_count() {
    if (const char* env = std::getenv("SIDREC_THREADS")) {
        long v = std::atol(env);
        if (v >= 1) return size_t(v);
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : hc;
}

void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
    size_t workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> failed{0};
    std::string first_error;
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
            // strided static partition
            for (size_t i = w; i < n; i += workers) {
                try {
                    fn(i);
                } catch (const std::exception& e) {
                    if (failed.fetch_add(1) == 0) first_error = e.what();
                    return;
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    if (failed.load() != 0) throw Error("parallel_for worker failed: " + first_error);
}

}  // namespace sidrec
