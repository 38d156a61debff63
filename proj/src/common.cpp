#include "prevmap/common.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace prevmap {

std::string_view to_string(Urbanicity u) {
    return u == Urbanicity::urban ? "urban" : "rural";
}

std::string_view to_string(Level level) {
    return level == Level::admin1 ? "admin1" : "admin2";
}

Level parse_level(std::string_view text) {
    if (text == "admin1") {
        return Level::admin1;
    }
    if (text == "admin2") {
        return Level::admin2;
    }
    throw ConfigError("unknown level '" + std::string(text) + "' (expected admin1 or admin2)");
}

double standard_normal(Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    return dist(rng);
}

double uniform01(Rng& rng) {
    // 53 random bits mapped to the open interval.
    const std::uint64_t bits = rng() >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

int thread_count() {
    if (const char* env = std::getenv("PREVMAP_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) {
            return n;
        }
    }
    return 1;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, int threads) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) {
                        error = std::current_exception();
                    }
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

}  // namespace prevmap
