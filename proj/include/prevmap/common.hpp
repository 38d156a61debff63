#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace prevmap {

// Error taxonomy. The CLI maps each family onto an exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or CLI usage (exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed or insufficient input data (exit code 3).
class DataError : public Error {
public:
    using Error::Error;
};

/// Numerical failure inside an estimation routine (exit code 4).
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Out-of-domain argument to a numerical function.
class ParameterError : public Error {
public:
    using Error::Error;
};

enum class Urbanicity { urban, rural };
enum class Level { admin1, admin2 };

std::string_view to_string(Urbanicity u);
std::string_view to_string(Level level);
Level parse_level(std::string_view text);

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

template <typename Scalar>
Scalar logit(Scalar p) {
    using std::log;
    return log(p / (Scalar(1) - p));
}

template <typename Scalar>
Scalar expit(Scalar x) {
    using std::exp;
    if (x >= Scalar(0)) {
        return Scalar(1) / (Scalar(1) + exp(-x));
    }
    const Scalar e = exp(x);
    return e / (Scalar(1) + e);
}

/// log(expit(x)) without cancellation for large |x|.
template <typename Scalar>
Scalar log_expit(Scalar x) {
    using std::exp;
    using std::log1p;
    if (x >= Scalar(0)) {
        return -log1p(exp(-x));
    }
    return x - log1p(exp(x));
}

/// Collects non-fatal conditions raised while processing data.
class Warnings {
public:
    void add(std::string message) { messages_.push_back(std::move(message)); }
    const std::vector<std::string>& messages() const { return messages_; }
    bool empty() const { return messages_.empty(); }
    std::size_t size() const { return messages_.size(); }
    void append(const Warnings& other) {
        messages_.insert(messages_.end(), other.messages_.begin(), other.messages_.end());
    }

private:
    std::vector<std::string> messages_;
};

// splitmix64 finalizer; used to derive independent named seed streams.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for the substream `name` of a root seed (FNV-1a over the name, then mixed).
inline std::uint64_t substream_seed(std::uint64_t root, std::string_view name) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return mix_seed(root ^ mix_seed(h));
}

inline std::uint64_t substream_seed(std::uint64_t root, std::uint64_t index) {
    return mix_seed(root ^ mix_seed(index + 0x632be59bd9b4e019ULL));
}

using Rng = std::mt19937_64;

double standard_normal(Rng& rng);
/// Uniform on (0, 1), never returning 0 or 1.
double uniform01(Rng& rng);

/// Number of worker threads, from PREVMAP_THREADS (default 1).
int thread_count();

/// Runs fn(0..n-1) on up to `threads` workers; the first exception is rethrown after joining.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  int threads = thread_count());

}  // namespace prevmap
