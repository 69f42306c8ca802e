#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace dtsurv {

// Deterministic random stream. Distribution values are derived from raw
// mt19937_64 output by fixed arithmetic, never through std::*_distribution,
// so sequences are bit-identical across compilers and standard libraries.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t bits() { return gen_(); }

    // Uniform on [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform on {0, ..., n - 1}; n must be positive.
    std::uint64_t uniform_int(std::uint64_t n);

    // Standard normal via Box-Muller; consumes two raw draws per call.
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Exponential with the given mean.
    double exponential(double mean = 1.0);

    // Weibull with shape `a` and scale `b`.
    double weibull(double a, double b);

    bool bernoulli(double p) { return uniform() < p; }

    // Fisher-Yates shuffle, highest index first.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
};

// Stable seed for a named substream of a master seed. Streams with distinct
// (label, index) pairs are statistically independent; the mapping never
// changes between runs or platforms.
std::uint64_t substream_seed(std::uint64_t master, std::string_view label,
                             std::uint64_t index = 0);

}  // namespace dtsurv
