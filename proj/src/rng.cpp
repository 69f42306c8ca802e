#include "dtsurv/rng.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dtsurv {

std::uint64_t RandomStream::uniform_int(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
    // Rejection sampling over the largest multiple of n below 2^64 avoids
    // modulo bias.
    const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
    const std::uint64_t limit = max - max % n;
    std::uint64_t x;
    do {
        x = gen_();
    } while (x >= limit);
    return x % n;
}

double RandomStream::normal() {
    // 1 - uniform() lies in (0, 1], keeping the log argument positive.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * M_PI * u2);
}

double RandomStream::exponential(double mean) {
    return -mean * std::log(1.0 - uniform());
}

double RandomStream::weibull(double a, double b) {
    if (a <= 0.0 || b <= 0.0)
        throw std::invalid_argument("weibull: shape and scale must be positive");
    return b * std::pow(-std::log(1.0 - uniform()), 1.0 / a);
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace

std::uint64_t substream_seed(std::uint64_t master, std::string_view label,
                             std::uint64_t index) {
    std::uint64_t s = splitmix64(master ^ fnv1a(label));
    return splitmix64(s + index * 0x9E3779B97F4A7C15ULL);
}

}  // namespace dtsurv
