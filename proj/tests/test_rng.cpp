#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "dtsurv/rng.hpp"

using namespace dtsurv;

TEST_SUITE("rng") {

TEST_CASE("same seed gives the same sequence") {
    RandomStream a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());
    RandomStream c(123), d(124);
    bool all_equal = true;
    for (int i = 0; i < 20; ++i)
        if (c.uniform() != d.uniform()) all_equal = false;
    CHECK_FALSE(all_equal);
}

TEST_CASE("uniform is the top 53 bits of the raw engine") {
    std::mt19937_64 engine(42);
    RandomStream rng(42);
    for (int i = 0; i < 50; ++i) {
        const double expect =
            static_cast<double>(engine() >> 11) * 0x1.0p-53;
        CHECK(rng.uniform() == expect);
    }
}

TEST_CASE("uniform range and moments") {
    RandomStream rng(7);
    double sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(std::abs(sum / n - 0.5) < 0.01);
}

TEST_CASE("uniform(lo, hi) is an affine map of uniform()") {
    RandomStream a(9), b(9);
    for (int i = 0; i < 20; ++i) {
        const double u = a.uniform();
        CHECK(b.uniform(-2.0, 3.0) == -2.0 + 5.0 * u);
    }
}

TEST_CASE("uniform_int stays in range and covers all buckets") {
    RandomStream rng(11);
    std::vector<int> counts(4, 0);
    for (int i = 0; i < 4000; ++i) {
        const auto v = rng.uniform_int(4);
        REQUIRE(v < 4);
        counts[static_cast<std::size_t>(v)] += 1;
    }
    for (int c : counts) {
        CHECK(c > 800);
        CHECK(c < 1200);
    }
    for (int i = 0; i < 50; ++i) CHECK(rng.uniform_int(1) == 0);
    CHECK_THROWS_AS(rng.uniform_int(0), std::invalid_argument);
}

TEST_CASE("normal matches the documented Box-Muller expression") {
    RandomStream raw(55), rng(55);
    for (int i = 0; i < 50; ++i) {
        const double u1 = 1.0 - raw.uniform();
        const double u2 = raw.uniform();
        const double expect = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
        CHECK(rng.normal() == expect);
    }
}

TEST_CASE("normal moments are near standard") {
    RandomStream rng(17);
    const int n = 20000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        sum += z;
        sum2 += z * z;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.03);
    CHECK(std::abs(var - 1.0) < 0.05);
    RandomStream a(17), b(17);
    CHECK(a.normal(3.0, 2.0) == 3.0 + 2.0 * b.normal());
}

TEST_CASE("exponential and weibull are inverse-CDF transforms of uniform") {
    RandomStream raw(31), e(31), w(31);
    for (int i = 0; i < 30; ++i) {
        const double u = raw.uniform();
        CHECK(e.exponential(2.5) == -2.5 * std::log(1.0 - u));
        CHECK(w.weibull(2.0, 1.5) == 1.5 * std::pow(-std::log(1.0 - u), 0.5));
    }
    RandomStream rng(32);
    double sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) sum += rng.exponential();
    CHECK(std::abs(sum / n - 1.0) < 0.05);
    CHECK_THROWS_AS(rng.weibull(0.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(rng.weibull(1.0, -1.0), std::invalid_argument);
}

TEST_CASE("weibull with shape 1 equals exponential with the scale as mean") {
    RandomStream a(77), b(77);
    for (int i = 0; i < 20; ++i)
        CHECK(a.weibull(1.0, 0.1) == doctest::Approx(b.exponential(0.1)).epsilon(1e-12));
}

TEST_CASE("bernoulli frequency tracks p") {
    RandomStream rng(3);
    int hits = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) hits += rng.bernoulli(0.3) ? 1 : 0;
    CHECK(std::abs(hits / static_cast<double>(n) - 0.3) < 0.02);
}

TEST_CASE("shuffle permutes and is deterministic") {
    std::vector<int> v(10);
    std::iota(v.begin(), v.end(), 0);
    RandomStream a(5);
    a.shuffle(v);
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> expect(10);
    std::iota(expect.begin(), expect.end(), 0);
    CHECK(sorted == expect);

    std::vector<int> w(10);
    std::iota(w.begin(), w.end(), 0);
    RandomStream b(5);
    b.shuffle(w);
    CHECK(v == w);

    std::vector<int> one{42};
    RandomStream c(5);
    c.shuffle(one);
    CHECK(one == std::vector<int>{42});
}

TEST_CASE("shuffle follows the descending Fisher-Yates convention") {
    // Replay the documented algorithm with an identically seeded stream.
    std::vector<int> v{0, 1, 2, 3, 4, 5};
    RandomStream a(91);
    a.shuffle(v);

    std::vector<int> w{0, 1, 2, 3, 4, 5};
    RandomStream b(91);
    for (std::size_t i = w.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(b.uniform_int(i));
        std::swap(w[i - 1], w[j]);
    }
    CHECK(v == w);
}

TEST_CASE("substream seeds are stable and distinct") {
    const auto s1 = substream_seed(0, "init");
    CHECK(s1 == substream_seed(0, "init"));
    CHECK(substream_seed(0, "init", 0) == s1);
    CHECK(s1 != substream_seed(0, "init", 1));
    CHECK(s1 != substream_seed(0, "noise"));
    CHECK(s1 != substream_seed(1, "init"));

    // Distinct labels should give streams that do not track each other.
    RandomStream a(substream_seed(7, "epoch_shuffle", 3));
    RandomStream b(substream_seed(7, "dropout", 3));
    int equal = 0;
    for (int i = 0; i < 50; ++i)
        if (a.bits() == b.bits()) equal += 1;
    CHECK(equal == 0);
}

}  // TEST_SUITE
