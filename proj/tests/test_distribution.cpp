#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dtsurv/distribution.hpp"
#include "dtsurv/errors.hpp"
#include "dtsurv/rng.hpp"
#include "helpers.hpp"

using namespace dtsurv;

TEST_SUITE("distribution") {

TEST_CASE("uniform over {0..4}: survival, mean, and variance") {
    DiscreteDistribution d{{0.2, 0.2, 0.2, 0.2, 0.2}};
    validate_distribution(d);
    CHECK(d.t_max() == 4);
    auto s = survival(d);
    REQUIRE(s.values.size() == 5);
    CHECK(s.values[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.values[1] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(s.values[2] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(s.values[3] == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(s.values[4] == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(mean_lifetime(d) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(variance(d) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(cdf(d, 0) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(cdf(d, 4) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("point mass: zero variance, exact mean, step survival") {
    DiscreteDistribution d{{0.0, 0.0, 0.0, 1.0, 0.0, 0.0}};
    CHECK(mean_lifetime(d) == 3.0);
    CHECK(variance(d) == 0.0);
    auto s = survival(d);
    for (int j = 0; j <= 3; ++j) CHECK(s.values[static_cast<std::size_t>(j)] == 1.0);
    CHECK(s.values[4] == 0.0);
    CHECK(s.values[5] == 0.0);
    CHECK(cdf(d, 2) == 0.0);
    CHECK(cdf(d, 3) == 1.0);
}

TEST_CASE("survival sums to mean plus one on random distributions") {
    RandomStream rng(101);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + static_cast<int>(rng.uniform_int(40));
        DiscreteDistribution d{testutil::random_simplex(rng, n)};
        auto s = survival(d);
        const double total = std::accumulate(s.values.begin(), s.values.end(), 0.0);
        CHECK(std::abs(total - (mean_lifetime(d) + 1.0)) < 1e-9);
        // Survival is non-increasing and starts at the total mass.
        CHECK(s.values[0] == doctest::Approx(1.0).epsilon(1e-12));
        for (std::size_t j = 1; j < s.values.size(); ++j)
            CHECK(s.values[j] <= s.values[j - 1] + 1e-12);
    }
}

TEST_CASE("cdf and survival overlap at exactly the point mass") {
    RandomStream rng(102);
    for (int trial = 0; trial < 50; ++trial) {
        DiscreteDistribution d{testutil::random_simplex(rng, 12)};
        auto s = survival(d);
        for (int j = 0; j <= d.t_max(); ++j)
            CHECK(cdf(d, j) + s.values[static_cast<std::size_t>(j)] ==
                  doctest::Approx(1.0 + d.probs[static_cast<std::size_t>(j)]).epsilon(1e-12));
    }
}

TEST_CASE("variance equals the second-moment form") {
    RandomStream rng(103);
    for (int trial = 0; trial < 50; ++trial) {
        DiscreteDistribution d{testutil::random_simplex(rng, 20)};
        const double mu = mean_lifetime(d);
        double m2 = 0.0;
        for (int t = 0; t <= d.t_max(); ++t)
            m2 += d.probs[static_cast<std::size_t>(t)] * t * t;
        CHECK(std::abs(variance(d) - (m2 - mu * mu)) < 1e-9);
    }
}

TEST_CASE("validation rejects malformed distributions") {
    CHECK_THROWS_AS(validate_distribution(DiscreteDistribution{{}}), ValidationError);
    CHECK_THROWS_AS(validate_distribution(DiscreteDistribution{{0.5, -0.1, 0.6}}),
                    ValidationError);
    CHECK_THROWS_AS(validate_distribution(DiscreteDistribution{{0.5, 0.4}}),
                    ValidationError);
    CHECK_NOTHROW(validate_distribution(DiscreteDistribution{{0.5, 0.5000001}}, 1e-6));
    CHECK_THROWS_AS(validate_distribution(DiscreteDistribution{{0.5, 0.51}}, 1e-6),
                    ValidationError);
    CHECK_THROWS_AS(
        validate_distribution(DiscreteDistribution{{0.5, std::nan("")}}),
        ValidationError);
}

TEST_CASE("cdf rejects indices off the grid") {
    DiscreteDistribution d{{0.5, 0.5}};
    CHECK_THROWS_AS(cdf(d, -1), RangeError);
    CHECK_THROWS_AS(cdf(d, 2), RangeError);
}

}  // TEST_SUITE
