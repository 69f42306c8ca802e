#include <doctest.h>

#include <cmath>
#include <vector>

#include "dtsurv/errors.hpp"
#include "dtsurv/km.hpp"
#include "dtsurv/rng.hpp"
#include "helpers.hpp"

using namespace dtsurv;

namespace {

// Direct product-limit definition, recounting the risk set from scratch at
// every grid point. Independent of the incremental implementation under test.
KmCurve km_oracle(const std::vector<Outcome>& labels, const TimeGrid& grid) {
    KmCurve km;
    km.values.resize(static_cast<std::size_t>(grid.size()));
    double prod = 1.0;
    for (int t = 0; t <= grid.t_max; ++t) {
        long at_risk = 0, events = 0;
        for (const auto& o : labels) {
            if (o.time >= t) at_risk += 1;
            if (o.time == t && o.event) events += 1;
        }
        if (events > 0)
            prod *= 1.0 - static_cast<double>(events) / static_cast<double>(at_risk);
        km.values[static_cast<std::size_t>(t)] = prod;
    }
    return km;
}

}  // namespace

TEST_SUITE("km") {

TEST_CASE("two uncensored events split the curve in half") {
    std::vector<Outcome> labels{{1, true}, {2, true}};
    auto km = km_fit(labels, TimeGrid{2});
    REQUIRE(km.values.size() == 3);
    CHECK(km.values[0] == 1.0);
    CHECK(km.values[1] == 0.5);
    CHECK(km.values[2] == 0.0);
}

TEST_CASE("a censored subject shrinks the later risk set") {
    std::vector<Outcome> labels{{1, true}, {1, false}, {2, true}};
    auto km = km_fit(labels, TimeGrid{2});
    CHECK(km.values[0] == 1.0);
    CHECK(km.values[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(km.values[2] == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("no events leaves the curve at one; mass events drop it to zero") {
    std::vector<Outcome> censored{{3, false}, {5, false}};
    auto flat = km_fit(censored, TimeGrid{6});
    for (double v : flat.values) CHECK(v == 1.0);

    std::vector<Outcome> all_zero{{0, true}, {0, true}};
    auto drop = km_fit(all_zero, TimeGrid{3});
    CHECK(drop.values[0] == 0.0);
    CHECK(drop.values[3] == 0.0);
}

TEST_CASE("matches the brute-force product-limit oracle") {
    RandomStream rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        const int t_max = 1 + static_cast<int>(rng.uniform_int(12));
        const int n = 1 + static_cast<int>(rng.uniform_int(20));
        auto labels = testutil::random_outcomes(rng, n, t_max);
        auto km = km_fit(labels, TimeGrid{t_max});
        auto oracle = km_oracle(labels, TimeGrid{t_max});
        REQUIRE(km.values.size() == oracle.values.size());
        for (std::size_t j = 0; j < km.values.size(); ++j)
            CHECK(std::abs(km.values[j] - oracle.values[j]) < 1e-12);
    }
}

TEST_CASE("dataset overload agrees with the outcome overload") {
    auto ds = testutil::toy_static_dataset(40, 10, 2, 12);
    auto a = km_fit(ds);
    auto b = km_fit(outcomes(ds), ds.grid);
    REQUIRE(a.values.size() == b.values.size());
    for (std::size_t j = 0; j < a.values.size(); ++j)
        CHECK(a.values[j] == b.values[j]);
}

TEST_CASE("margin time on a flat curve runs to the horizon") {
    KmCurve flat;
    flat.values.assign(11, 1.0);  // t_max = 10, nobody ever fails
    CHECK(margin_time(flat, 3, TimeGrid{10}) == 10.0);
    CHECK(margin_time(flat, 0, TimeGrid{10}) == 10.0);
}

TEST_CASE("margin time at the horizon is the horizon") {
    KmCurve km;
    km.values = {1.0, 0.5, 0.25};
    CHECK(margin_time(km, 2, TimeGrid{2}) == 2.0);
}

TEST_CASE("margin time worked example: halving curve") {
    KmCurve km;
    km.values = {1.0, 0.5, 0.25};
    // e = 1 + S(1)/S(1) over the single interior step: 1 + 0.5/0.5 = 2.
    CHECK(margin_time(km, 1, TimeGrid{2}) == 2.0);
}

TEST_CASE("degenerate tail throws; the _or_censor variant returns T") {
    KmCurve km;
    km.values = {1.0, 0.5, 0.0, 0.0};
    CHECK_THROWS_AS(margin_time(km, 2, TimeGrid{3}), DegenerateTailError);
    CHECK(margin_time_or_censor(km, 2, TimeGrid{3}) == 2.0);
    CHECK(margin_time_or_censor(km, 1, TimeGrid{3}) ==
          margin_time(km, 1, TimeGrid{3}));
}

TEST_CASE("margin time stays inside [T, t_max] on random curves") {
    RandomStream rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        const int t_max = 1 + static_cast<int>(rng.uniform_int(15));
        const int n = 2 + static_cast<int>(rng.uniform_int(20));
        auto labels = testutil::random_outcomes(rng, n, t_max);
        auto km = km_fit(labels, TimeGrid{t_max});
        for (int T = 0; T <= t_max; ++T) {
            const double e = margin_time_or_censor(km, T, TimeGrid{t_max});
            CHECK(e >= static_cast<double>(T));
            CHECK(e <= static_cast<double>(t_max));
        }
    }
}

TEST_CASE("margin time matches a directly coded step-curve integral") {
    RandomStream rng(78);
    for (int trial = 0; trial < 100; ++trial) {
        const int t_max = 2 + static_cast<int>(rng.uniform_int(10));
        auto labels = testutil::random_outcomes(rng, 15, t_max);
        auto km = km_fit(labels, TimeGrid{t_max});
        for (int T = 0; T < t_max; ++T) {
            const double sT = km.values[static_cast<std::size_t>(T)];
            if (sT <= 0.0) continue;
            double tail = 0.0;
            for (int t = T; t <= t_max - 1; ++t)
                tail += km.values[static_cast<std::size_t>(t)];
            double expect = static_cast<double>(T) + tail / sT;
            expect = std::min(expect, static_cast<double>(t_max));
            CHECK(margin_time(km, T, TimeGrid{t_max}) ==
                  doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("censor weight is one minus the curve and nondecreasing") {
    KmCurve km;
    km.values = {1.0, 0.75, 0.5, 0.5, 0.1};
    CHECK(censor_weight(km, 0) == 0.0);
    CHECK(censor_weight(km, 1) == 0.25);
    CHECK(censor_weight(km, 2) == 0.5);
    CHECK(censor_weight(km, 3) == 0.5);
    CHECK(censor_weight(km, 4) == doctest::Approx(0.9).epsilon(1e-15));
    for (int t = 1; t < 5; ++t)
        CHECK(censor_weight(km, t) >= censor_weight(km, t - 1));
}

TEST_CASE("margin time rejects censor times off the grid") {
    KmCurve km;
    km.values = {1.0, 0.5, 0.25};
    CHECK_THROWS_AS(margin_time(km, -1, TimeGrid{2}), RangeError);
    CHECK_THROWS_AS(margin_time(km, 3, TimeGrid{2}), RangeError);
}

}  // TEST_SUITE
