#include "dtsurv/km.hpp"

#include <algorithm>
#include <string>

#include "dtsurv/errors.hpp"

namespace dtsurv {

namespace {

void check_curve_point(const KmCurve& km, int t, const char* who) {
    if (t < 0 || t >= static_cast<int>(km.values.size()))
        throw RangeError(std::string(who) + ": time " + std::to_string(t) +
                         " off the fitted grid");
}

}  // namespace

KmCurve km_fit(const std::vector<Outcome>& labels, const TimeGrid& grid) {
    if (labels.empty()) throw ValidationError("km_fit: empty dataset");
    const int n = grid.size();
    std::vector<int> events(static_cast<std::size_t>(n), 0);
    std::vector<int> leaving(static_cast<std::size_t>(n), 0);
    for (const auto& o : labels) {
        if (o.time < 0 || o.time >= n)
            throw RangeError("km_fit: label time off the grid");
        if (o.event) events[static_cast<std::size_t>(o.time)] += 1;
        leaving[static_cast<std::size_t>(o.time)] += 1;
    }
    KmCurve km;
    km.values.resize(static_cast<std::size_t>(n));
    double s = 1.0;
    long at_risk = static_cast<long>(labels.size());
    for (int t = 0; t < n; ++t) {
        const int d = events[static_cast<std::size_t>(t)];
        if (d > 0) s *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
        km.values[static_cast<std::size_t>(t)] = s;
        at_risk -= leaving[static_cast<std::size_t>(t)];
    }
    return km;
}

KmCurve km_fit(const Dataset& train) { return km_fit(outcomes(train), train.grid); }

double margin_time(const KmCurve& km, int censor_time, const TimeGrid& grid) {
    if (static_cast<int>(km.values.size()) != grid.size())
        throw ValidationError("margin_time: curve length does not match grid");
    check_curve_point(km, censor_time, "margin_time");
    const double s_at = km.values[static_cast<std::size_t>(censor_time)];
    if (s_at <= 0.0)
        throw DegenerateTailError("margin_time: S_km(" + std::to_string(censor_time) +
                                  ") = 0");
    double tail = 0.0;
    for (int t = censor_time; t < grid.t_max; ++t)
        tail += km.values[static_cast<std::size_t>(t)];
    const double e_m = static_cast<double>(censor_time) + tail / s_at;
    return std::clamp(e_m, static_cast<double>(censor_time),
                      static_cast<double>(grid.t_max));
}

double margin_time_or_censor(const KmCurve& km, int censor_time, const TimeGrid& grid) {
    try {
        return margin_time(km, censor_time, grid);
    } catch (const DegenerateTailError&) {
        return static_cast<double>(censor_time);
    }
}

double censor_weight(const KmCurve& km, int censor_time) {
    check_curve_point(km, censor_time, "censor_weight");
    return std::clamp(1.0 - km.values[static_cast<std::size_t>(censor_time)], 0.0, 1.0);
}

}  // namespace dtsurv
